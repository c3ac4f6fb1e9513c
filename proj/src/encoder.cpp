#include "pagectx/encoder.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "pagectx/error.hpp"
#include "pagectx/random.hpp"

namespace pagectx {

using nlohmann::json;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

InputVocabulary::InputVocabulary(Vocabulary text, std::size_t n_classes) : text_(std::move(text)), n_classes_(n_classes) {
  if (n_classes_ < 2) throw Error("input vocabulary needs at least 2 classes");
}

TokenId InputVocabulary::class_token(std::size_t c) const {
  if (c >= n_classes_) throw Error("class index out of range");
  return static_cast<TokenId>(kFirstClassToken + c);
}

TokenId InputVocabulary::text_token(std::string_view token) const {
  const auto id = text_.id(token);
  return id == text_.size() ? kUnk : static_cast<TokenId>(text_offset() + id);
}

std::string InputVocabulary::token_string(TokenId id) const {
  switch (id) {
    case kPad: return "[PAD]";
    case kUnk: return "[UNK]";
    case kCls: return "[CLS]";
    case kFirstPage: return std::string(TypeVocabulary::first_page_token);
    default: break;
  }
  if (id < text_offset()) return "[type_" + std::to_string(id - kFirstClassToken + 1) + "]";
  return text_.token(id - text_offset());
}

std::string_view to_string(EncoderVariant v) { return v == EncoderVariant::linear ? "linear" : "tiny-transformer"; }

EncoderVariant parse_encoder_variant(std::string_view s) {
  if (s == "linear") return EncoderVariant::linear;
  if (s == "tiny-transformer") return EncoderVariant::tiny_transformer;
  throw FormatError("encoder.variant: expected \"linear\" or \"tiny-transformer\", got \"" + std::string(s) + "\"");
}

void EncoderConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw FormatError("encoder." + field + ": " + why); };
  if (n_classes < 2) fail("n_classes", "must be at least 2");
  if (vocab_size < InputVocabulary::kFirstClassToken + n_classes)
    fail("vocab_size", "smaller than the reserved and page-type ids");
  if (d_model < 1) fail("d_model", "must be positive");
  if (max_len < n_classes + 2) fail("max_len", "must leave room for CLS and every page-type token");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout", "must lie in [0, 1)");
  if (variant == EncoderVariant::tiny_transformer) {
    if (n_layers < 1) fail("n_layers", "must be positive");
    if (n_heads < 1 || d_model % n_heads != 0) fail("n_heads", "must divide d_model");
    if (ff_dim < 1) fail("ff_dim", "must be positive");
  }
}

json EncoderConfig::to_json() const {
  return {{"variant", std::string(to_string(variant))},
          {"n_classes", n_classes},
          {"vocab_size", vocab_size},
          {"d_model", d_model},
          {"n_layers", n_layers},
          {"n_heads", n_heads},
          {"ff_dim", ff_dim},
          {"max_len", max_len},
          {"dropout", dropout},
          {"init_seed", init_seed}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  static const std::set<std::string> known = {"variant", "n_classes", "vocab_size", "d_model",  "n_layers",
                                               "n_heads", "ff_dim",    "max_len",    "dropout", "init_seed"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw FormatError("encoder." + key + ": unknown field");
  EncoderConfig c;
  auto field = [&](const char* name, auto& dst) {
    if (!j.contains(name)) return;
    try {
      j.at(name).get_to(dst);
    } catch (const json::exception& e) {
      throw FormatError(std::string("encoder.") + name + ": " + e.what());
    }
  };
  if (j.contains("variant")) c.variant = parse_encoder_variant(j.at("variant").get<std::string>());
  field("n_classes", c.n_classes);
  field("vocab_size", c.vocab_size);
  field("d_model", c.d_model);
  field("n_layers", c.n_layers);
  field("n_heads", c.n_heads);
  field("ff_dim", c.ff_dim);
  field("max_len", c.max_len);
  field("dropout", c.dropout);
  field("init_seed", c.init_seed);
  return c;
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kLayerNormEps = 1e-5;

std::string layer_name(std::size_t l, const char* suffix) { return "layer" + std::to_string(l) + "." + suffix; }

struct LayerNormCache {
  MatrixXd xhat;
  VectorXd rstd;
};

MatrixXd layer_norm(const MatrixXd& x, const MatrixXd& gain, const MatrixXd& bias, LayerNormCache& cache) {
  const auto rows = x.rows();
  cache.xhat.resize(rows, x.cols());
  cache.rstd.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = x.row(r).mean();
    RowVectorXd centered = x.row(r).array() - mu;
    const double var = centered.squaredNorm() / static_cast<double>(x.cols());
    cache.rstd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    cache.xhat.row(r) = centered * cache.rstd[r];
  }
  MatrixXd y = cache.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

MatrixXd layer_norm_backward(const MatrixXd& dy, const LayerNormCache& cache, const MatrixXd& gain, MatrixXd& dgain,
                             MatrixXd& dbias) {
  dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  MatrixXd dxhat = dy.array().rowwise() * gain.row(0).array();
  MatrixXd dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).mean();
    const double m2 = (dxhat.row(r).array() * cache.xhat.row(r).array()).mean();
    dx.row(r) = cache.rstd[r] * (dxhat.row(r).array() - m1 - cache.xhat.row(r).array() * m2);
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

void softmax_rows(MatrixXd& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
}

MatrixXd dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng* rng) {
  if (!rng || p <= 0.0) return {};
  MatrixXd m(rows, cols);
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng->uniform() < p ? 0.0 : keep;
  return m;
}

struct LayerCache {
  LayerNormCache ln1, ln2;
  MatrixXd a1, q, k, v, ctx, mask1, a2, hpre, hact, mask2;
  std::vector<MatrixXd> probs;
};

double log_sum_exp(const VectorXd& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

LabelSet predict(const ScoreVector& scores, LabelMode mode) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  if (mode == LabelMode::multilabel) {
    LabelSet out;
    for (Eigen::Index i = 0; i < scores.size(); ++i)
      if (sigmoid(scores[i]) >= 0.5) out.push_back(static_cast<std::size_t>(i));
    if (!out.empty()) return out;
  }
  return {static_cast<std::size_t>(best)};
}

double cross_entropy(const ScoreVector& logits, const LabelSet& gold, LabelMode mode, ScoreVector* dlogits) {
  const auto n = logits.size();
  if (mode == LabelMode::multiclass) {
    if (gold.size() != 1) throw Error("multiclass loss needs exactly one gold label");
    const auto g = static_cast<Eigen::Index>(gold.front());
    const double lse = log_sum_exp(logits);
    if (dlogits) {
      *dlogits = (logits.array() - lse).exp();
      (*dlogits)[g] -= 1.0;
    }
    return lse - logits[g];
  }
  VectorXd target = VectorXd::Zero(n);
  for (auto c : gold) target[static_cast<Eigen::Index>(c)] = 1.0;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) loss += softplus(logits[i]) - target[i] * logits[i];
  if (dlogits) {
    dlogits->resize(n);
    for (Eigen::Index i = 0; i < n; ++i) (*dlogits)[i] = (sigmoid(logits[i]) - target[i]) / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

Encoder::Encoder(EncoderConfig config) : config_(config) {
  config_.validate();
  const auto v = static_cast<Eigen::Index>(config_.vocab_size);
  const auto d = static_cast<Eigen::Index>(config_.d_model);
  const auto n = static_cast<Eigen::Index>(config_.n_classes);
  Rng rng(config_.init_seed);
  if (config_.variant == EncoderVariant::linear) {
    fill_normal(params_.add("token_embedding", v, d), 0.1, rng);
    fill_normal(params_.add("head.weight", d, n), 0.1, rng);
    params_.add("head.bias", 1, n);
    return;
  }
  const auto f = static_cast<Eigen::Index>(config_.ff_dim);
  fill_normal(params_.add("token_embedding", v, d), 0.02, rng);
  fill_normal(params_.add("position_embedding", static_cast<Eigen::Index>(config_.max_len), d), 0.02, rng);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    params_.add(layer_name(l, "ln1.gain"), 1, d).setOnes();
    params_.add(layer_name(l, "ln1.bias"), 1, d);
    const std::pair<const char*, const char*> projections[] = {
        {"attn.wq", "attn.bq"}, {"attn.wk", "attn.bk"}, {"attn.wv", "attn.bv"}, {"attn.wo", "attn.bo"}};
    for (const auto& [weight, bias] : projections) {
      fill_normal(params_.add(layer_name(l, weight), d, d), 0.02, rng);
      params_.add(layer_name(l, bias), 1, d);
    }
    params_.add(layer_name(l, "ln2.gain"), 1, d).setOnes();
    params_.add(layer_name(l, "ln2.bias"), 1, d);
    fill_normal(params_.add(layer_name(l, "ffn.w1"), d, f), 0.02, rng);
    params_.add(layer_name(l, "ffn.b1"), 1, f);
    fill_normal(params_.add(layer_name(l, "ffn.w2"), f, d), 0.02, rng);
    params_.add(layer_name(l, "ffn.b2"), 1, d);
  }
  params_.add("final_ln.gain", 1, d).setOnes();
  params_.add("final_ln.bias", 1, d);
  fill_normal(params_.add("head.weight", d, n), 0.02, rng);
  params_.add("head.bias", 1, n);
}

void Encoder::check_sequence(const TokenSequence& sequence) const {
  if (sequence.ids.empty()) throw Error("empty token sequence");
  if (sequence.ids.size() > config_.max_len)
    throw Error("token sequence of length " + std::to_string(sequence.ids.size()) + " exceeds max_len " +
                std::to_string(config_.max_len));
  for (auto id : sequence.ids)
    if (id >= config_.vocab_size) throw Error("token id " + std::to_string(id) + " outside the input vocabulary");
}

ScoreVector Encoder::forward(const TokenSequence& sequence) const {
  check_sequence(sequence);
  return config_.variant == EncoderVariant::linear ? run_linear(sequence, nullptr)
                                                   : run_transformer(sequence, nullptr, nullptr);
}

double Encoder::loss_and_grad(std::span<const LabeledSequence> examples, LabelMode mode, ParamSet& grads,
                              Rng* dropout_rng) const {
  std::vector<std::size_t> all(examples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return loss_and_grad(examples, all, mode, grads, dropout_rng);
}

double Encoder::loss_and_grad(std::span<const LabeledSequence> examples, std::span<const std::size_t> batch,
                              LabelMode mode, ParamSet& grads, Rng* dropout_rng) const {
  if (batch.empty()) throw Error("loss_and_grad needs a non-empty batch");
  if (!grads.same_layout(params_)) throw Error("gradient buffer does not match the parameter layout");
  grads.set_zero();
  const double weight = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (auto i : batch) {
    const auto& ex = examples[i];
    check_sequence(ex.input);
    Target target{&ex.gold, mode, weight, &grads};
    if (config_.variant == EncoderVariant::linear)
      run_linear(ex.input, &target);
    else
      run_transformer(ex.input, &target, dropout_rng);
    if (!std::isfinite(target.loss))
      throw DivergenceError("non-finite loss on example " + std::to_string(i), i);
    total += target.loss;
  }
  return total * weight;
}

ScoreVector Encoder::run_linear(const TokenSequence& sequence, Target* target) const {
  const auto& emb = params_.at("token_embedding");
  const auto& w = params_.at("head.weight");
  const auto& b = params_.at("head.bias");
  const double inv_len = 1.0 / static_cast<double>(sequence.size());

  RowVectorXd pooled = RowVectorXd::Zero(emb.cols());
  for (auto id : sequence.ids) pooled += emb.row(id);
  pooled *= inv_len;
  VectorXd logits = (pooled * w + b.row(0)).transpose();
  if (!target) return logits;

  VectorXd dlogits;
  target->loss = cross_entropy(logits, *target->gold, target->mode, &dlogits);
  dlogits *= target->weight;
  auto& g = *target->grads;
  g.at("head.weight") += pooled.transpose() * dlogits.transpose();
  g.at("head.bias").row(0) += dlogits.transpose();
  RowVectorXd dpooled = (w * dlogits).transpose() * inv_len;
  auto& demb = g.at("token_embedding");
  for (auto id : sequence.ids) demb.row(id) += dpooled;
  return logits;
}

ScoreVector Encoder::run_transformer(const TokenSequence& sequence, Target* target, Rng* rng) const {
  const auto seq_len = static_cast<Eigen::Index>(sequence.size());
  const auto d = static_cast<Eigen::Index>(config_.d_model);
  const auto heads = static_cast<Eigen::Index>(config_.n_heads);
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double p = config_.dropout;
  Rng* drop = target ? rng : nullptr;

  const auto& emb = params_.at("token_embedding");
  const auto& pos = params_.at("position_embedding");
  MatrixXd x(seq_len, d);
  for (Eigen::Index t = 0; t < seq_len; ++t) x.row(t) = emb.row(sequence.ids[t]) + pos.row(t);
  const MatrixXd mask0 = dropout_mask(seq_len, d, p, drop);
  if (mask0.size()) x.array() *= mask0.array();

  std::vector<LayerCache> caches(config_.n_layers);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    auto& c = caches[l];
    auto P = [&](const char* name) -> const MatrixXd& { return params_.at(layer_name(l, name)); };
    c.a1 = layer_norm(x, P("ln1.gain"), P("ln1.bias"), c.ln1);
    c.q = (c.a1 * P("attn.wq")).rowwise() + P("attn.bq").row(0);
    c.k = (c.a1 * P("attn.wk")).rowwise() + P("attn.bk").row(0);
    c.v = (c.a1 * P("attn.wv")).rowwise() + P("attn.bv").row(0);
    c.ctx.resize(seq_len, d);
    c.probs.resize(static_cast<std::size_t>(heads));
    for (Eigen::Index h = 0; h < heads; ++h) {
      MatrixXd s = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose() * scale;
      softmax_rows(s);
      c.ctx.middleCols(h * dh, dh) = s * c.v.middleCols(h * dh, dh);
      c.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    MatrixXd attn = (c.ctx * P("attn.wo")).rowwise() + P("attn.bo").row(0);
    c.mask1 = dropout_mask(seq_len, d, p, drop);
    if (c.mask1.size()) attn.array() *= c.mask1.array();
    x += attn;

    c.a2 = layer_norm(x, P("ln2.gain"), P("ln2.bias"), c.ln2);
    c.hpre = (c.a2 * P("ffn.w1")).rowwise() + P("ffn.b1").row(0);
    c.hact = c.hpre.unaryExpr([](double v) { return gelu(v); });
    MatrixXd ffn = (c.hact * P("ffn.w2")).rowwise() + P("ffn.b2").row(0);
    c.mask2 = dropout_mask(seq_len, d, p, drop);
    if (c.mask2.size()) ffn.array() *= c.mask2.array();
    x += ffn;
  }

  LayerNormCache final_cache;
  const auto& final_gain = params_.at("final_ln.gain");
  MatrixXd cls = layer_norm(x.topRows(1), final_gain, params_.at("final_ln.bias"), final_cache);
  const auto& w = params_.at("head.weight");
  VectorXd logits = (cls * w + params_.at("head.bias")).transpose();
  if (!target) return logits;

  VectorXd dlogits;
  target->loss = cross_entropy(logits, *target->gold, target->mode, &dlogits);
  dlogits *= target->weight;
  auto& g = *target->grads;
  g.at("head.weight") += cls.transpose() * dlogits.transpose();
  g.at("head.bias").row(0) += dlogits.transpose();
  MatrixXd dcls = dlogits.transpose() * w.transpose();
  MatrixXd dx = MatrixXd::Zero(seq_len, d);
  dx.topRows(1) = layer_norm_backward(dcls, final_cache, final_gain, g.at("final_ln.gain"), g.at("final_ln.bias"));

  for (std::size_t li = config_.n_layers; li-- > 0;) {
    auto& c = caches[li];
    auto P = [&](const char* name) -> const MatrixXd& { return params_.at(layer_name(li, name)); };
    auto G = [&](const char* name) -> MatrixXd& { return g.at(layer_name(li, name)); };

    // x_out = x_mid + ffn
    MatrixXd dffn = dx;
    if (c.mask2.size()) dffn.array() *= c.mask2.array();
    G("ffn.w2") += c.hact.transpose() * dffn;
    G("ffn.b2").row(0) += dffn.colwise().sum();
    MatrixXd dh_pre = (dffn * P("ffn.w2").transpose()).cwiseProduct(c.hpre.unaryExpr([](double v) { return gelu_grad(v); }));
    G("ffn.w1") += c.a2.transpose() * dh_pre;
    G("ffn.b1").row(0) += dh_pre.colwise().sum();
    MatrixXd da2 = dh_pre * P("ffn.w1").transpose();
    dx += layer_norm_backward(da2, c.ln2, P("ln2.gain"), G("ln2.gain"), G("ln2.bias"));

    // x_mid = x_in + attn
    MatrixXd dattn = dx;
    if (c.mask1.size()) dattn.array() *= c.mask1.array();
    G("attn.wo") += c.ctx.transpose() * dattn;
    G("attn.bo").row(0) += dattn.colwise().sum();
    MatrixXd dctx = dattn * P("attn.wo").transpose();
    MatrixXd dq(seq_len, d), dk(seq_len, d), dv(seq_len, d);
    for (Eigen::Index h = 0; h < heads; ++h) {
      const auto& probs = c.probs[static_cast<std::size_t>(h)];
      auto dout = dctx.middleCols(h * dh, dh);
      MatrixXd dprobs = dout * c.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = probs.transpose() * dout;
      VectorXd row_dot = (dprobs.array() * probs.array()).rowwise().sum();
      MatrixXd dscores = probs.array() * (dprobs.colwise() - row_dot).array();
      dq.middleCols(h * dh, dh) = dscores * c.k.middleCols(h * dh, dh) * scale;
      dk.middleCols(h * dh, dh) = dscores.transpose() * c.q.middleCols(h * dh, dh) * scale;
    }
    G("attn.wq") += c.a1.transpose() * dq;
    G("attn.bq").row(0) += dq.colwise().sum();
    G("attn.wk") += c.a1.transpose() * dk;
    G("attn.bk").row(0) += dk.colwise().sum();
    G("attn.wv") += c.a1.transpose() * dv;
    G("attn.bv").row(0) += dv.colwise().sum();
    MatrixXd da1 = dq * P("attn.wq").transpose() + dk * P("attn.wk").transpose() + dv * P("attn.wv").transpose();
    dx += layer_norm_backward(da1, c.ln1, P("ln1.gain"), G("ln1.gain"), G("ln1.bias"));
  }

  if (mask0.size()) dx.array() *= mask0.array();
  auto& demb = g.at("token_embedding");
  auto& dpos = g.at("position_embedding");
  for (Eigen::Index t = 0; t < seq_len; ++t) {
    demb.row(sequence.ids[t]) += dx.row(t);
    dpos.row(t) += dx.row(t);
  }
  return logits;
}

}  // namespace pagectx
