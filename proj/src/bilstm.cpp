#include "pagectx/bilstm.hpp"

#include <cmath>
#include <set>

#include "pagectx/error.hpp"
#include "pagectx/random.hpp"
#include "pagectx/recurrence.hpp"

namespace pagectx {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

void BiLstmConfig::validate() const {
  if (input_dim < 1) throw FormatError("input_dim: must be at least 1");
  if (hidden < 1) throw FormatError("hidden: must be at least 1");
  if (n_classes < 2) throw FormatError("n_classes: must be at least 2");
}

json BiLstmConfig::to_json() const {
  return {{"input_dim", input_dim}, {"hidden", hidden}, {"n_classes", n_classes}, {"init_seed", init_seed}};
}

BiLstmConfig BiLstmConfig::from_json(const json& j, const std::string& prefix) {
  static const std::set<std::string> known = {"input_dim", "hidden", "n_classes", "init_seed"};
  if (!j.is_object()) throw FormatError(prefix + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw FormatError(prefix + "." + key + ": unknown field");
  BiLstmConfig c;
  auto field = [&](const char* name, auto& dst) {
    if (!j.contains(name)) return;
    if (j.at(name).is_number_integer() && j.at(name).get<long long>() < 0)
      throw FormatError(prefix + "." + name + ": must be non-negative");
    try {
      j.at(name).get_to(dst);
    } catch (const json::exception& e) {
      throw FormatError(prefix + "." + name + ": " + e.what());
    }
  };
  field("input_dim", c.input_dim);
  field("hidden", c.hidden);
  field("n_classes", c.n_classes);
  field("init_seed", c.init_seed);
  try {
    c.validate();
  } catch (const FormatError& e) {
    throw FormatError(prefix + "." + e.what());
  }
  return c;
}

namespace {

const char* const kDirections[2] = {"fwd", "bwd"};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct StepCache {
  VectorXd x, h_prev, c_prev, i, f, g, o, c, tanh_c, h;
};

struct DirectionWeights {
  const MatrixXd& wx;
  const MatrixXd& wh;
  const MatrixXd& b;
};

// Runs one direction over `pages` in the given visiting order; caches[k]
// belongs to order[k].
std::vector<StepCache> run_direction(const DirectionWeights& w, const std::vector<PageVector>& pages,
                                     const std::vector<std::size_t>& order, std::size_t h) {
  const auto hh = static_cast<Eigen::Index>(h);
  std::vector<StepCache> caches(order.size());
  VectorXd h_prev = VectorXd::Zero(hh), c_prev = VectorXd::Zero(hh);
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& s = caches[k];
    s.x = pages[order[k]];
    s.h_prev = h_prev;
    s.c_prev = c_prev;
    const VectorXd z = w.wx * s.x + w.wh * h_prev + w.b.col(0);
    s.i = z.segment(0, hh).unaryExpr(&sigmoid);
    s.f = z.segment(hh, hh).unaryExpr(&sigmoid);
    s.g = z.segment(2 * hh, hh).array().tanh();
    s.o = z.segment(3 * hh, hh).unaryExpr(&sigmoid);
    s.c = s.f.cwiseProduct(c_prev) + s.i.cwiseProduct(s.g);
    s.tanh_c = s.c.array().tanh();
    s.h = s.o.cwiseProduct(s.tanh_c);
    h_prev = s.h;
    c_prev = s.c;
  }
  return caches;
}

// dh[k] is the loss gradient w.r.t. caches[k].h from the head only.
void backprop_direction(const DirectionWeights& w, const std::vector<StepCache>& caches,
                        const std::vector<VectorXd>& dh_head, std::size_t h, MatrixXd& dwx, MatrixXd& dwh,
                        MatrixXd& db) {
  const auto hh = static_cast<Eigen::Index>(h);
  VectorXd dh_next = VectorXd::Zero(hh), dc_next = VectorXd::Zero(hh);
  VectorXd dz(4 * hh);
  for (std::size_t k = caches.size(); k-- > 0;) {
    const auto& s = caches[k];
    const VectorXd dh = dh_head[k] + dh_next;
    const VectorXd d_o = dh.cwiseProduct(s.tanh_c);
    const VectorXd dc =
        dh.cwiseProduct(s.o).cwiseProduct((1.0 - s.tanh_c.array().square()).matrix()) + dc_next;
    dz.segment(0, hh) = dc.cwiseProduct(s.g).cwiseProduct(s.i.cwiseProduct((1.0 - s.i.array()).matrix()));
    dz.segment(hh, hh) = dc.cwiseProduct(s.c_prev).cwiseProduct(s.f.cwiseProduct((1.0 - s.f.array()).matrix()));
    dz.segment(2 * hh, hh) = dc.cwiseProduct(s.i).cwiseProduct((1.0 - s.g.array().square()).matrix());
    dz.segment(3 * hh, hh) = d_o.cwiseProduct(s.o.cwiseProduct((1.0 - s.o.array()).matrix()));
    dwx.noalias() += dz * s.x.transpose();
    dwh.noalias() += dz * s.h_prev.transpose();
    db.col(0) += dz;
    dh_next = w.wh.transpose() * dz;
    dc_next = dc.cwiseProduct(s.f);
  }
}

std::vector<std::size_t> ascending(std::size_t l) {
  std::vector<std::size_t> v(l);
  for (std::size_t t = 0; t < l; ++t) v[t] = t;
  return v;
}

std::vector<std::size_t> descending(std::size_t l) {
  std::vector<std::size_t> v(l);
  for (std::size_t t = 0; t < l; ++t) v[t] = l - 1 - t;
  return v;
}

}  // namespace

BiLstm::BiLstm(const BiLstmConfig& config) : config_(config) {
  config_.validate();
  const auto k = static_cast<Eigen::Index>(config.input_dim);
  const auto h = static_cast<Eigen::Index>(config.hidden);
  const auto n = static_cast<Eigen::Index>(config.n_classes);
  Rng rng(config.init_seed);
  const double lstm_bound = 1.0 / std::sqrt(static_cast<double>(h));
  for (const char* d : kDirections) {
    const std::string p = d;
    fill_uniform(params_.add(p + ".wx", 4 * h, k), lstm_bound, rng);
    fill_uniform(params_.add(p + ".wh", 4 * h, h), lstm_bound, rng);
    fill_uniform(params_.add(p + ".b", 4 * h, 1), lstm_bound, rng);
  }
  fill_uniform(params_.add("head.weight", n, 2 * h), 1.0 / std::sqrt(static_cast<double>(2 * h)), rng);
  params_.add("head.bias", n, 1);
}

std::vector<ScoreVector> BiLstm::forward(const std::vector<PageVector>& pages) const {
  if (pages.empty()) throw Error("BiLSTM input must have at least one page");
  for (const auto& x : pages)
    if (x.size() != static_cast<Eigen::Index>(config_.input_dim)) throw Error("BiLSTM page vector has the wrong size");
  const auto l = pages.size();
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  const auto fwd = run_direction({params_.at("fwd.wx"), params_.at("fwd.wh"), params_.at("fwd.b")}, pages,
                                 ascending(l), config_.hidden);
  const auto bwd = run_direction({params_.at("bwd.wx"), params_.at("bwd.wh"), params_.at("bwd.b")}, pages,
                                 descending(l), config_.hidden);
  const auto& w = params_.at("head.weight");
  const auto& b = params_.at("head.bias");
  std::vector<ScoreVector> out(l);
  for (std::size_t t = 0; t < l; ++t)
    out[t] = w.leftCols(h) * fwd[t].h + w.rightCols(h) * bwd[l - 1 - t].h + b.col(0);
  return out;
}

double BiLstm::loss_and_grad(std::span<const PageVectorSequence> docs, std::span<const std::size_t> batch,
                             ParamSet& grads) const {
  if (!grads.same_layout(params_)) grads = params_.zeros_like();
  grads.set_zero();
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  const DirectionWeights fw{params_.at("fwd.wx"), params_.at("fwd.wh"), params_.at("fwd.b")};
  const DirectionWeights bw{params_.at("bwd.wx"), params_.at("bwd.wh"), params_.at("bwd.b")};
  const auto& w = params_.at("head.weight");
  const auto& b = params_.at("head.bias");
  auto& gw = grads.at("head.weight");
  auto& gb = grads.at("head.bias");

  std::size_t pages_total = 0;
  for (auto d : batch) pages_total += docs[d].pages.size();
  if (pages_total == 0) throw Error("BiLSTM batch has no pages");
  const double inv = 1.0 / static_cast<double>(pages_total);

  double loss = 0.0;
  for (auto d : batch) {
    const auto& doc = docs[d];
    const auto l = doc.pages.size();
    if (doc.gold.size() != l) throw Error("BiLSTM document needs one gold label per page");
    const auto fwd = run_direction(fw, doc.pages, ascending(l), config_.hidden);
    const auto bwd = run_direction(bw, doc.pages, descending(l), config_.hidden);
    std::vector<VectorXd> dh_f(l), dh_b(l);
    for (std::size_t t = 0; t < l; ++t) {
      const auto& hf = fwd[t].h;
      const auto& hb = bwd[l - 1 - t].h;
      const VectorXd logits = w.leftCols(h) * hf + w.rightCols(h) * hb + b.col(0);
      VectorXd dlogits;
      const double ce = cross_entropy(logits, LabelSet{doc.gold[t]}, LabelMode::multiclass, &dlogits);
      if (!std::isfinite(ce)) throw DivergenceError("non-finite BiLSTM loss in document " + std::to_string(d), d);
      loss += ce;
      dlogits *= inv;
      gw.leftCols(h).noalias() += dlogits * hf.transpose();
      gw.rightCols(h).noalias() += dlogits * hb.transpose();
      gb.col(0) += dlogits;
      dh_f[t] = w.leftCols(h).transpose() * dlogits;
      dh_b[l - 1 - t] = w.rightCols(h).transpose() * dlogits;
    }
    backprop_direction(fw, fwd, dh_f, config_.hidden, grads.at("fwd.wx"), grads.at("fwd.wh"), grads.at("fwd.b"));
    backprop_direction(bw, bwd, dh_b, config_.hidden, grads.at("bwd.wx"), grads.at("bwd.wh"), grads.at("bwd.b"));
  }
  return loss * inv;
}

BiLstm BiLstm::mirrored() const {
  BiLstm m = *this;
  const auto h = static_cast<Eigen::Index>(config_.hidden);
  for (const char* part : {".wx", ".wh", ".b"}) {
    m.params_.at(std::string("fwd") + part) = params_.at(std::string("bwd") + part);
    m.params_.at(std::string("bwd") + part) = params_.at(std::string("fwd") + part);
  }
  auto& w = m.params_.at("head.weight");
  const auto& src = params_.at("head.weight");
  w.leftCols(h) = src.rightCols(h);
  w.rightCols(h) = src.leftCols(h);
  return m;
}

std::vector<std::size_t> bilstm_decode(const BiLstm& model, const std::vector<PageVector>& pages) {
  std::vector<std::size_t> out;
  for (const auto& s : model.forward(pages)) out.push_back(predict(s, LabelMode::multiclass).front());
  return out;
}

json BiLstmReport::to_json() const {
  return {{"total_steps", total_steps},
          {"step_losses", step_losses},
          {"step_lrs", step_lrs},
          {"train_accuracy", train_accuracy}};
}

BiLstmReport bilstm_train(const std::vector<PageVectorSequence>& docs, const BiLstmConfig& config,
                          const TrainConfig& cfg) {
  cfg.validate();
  if (docs.empty()) throw Error("no BiLSTM training documents");
  for (const auto& d : docs)
    for (auto c : d.gold)
      if (c >= config.n_classes) throw Error("BiLSTM gold label out of range");

  BiLstmReport report;
  report.model = BiLstm(config);
  report.total_steps = total_training_steps(docs.size(), cfg);
  BiLstm& model = report.model;
  AdamW optimizer(model.params(), cfg);
  ParamSet grads = model.params().zeros_like();
  Rng shuffle_rng(mix_seed(cfg.seed, 3));

  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (const auto& batch : shuffled_batches(docs.size(), cfg.batch_size, shuffle_rng)) {
      double loss;
      try {
        loss = model.loss_and_grad(docs, batch, grads);
      } catch (const DivergenceError& e) {
        throw DivergenceError("BiLSTM training diverged at step " + std::to_string(step) + ": " + e.what(), step);
      }
      const double lr = lr_at(step, report.total_steps, cfg);
      optimizer.step(model.params(), grads, lr);
      report.step_losses.push_back(loss);
      report.step_lrs.push_back(lr);
      ++step;
    }
  }

  std::size_t correct = 0, total = 0;
  for (const auto& d : docs) {
    const auto pred = bilstm_decode(model, d.pages);
    for (std::size_t t = 0; t < pred.size(); ++t) correct += pred[t] == d.gold[t];
    total += pred.size();
  }
  report.train_accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return report;
}

}  // namespace pagectx
