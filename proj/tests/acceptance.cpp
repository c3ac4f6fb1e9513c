// Acceptance run: one PASS/FAIL line per criterion; exit status 0 only when
// every criterion passes. Lines starting with INFO are informational.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pagectx/bilstm.hpp"
#include "pagectx/checkpoint.hpp"
#include "pagectx/commands.hpp"
#include "pagectx/corpus.hpp"
#include "pagectx/crf.hpp"
#include "pagectx/encoder.hpp"
#include "pagectx/eval.hpp"
#include "pagectx/features.hpp"
#include "pagectx/random.hpp"
#include "pagectx/training.hpp"
#include "support.hpp"

using namespace pagectx;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int failures = 0;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
  std::printf("criterion %d %-28s %s  %s\n", id, title.c_str(), pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Table arithmetic.

void metric_arithmetic() {
  const std::vector<double> f1 = {90.71, 73.42, 64.33, 97.89, 83.54, 87.63};
  const std::vector<std::size_t> support = {273, 1841, 198, 85408, 6331, 1475};
  const double macro = macro_average(f1);
  const double weighted = weighted_average(f1, support);
  const bool pass = std::abs(macro - 82.92) <= 0.005 && std::abs(weighted - 96.22) <= 0.005;
  report(1, "metric arithmetic", pass, fmt("macro %.4f", macro) + fmt(" (82.92), weighted %.4f", weighted) + " (96.22)");
}

// ---------------------------------------------------------------------------
// 2 and 4. Synthetic experiments through the command layer.

struct SeedScores {
  double oblivious = 0.0, recurrent = 0.0, crf = 0.0;
};

double macro_f1_of(const fs::path& traces, const fs::path& manifest) {
  std::ostringstream sink;
  return 100.0 * cmd_eval(traces, manifest, "test", std::nullopt, sink).at("scores").at("macro_f1").get<double>();
}

SeedScores run_seed(const fs::path& config_path, std::uint64_t seed, std::optional<double> self_transition,
                    const fs::path& out) {
  json j = read_json_file(config_path);
  if (self_transition) j["corpus"]["synthetic"]["self_transition"] = *self_transition;
  auto cfg = ExperimentConfig::from_json(j, config_path.parent_path());
  cfg.set_seed(seed);
  cfg.output_dir = out;
  cfg.bilstm = false;
  std::ostringstream sink;

  SeedScores s;
  cfg.set_mode("oblivious");
  cfg.crf = true;
  const auto obl = cmd_train(cfg, sink);
  InferRequest req;
  req.checkpoint = obl.checkpoint;
  req.manifest = obl.manifest;
  req.output = obl.run_dir / "test-oblivious.jsonl";
  cmd_infer(req, sink);
  s.oblivious = macro_f1_of(req.output, obl.manifest);
  req.crf = *obl.crf_checkpoint;
  req.output = obl.run_dir / "test-crf.jsonl";
  cmd_infer(req, sink);
  s.crf = macro_f1_of(req.output, obl.manifest);

  cfg.set_mode("recurrent");
  cfg.crf = false;
  const auto rec = cmd_train(cfg, sink);
  InferRequest rreq;
  rreq.checkpoint = rec.checkpoint;
  rreq.manifest = rec.manifest;
  rreq.output = rec.run_dir / "test-recurrent.jsonl";
  cmd_infer(rreq, sink);
  s.recurrent = macro_f1_of(rreq.output, rec.manifest);
  return s;
}

SeedScores mean(const std::vector<SeedScores>& v) {
  SeedScores m;
  for (const auto& s : v) {
    m.oblivious += s.oblivious / static_cast<double>(v.size());
    m.recurrent += s.recurrent / static_cast<double>(v.size());
    m.crf += s.crf / static_cast<double>(v.size());
  }
  return m;
}

void synthetic_experiments(const fs::path& config_path, const fs::path& scratch) {
  std::vector<SeedScores> high, low;
  std::string per_seed;
  for (std::uint64_t seed : {1, 2, 3}) {
    high.push_back(run_seed(config_path, seed, std::nullopt, scratch / "high"));
    const auto& s = high.back();
    per_seed += " [seed " + std::to_string(seed) + fmt(": obl %.2f", s.oblivious) + fmt(" crf %.2f", s.crf) +
                fmt(" rec %.2f]", s.recurrent);
  }
  const auto h = mean(high);
  std::printf("INFO high self-transition per seed:%s\n", per_seed.c_str());
  const double gap = h.recurrent - h.oblivious;
  report(2, "recurrence benefit", gap >= 5.0,
         fmt("recurrent %.2f", h.recurrent) + fmt(" - oblivious %.2f", h.oblivious) + fmt(" = %.2f points (>= 5)", gap));
  report(4, "context-method ordering", h.recurrent >= h.crf && h.crf >= h.oblivious,
         fmt("recurrent %.2f", h.recurrent) + fmt(" >= crf %.2f", h.crf) + fmt(" >= oblivious %.2f", h.oblivious));

  for (std::uint64_t seed : {1, 2, 3}) low.push_back(run_seed(config_path, seed, 0.25, scratch / "low"));
  const auto l = mean(low);
  std::printf("INFO low self-transition (0.25): recurrent %.2f, crf %.2f, oblivious %.2f, gap %.2f points\n",
              l.recurrent, l.crf, l.oblivious, l.recurrent - l.oblivious);
}

// ---------------------------------------------------------------------------
// 3. CRF against enumeration.

void crf_exactness() {
  Rng rng(99);
  std::size_t cases = 0, viterbi_mismatch = 0;
  double worst_logz = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    for (std::size_t l = 1; l <= 6; ++l) {
      for (int rep = 0; rep < 12; ++rep, ++cases) {
        auto m = CrfModel::zeros(n);
        for (Eigen::Index i = 0; i < m.transition.size(); ++i) m.transition.data()[i] = rng.uniform(-3, 3);
        for (Eigen::Index i = 0; i < m.start.size(); ++i) m.start[i] = rng.uniform(-3, 3);
        m.emission_scale = rng.uniform(0.1, 3.0);
        ScoreSequence seq(l, Eigen::VectorXd(static_cast<Eigen::Index>(n)));
        for (auto& e : seq)
          for (Eigen::Index j = 0; j < e.size(); ++j) e[j] = rng.uniform(-4, 1);

        std::vector<std::size_t> y(l, 0), best;
        double best_score = -std::numeric_limits<double>::infinity();
        std::vector<double> all;
        while (true) {
          double sc = m.start[static_cast<Eigen::Index>(y[0])];
          for (std::size_t t = 0; t < l; ++t) sc += m.emission_scale * seq[t][static_cast<Eigen::Index>(y[t])];
          for (std::size_t t = 1; t < l; ++t)
            sc += m.transition(static_cast<Eigen::Index>(y[t - 1]), static_cast<Eigen::Index>(y[t]));
          all.push_back(sc);
          if (sc > best_score) {
            best_score = sc;
            best = y;
          }
          std::size_t t = l;
          while (t > 0 && ++y[t - 1] == n) y[--t] = 0;
          if (t == 0) break;
        }
        double z = 0.0;
        for (double sc : all) z += std::exp(sc - best_score);
        const double log_z = best_score + std::log(z);
        worst_logz = std::max(worst_logz, std::abs(crf_log_forward(m, seq) - log_z));
        if (crf_viterbi(m, seq).labels != best) ++viterbi_mismatch;
      }
    }
  }
  report(3, "CRF exactness", cases >= 200 && viterbi_mismatch == 0 && worst_logz <= 1e-9,
         std::to_string(cases) + " cases, viterbi mismatches " + std::to_string(viterbi_mismatch) +
             fmt(", worst |logZ error| %.2e", worst_logz));
}

// ---------------------------------------------------------------------------
// 5. Gradients.

void perturb(ParamSet& p, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (std::size_t i = 0; i < p.size(); ++i) {
    Eigen::MatrixXd noise(p[i].rows(), p[i].cols());
    fill_normal(noise, scale, rng);
    p[i] += noise;
  }
}

double encoder_gradient_error(EncoderVariant variant) {
  EncoderConfig c;
  c.variant = variant;
  c.n_classes = 3;
  c.vocab_size = 4 + 3 + 8;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.ff_dim = 12;
  c.max_len = 10;
  c.dropout = 0.0;
  Encoder enc(c);
  perturb(enc.params(), 11, 0.3);
  const std::vector<LabeledSequence> ex = {
      {{{InputVocabulary::kCls, InputVocabulary::kFirstPage, 7, 9, 10}}, {0}},
      {{{InputVocabulary::kCls, 5, 8, InputVocabulary::kUnk}}, {2}},
      {{{InputVocabulary::kCls, 4, 6, 12, 14}}, {1}},
  };
  auto grads = enc.params().zeros_like();
  enc.loss_and_grad(ex, LabelMode::multiclass, grads);
  auto scratch = enc.params().zeros_like();
  return testing::central_difference_check(enc.params(), grads, [&] {
           return enc.loss_and_grad(ex, LabelMode::multiclass, scratch);
         }).worst_relative;
}

double bilstm_gradient_error() {
  BiLstmConfig c;
  c.input_dim = 3;
  c.hidden = 4;
  c.n_classes = 3;
  BiLstm model(c);
  perturb(model.params(), 12, 0.5);
  auto v = [](double a, double b, double d) {
    PageVector x(3);
    x << a, b, d;
    return x;
  };
  const std::vector<PageVectorSequence> docs = {{{v(0.5, -1, 2), v(0, 0.3, 0.1), v(-2, 1, 0)}, {0, 2, 1}},
                                                {{v(1, 1, -1), v(0.2, -0.4, 0.9)}, {1, 1}}};
  const std::vector<std::size_t> batch = {0, 1};
  auto grads = model.params().zeros_like();
  model.loss_and_grad(docs, batch, grads);
  auto scratch = model.params().zeros_like();
  return testing::central_difference_check(model.params(), grads, [&] {
           return model.loss_and_grad(docs, batch, scratch);
         }).worst_relative;
}

double crf_gradient_error() {
  Rng rng(13);
  const std::size_t n = 3;
  auto m = CrfModel::zeros(n);
  for (Eigen::Index i = 0; i < m.transition.size(); ++i) m.transition.data()[i] = rng.uniform(-1, 1);
  for (Eigen::Index i = 0; i < m.start.size(); ++i) m.start[i] = rng.uniform(-1, 1);
  m.emission_scale = 1.3;
  std::vector<ScoreSequence> seqs;
  std::vector<std::vector<std::size_t>> golds;
  for (int d = 0; d < 4; ++d) {
    const auto l = rng.between(1, 5);
    ScoreSequence s;
    std::vector<std::size_t> g;
    for (std::uint64_t t = 0; t < l; ++t) {
      s.push_back(Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()));
      g.push_back(rng.below(n));
    }
    seqs.push_back(emissions_from_logits(s));
    golds.push_back(g);
  }
  // Pack the CRF into a ParamSet so the shared checker can drive it.
  ParamSet p;
  p.add("transition", 3, 3) = m.transition;
  p.add("start", 3, 1) = m.start;
  p.add("emission_scale", 1, 1)(0, 0) = m.emission_scale;
  auto unpack = [&](const ParamSet& q) {
    CrfModel out = CrfModel::zeros(n);
    out.transition = q.at("transition");
    out.start = q.at("start");
    out.emission_scale = q.at("emission_scale")(0, 0);
    return out;
  };
  auto g = CrfModel::zeros(n);
  crf_objective(m, seqs, golds, 0.05, &g);
  ParamSet analytic = p.zeros_like();
  analytic.at("transition") = g.transition;
  analytic.at("start") = g.start;
  analytic.at("emission_scale")(0, 0) = g.emission_scale;
  return testing::central_difference_check(p, analytic, [&] {
           return crf_objective(unpack(p), seqs, golds, 0.05);
         }).worst_relative;
}

void gradients() {
  const double lin = encoder_gradient_error(EncoderVariant::linear);
  const double tr = encoder_gradient_error(EncoderVariant::tiny_transformer);
  const double bi = bilstm_gradient_error();
  const double crf = crf_gradient_error();
  const double worst = std::max({lin, tr, bi, crf});
  report(5, "gradient suites", worst <= 1e-4,
         fmt("linear %.1e", lin) + fmt(", transformer %.1e", tr) + fmt(", bilstm %.1e", bi) + fmt(", crf %.1e", crf) +
             " (rel. error <= 1e-4)");
}

// ---------------------------------------------------------------------------
// 6. Statistics.

void statistics() {
  bool pass = true;
  const auto sym = mcnemar_bowker(ContingencyTable::from_rows({{5, 3, 2}, {3, 9, 4}, {2, 4, 1}}));
  pass &= sym.statistic == 0.0 && sym.p_value == 1.0;

  const auto two = mcnemar_bowker(ContingencyTable::from_rows({{20, 9}, {3, 30}}));
  pass &= two.dof == 1 && std::abs(two.statistic - 36.0 / 12.0) <= 1e-15;

  Rng rng(2718);
  double worst_p = 0.0;
  for (int t = 0; t < 10; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(t % 5);
    std::vector<std::vector<std::uint64_t>> b(n, std::vector<std::uint64_t>(n));
    for (auto& row : b)
      for (auto& x : row) x = rng.below(t < 5 ? 20 : 150);
    double stat = 0.0;
    double dof = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const double s = static_cast<double>(b[i][j] + b[j][i]);
        if (s == 0) continue;
        const double d = static_cast<double>(b[i][j]) - static_cast<double>(b[j][i]);
        stat += d * d / s;
        dof += 1;
      }
    const auto r = mcnemar_bowker(ContingencyTable::from_rows(b));
    worst_p = std::max(worst_p, std::abs(r.p_value - testing::chi_square_tail(stat, dof)));
    pass &= std::abs(r.statistic - stat) <= 1e-12 * std::max(1.0, stat);
  }
  pass &= worst_p <= 1e-8;

  // About 10k transitions from the generator.
  auto synth = SynthConfig::with_self_transition(4, 0.85);
  synth.train_docs = 1000;
  synth.validation_docs = 1;
  synth.test_docs = 1;
  synth.min_pages_per_doc = 8;
  synth.max_pages_per_doc = 16;
  synth.seed = 31;
  const auto corpus = generate_synthetic(synth);
  std::size_t transitions = 0;
  for (const auto& d : corpus.train) transitions += d.size() - 1;
  const auto self = transition_self_prob(corpus.train, 4);
  double worst_diag = 0.0;
  for (const auto& p : self.per_class) worst_diag = std::max(worst_diag, std::abs(p.value_or(0.0) - 0.85));
  pass &= transitions >= 10000 && worst_diag <= 0.02;

  report(6, "statistics", pass,
         fmt("worst |p - oracle| %.1e", worst_p) + ", " + std::to_string(transitions) +
             fmt(" transitions, worst |self-prob - 0.85| %.4f", worst_diag));
}

// ---------------------------------------------------------------------------
// 7. SVD.

void svd() {
  double worst_sigma = 0.0, worst_orth = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(100 + seed);
    Eigen::MatrixXd a(50, 30);
    fill_normal(a, 1.0, rng);
    SparseRows s = a.sparseView();
    const auto proj = fit_svd(s, 5);
    const auto ev = testing::jacobi_eigenvalues(a.transpose() * a);
    for (int i = 0; i < 5; ++i) worst_sigma = std::max(worst_sigma, std::abs(proj.singular_values()[i] - std::sqrt(ev[i])));
    const Eigen::MatrixXd gram = proj.basis().transpose() * proj.basis();
    worst_orth = std::max(worst_orth, (gram - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff());
  }
  report(7, "truncated SVD", worst_sigma <= 1e-5 && worst_orth <= 1e-6,
         fmt("worst singular value error %.1e", worst_sigma) + fmt(", worst orthonormality error %.1e", worst_orth));
}

// ---------------------------------------------------------------------------
// 8. Determinism of every stage.

std::map<std::string, std::string> hashes_under(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().filename() == "timing.json") continue;
    out[fs::relative(e.path(), dir).generic_string()] = fnv1a_hex(testing::read_file(e.path()));
  }
  return out;
}

std::map<std::string, std::string> full_pipeline(const fs::path& config_path, const fs::path& out) {
  fs::remove_all(out);
  auto cfg = ExperimentConfig::load(config_path);
  cfg.output_dir = out / "runs";
  std::ostringstream sink;
  cmd_synth(cfg, sink);
  const auto obl = cmd_train(cfg, sink);
  auto rec_cfg = cfg;
  rec_cfg.set_mode("recurrent");
  rec_cfg.crf = rec_cfg.bilstm = false;
  const auto rec = cmd_train(rec_cfg, sink);

  InferRequest req;
  req.manifest = obl.manifest;
  req.checkpoint = obl.checkpoint;
  req.output = out / "traces" / "oblivious.jsonl";
  cmd_infer(req, sink);
  req.crf = *obl.crf_checkpoint;
  req.output = out / "traces" / "crf.jsonl";
  cmd_infer(req, sink);
  req.crf.reset();
  req.checkpoint = *obl.bilstm_checkpoint;
  req.output = out / "traces" / "bilstm.jsonl";
  cmd_infer(req, sink);
  req.checkpoint = rec.checkpoint;
  req.output = out / "traces" / "recurrent.jsonl";
  cmd_infer(req, sink);
  cmd_eval(out / "traces" / "recurrent.jsonl", obl.manifest, "test", out / "reports" / "eval.json", sink);
  cmd_compare(out / "traces" / "oblivious.jsonl", out / "traces" / "recurrent.jsonl", obl.manifest, "test",
              out / "reports" / "compare.json", sink);
  write_json_file(out / "reports" / "stats.json", cmd_stats(obl.manifest, sink));
  return hashes_under(out);
}

void determinism(const fs::path& config_path, const fs::path& scratch) {
  const auto first = full_pipeline(config_path, scratch / "pipeline");
  const auto second = full_pipeline(config_path, scratch / "pipeline");
  std::size_t differing = 0;
  for (const auto& [k, v] : first) {
    auto it = second.find(k);
    if (it == second.end() || it->second != v) {
      ++differing;
      std::printf("INFO differing artifact: %s\n", k.c_str());
    }
  }
  differing += second.size() > first.size() ? second.size() - first.size() : 0;
  report(8, "determinism", differing == 0 && first.size() >= 20,
         std::to_string(first.size()) + " artifacts hashed twice, " + std::to_string(differing) + " differ");
}

// ---------------------------------------------------------------------------
// 9. Schedule and optimizer.

void schedule_and_optimizer() {
  const auto cfg = TrainConfig::fine_tuning_recipe();
  const std::size_t total = total_training_steps(5000, cfg);  // 6 epochs of 157 batches
  const auto warm = warmup_steps(total, cfg);
  const bool schedule = cfg.peak_lr == 2e-5 && warm == static_cast<std::size_t>(std::llround(0.1 * double(total))) &&
                        lr_at(warm, total, cfg) == 2e-5 && lr_at(total, total, cfg) == 0.0 &&
                        lr_at(0, total, cfg) == 0.0;
  double max_lr = 0.0;
  for (std::size_t s = 0; s <= total; ++s) max_lr = std::max(max_lr, lr_at(s, total, cfg));

  ParamSet p;
  p.add("w", 1, 1).setZero();
  ParamSet g = p.zeros_like();
  g[0](0, 0) = 1.0;
  TrainConfig ocfg;
  ocfg.beta1 = 0.9;
  ocfg.beta2 = 0.999;
  ocfg.epsilon = 1e-8;
  ocfg.weight_decay = 0.0;
  AdamW opt(p, ocfg);
  opt.step(p, g, 0.1);
  const double err = std::abs(p[0](0, 0) - (-0.1 / (1.0 + 1e-8)));
  report(9, "schedule and optimizer", schedule && max_lr == 2e-5 && err <= 1e-12,
         "total " + std::to_string(total) + " steps, warmup " + std::to_string(warm) +
             fmt(", peak %.1e", lr_at(warm, total, cfg)) + fmt(", end %.1e", lr_at(total, total, cfg)) +
             fmt(", single-step error %.1e", err));
}

}  // namespace

int main() {
  const auto start = std::chrono::steady_clock::now();
  const fs::path config = fs::path(PAGECTX_SOURCE_DIR) / "configs" / "synthetic.json";
  const auto scratch = testing::scratch_dir("acceptance");

  metric_arithmetic();
  synthetic_experiments(config, scratch);
  crf_exactness();
  gradients();
  statistics();
  svd();
  determinism(config, scratch);
  schedule_and_optimizer();

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%s: %d failing criteria, %.1f s\n", failures ? "FAIL" : "PASS", failures, secs);
  return failures ? 1 : 0;
}
