#include "pagectx/crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pagectx/error.hpp"

namespace pagectx {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

namespace {

double log_sum_exp(const VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

void check(const CrfModel& model, const ScoreSequence& seq) {
  if (seq.empty()) throw Error("CRF sequence must have at least one page");
  const auto n = model.start.size();
  if (model.transition.rows() != n || model.transition.cols() != n) throw Error("CRF transition shape mismatch");
  for (const auto& e : seq)
    if (e.size() != n) throw Error("CRF emission vector has the wrong length");
}

// alpha[t](j): log-sum of scores of all prefixes ending in j at t.
std::vector<VectorXd> forward_table(const CrfModel& m, const ScoreSequence& seq) {
  const auto n = m.start.size();
  std::vector<VectorXd> alpha(seq.size());
  alpha[0] = m.start + m.emission_scale * seq[0];
  for (std::size_t t = 1; t < seq.size(); ++t) {
    alpha[t].resize(n);
    for (Eigen::Index j = 0; j < n; ++j)
      alpha[t][j] = log_sum_exp(alpha[t - 1] + m.transition.col(j)) + m.emission_scale * seq[t][j];
  }
  return alpha;
}

std::vector<VectorXd> backward_table(const CrfModel& m, const ScoreSequence& seq) {
  const auto n = m.start.size();
  const auto l = seq.size();
  std::vector<VectorXd> beta(l);
  beta[l - 1] = VectorXd::Zero(n);
  for (std::size_t t = l - 1; t-- > 0;) {
    VectorXd next = m.emission_scale * seq[t + 1] + beta[t + 1];
    beta[t].resize(n);
    for (Eigen::Index i = 0; i < n; ++i) beta[t][i] = log_sum_exp(m.transition.row(i).transpose() + next);
  }
  return beta;
}

}  // namespace

CrfModel CrfModel::zeros(std::size_t n_classes) {
  const auto n = static_cast<Eigen::Index>(n_classes);
  return {MatrixXd::Zero(n, n), VectorXd::Zero(n), 1.0};
}

bool CrfModel::all_finite() const {
  return transition.allFinite() && start.allFinite() && std::isfinite(emission_scale);
}

json CrfModel::to_json() const {
  json t = json::array();
  for (Eigen::Index i = 0; i < transition.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(transition.cols()));
    for (Eigen::Index j = 0; j < transition.cols(); ++j) row[static_cast<std::size_t>(j)] = transition(i, j);
    t.push_back(row);
  }
  return {{"transition", t},
          {"start", std::vector<double>(start.data(), start.data() + start.size())},
          {"emission_scale", emission_scale}};
}

CrfModel CrfModel::from_json(const json& j) {
  const auto rows = j.at("transition").get<std::vector<std::vector<double>>>();
  const auto start = j.at("start").get<std::vector<double>>();
  const auto n = static_cast<Eigen::Index>(start.size());
  CrfModel m = zeros(start.size());
  if (static_cast<Eigen::Index>(rows.size()) != n) throw FormatError("CRF transition matrix must be n x n");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != n)
      throw FormatError("CRF transition matrix must be n x n");
    for (Eigen::Index k = 0; k < n; ++k) m.transition(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    m.start[i] = start[static_cast<std::size_t>(i)];
  }
  m.emission_scale = j.at("emission_scale").get<double>();
  if (!m.all_finite() || !(m.emission_scale > 0.0)) throw FormatError("CRF parameters must be finite, scale positive");
  return m;
}

ScoreSequence emissions_from_logits(const std::vector<ScoreVector>& logits) {
  ScoreSequence out;
  out.reserve(logits.size());
  for (const auto& y : logits) out.push_back(y.array() - log_sum_exp(y));
  return out;
}

double crf_path_score(const CrfModel& model, const ScoreSequence& seq, const std::vector<std::size_t>& labels) {
  check(model, seq);
  if (labels.size() != seq.size()) throw Error("label path length does not match the sequence");
  const auto y = [&](std::size_t t) { return static_cast<Eigen::Index>(labels[t]); };
  double s = model.start[y(0)] + model.emission_scale * seq[0][y(0)];
  for (std::size_t t = 1; t < seq.size(); ++t) s += model.transition(y(t - 1), y(t)) + model.emission_scale * seq[t][y(t)];
  return s;
}

double crf_log_forward(const CrfModel& model, const ScoreSequence& seq) {
  check(model, seq);
  return log_sum_exp(forward_table(model, seq).back());
}

ViterbiResult crf_viterbi(const CrfModel& model, const ScoreSequence& seq) {
  check(model, seq);
  const auto n = model.start.size();
  const auto l = seq.size();
  std::vector<VectorXd> delta(l);
  std::vector<std::vector<Eigen::Index>> back(l, std::vector<Eigen::Index>(static_cast<std::size_t>(n), 0));
  delta[0] = model.start + model.emission_scale * seq[0];
  for (std::size_t t = 1; t < l; ++t) {
    delta[t].resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      Eigen::Index best = 0;
      double best_score = delta[t - 1][0] + model.transition(0, j);
      for (Eigen::Index i = 1; i < n; ++i) {
        const double s = delta[t - 1][i] + model.transition(i, j);
        if (s > best_score) {
          best_score = s;
          best = i;
        }
      }
      back[t][static_cast<std::size_t>(j)] = best;
      delta[t][j] = best_score + model.emission_scale * seq[t][j];
    }
  }
  Eigen::Index last = 0;
  for (Eigen::Index j = 1; j < n; ++j)
    if (delta[l - 1][j] > delta[l - 1][last]) last = j;
  ViterbiResult r;
  r.score = delta[l - 1][last];
  r.labels.resize(l);
  r.labels[l - 1] = static_cast<std::size_t>(last);
  for (std::size_t t = l - 1; t > 0; --t)
    r.labels[t - 1] = static_cast<std::size_t>(back[t][r.labels[t]]);
  return r;
}

CrfMarginals crf_marginals(const CrfModel& model, const ScoreSequence& seq) {
  check(model, seq);
  const auto alpha = forward_table(model, seq);
  const auto beta = backward_table(model, seq);
  CrfMarginals out;
  out.log_z = log_sum_exp(alpha.back());
  for (std::size_t t = 0; t < seq.size(); ++t) out.node.push_back((alpha[t] + beta[t]).array() - out.log_z);
  for (auto& v : out.node) v = v.array().exp();
  for (std::size_t t = 1; t < seq.size(); ++t) {
    MatrixXd e = model.transition;
    e.colwise() += alpha[t - 1];
    e.rowwise() += (model.emission_scale * seq[t] + beta[t]).transpose();
    out.edge.push_back((e.array() - out.log_z).exp().matrix());
  }
  return out;
}

double crf_objective(const CrfModel& model, const std::vector<ScoreSequence>& seqs,
                     const std::vector<std::vector<std::size_t>>& golds, double l2, CrfModel* gradient) {
  if (seqs.size() != golds.size()) throw Error("CRF data: one gold path per sequence");
  if (seqs.empty()) throw Error("CRF data is empty");
  const auto n = model.start.size();
  if (gradient) *gradient = CrfModel{MatrixXd::Zero(n, n), VectorXd::Zero(n), 0.0};
  double total = 0.0;
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const auto& seq = seqs[s];
    const auto& gold = golds[s];
    if (!gradient) {
      total += crf_path_score(model, seq, gold) - crf_log_forward(model, seq);
      continue;
    }
    const auto marg = crf_marginals(model, seq);
    total += crf_path_score(model, seq, gold) - marg.log_z;
    const auto y = [&](std::size_t t) { return static_cast<Eigen::Index>(gold[t]); };
    gradient->start[y(0)] += 1.0;
    gradient->start -= marg.node[0];
    for (std::size_t t = 0; t < seq.size(); ++t) {
      gradient->emission_scale += seq[t][y(t)] - marg.node[t].dot(seq[t]);
      if (t > 0) {
        gradient->transition(y(t - 1), y(t)) += 1.0;
        gradient->transition -= marg.edge[t - 1];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(seqs.size());
  if (gradient) {
    gradient->transition *= inv;
    gradient->start *= inv;
    gradient->emission_scale *= inv;
    gradient->transition -= 2.0 * l2 * model.transition;
  }
  return total * inv - l2 * model.transition.squaredNorm();
}

json CrfFitOptions::to_json() const {
  return {{"l2", l2}, {"tolerance", tolerance}, {"max_iterations", max_iterations}};
}

namespace {

constexpr double kMinScale = 1e-6;

double max_abs(const CrfModel& g) {
  return std::max({g.transition.cwiseAbs().maxCoeff(), g.start.cwiseAbs().maxCoeff(), std::abs(g.emission_scale)});
}

double squared_norm(const CrfModel& g) {
  return g.transition.squaredNorm() + g.start.squaredNorm() + g.emission_scale * g.emission_scale;
}

CrfModel ascend(const CrfModel& m, const CrfModel& g, double step) {
  CrfModel out{m.transition + step * g.transition, m.start + step * g.start,
               m.emission_scale + step * g.emission_scale};
  out.emission_scale = std::max(out.emission_scale, kMinScale);
  return out;
}

}  // namespace

CrfFitResult crf_fit(const std::vector<ScoreSequence>& seqs, const std::vector<std::vector<std::size_t>>& golds,
                     std::size_t n_classes, const CrfFitOptions& options) {
  for (const auto& g : golds)
    for (auto c : g)
      if (c >= n_classes) throw Error("CRF gold label out of range");
  CrfFitResult r;
  r.model = CrfModel::zeros(n_classes);
  CrfModel grad;
  double obj = crf_objective(r.model, seqs, golds, options.l2, &grad);
  double step = 1.0;
  for (std::size_t iter = 1; iter <= options.max_iterations; ++iter) {
    r.iterations = iter;
    if (max_abs(grad) <= options.tolerance) {
      r.converged = true;
      break;
    }
    const double g2 = squared_norm(grad);
    CrfModel candidate;
    double cand_obj = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int tries = 0; tries < 60; ++tries) {
      candidate = ascend(r.model, grad, step);
      cand_obj = crf_objective(candidate, seqs, golds, options.l2);
      // Armijo condition.
      if (std::isfinite(cand_obj) && cand_obj >= obj + 1e-4 * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No ascent direction at machine precision: stationary.
      r.converged = true;
      break;
    }
    const double gain = cand_obj - obj;
    r.model = std::move(candidate);
    obj = crf_objective(r.model, seqs, golds, options.l2, &grad);
    step = std::min(step * 2.0, 1e3);
    if (gain <= options.tolerance * std::max(1.0, std::abs(obj))) {
      r.converged = true;
      break;
    }
  }
  r.objective = obj;
  if (!r.model.all_finite()) throw DivergenceError("CRF fit produced non-finite parameters", r.iterations);
  return r;
}

}  // namespace pagectx
