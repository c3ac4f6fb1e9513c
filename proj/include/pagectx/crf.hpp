#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

#include <json.hpp>

#include "pagectx/encoder.hpp"

namespace pagectx {

/// Linear-chain CRF over frozen per-page emissions.
///
///   score(y) = start[y_1] + sum_t scale * e_t[y_t] + sum_{t>1} T(y_{t-1}, y_t)
///
/// There are no end-state scores.
struct CrfModel {
  Eigen::MatrixXd transition;  // T(i, j): label j following label i
  Eigen::VectorXd start;
  double emission_scale = 1.0;

  static CrfModel zeros(std::size_t n_classes);
  std::size_t size() const { return static_cast<std::size_t>(start.size()); }
  bool all_finite() const;

  nlohmann::json to_json() const;
  static CrfModel from_json(const nlohmann::json& j);
};

/// Per-page emission vectors, one per page.
using ScoreSequence = std::vector<Eigen::VectorXd>;

/// log-softmax of each logit vector.
ScoreSequence emissions_from_logits(const std::vector<ScoreVector>& logits);

double crf_path_score(const CrfModel& model, const ScoreSequence& seq, const std::vector<std::size_t>& labels);

/// log Z by the log-sum-exp forward recursion.
double crf_log_forward(const CrfModel& model, const ScoreSequence& seq);

struct ViterbiResult {
  std::vector<std::size_t> labels;
  double score = 0.0;
};

/// Highest-scoring path. Ties go to the lower label index, both at every
/// backpointer and at the final position.
ViterbiResult crf_viterbi(const CrfModel& model, const ScoreSequence& seq);

struct CrfMarginals {
  double log_z = 0.0;
  std::vector<Eigen::VectorXd> node;  // node[t](j) = P(y_t = j)
  std::vector<Eigen::MatrixXd> edge;  // edge[t-1](i, j) = P(y_{t-1} = i, y_t = j), t >= 1
};

/// Forward-backward.
CrfMarginals crf_marginals(const CrfModel& model, const ScoreSequence& seq);

/// Mean over sequences of log p(gold) minus l2 * ||T||^2. When `gradient` is
/// non-null it receives the gradient in the same shape (empirical minus
/// expected counts).
double crf_objective(const CrfModel& model, const std::vector<ScoreSequence>& seqs,
                     const std::vector<std::vector<std::size_t>>& golds, double l2, CrfModel* gradient = nullptr);

struct CrfFitOptions {
  double l2 = 1e-2;
  double tolerance = 1e-6;
  std::size_t max_iterations = 1000;

  nlohmann::json to_json() const;
};

struct CrfFitResult {
  CrfModel model;
  std::size_t iterations = 0;
  bool converged = false;
  double objective = 0.0;
};

/// Maximizes crf_objective by gradient ascent with backtracking line search,
/// starting from T = 0, start = 0, scale = 1 (scale kept positive). Stops when
/// the gradient max-norm or the relative objective gain drops to
/// options.tolerance; `converged` is false when max_iterations ran out first.
CrfFitResult crf_fit(const std::vector<ScoreSequence>& seqs, const std::vector<std::vector<std::size_t>>& golds,
                     std::size_t n_classes, const CrfFitOptions& options = {});

}  // namespace pagectx
