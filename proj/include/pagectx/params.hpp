#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace pagectx {

class Rng;

/// Ordered collection of named dense tensors. Models keep their parameters
/// here so that gradients, optimizer moments and checkpoints all share one
/// layout.
class ParamSet {
 public:
  Eigen::MatrixXd& add(std::string name, Eigen::Index rows, Eigen::Index cols);

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Eigen::MatrixXd& operator[](std::size_t i) { return tensors_[i]; }
  const Eigen::MatrixXd& operator[](std::size_t i) const { return tensors_[i]; }

  std::optional<std::size_t> find(std::string_view name) const;
  Eigen::MatrixXd& at(std::string_view name);
  const Eigen::MatrixXd& at(std::string_view name) const;

  /// Same names and shapes, all entries zero.
  ParamSet zeros_like() const;
  void set_zero();
  bool same_layout(const ParamSet& other) const;
  bool all_finite() const;
  std::size_t parameter_count() const;

  /// Flat views, used by gradient checks and hashing.
  std::vector<double> flatten() const;
  double& coefficient(std::size_t flat_index);

  nlohmann::json to_json() const;
  /// Loads values into an existing layout; names and shapes must match.
  void assign_from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> names_;
  std::vector<Eigen::MatrixXd> tensors_;
};

void fill_normal(Eigen::MatrixXd& m, double stddev, Rng& rng);
void fill_uniform(Eigen::MatrixXd& m, double bound, Rng& rng);

}  // namespace pagectx
