#include "pagectx/params.hpp"

#include "pagectx/error.hpp"
#include "pagectx/random.hpp"

namespace pagectx {

Eigen::MatrixXd& ParamSet::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (find(name)) throw Error("duplicate parameter name: " + name);
  names_.push_back(std::move(name));
  tensors_.push_back(Eigen::MatrixXd::Zero(rows, cols));
  return tensors_.back();
}

std::optional<std::size_t> ParamSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

Eigen::MatrixXd& ParamSet::at(std::string_view name) {
  auto i = find(name);
  if (!i) throw Error("no parameter named " + std::string(name));
  return tensors_[*i];
}

const Eigen::MatrixXd& ParamSet::at(std::string_view name) const {
  auto i = find(name);
  if (!i) throw Error("no parameter named " + std::string(name));
  return tensors_[*i];
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], tensors_[i].rows(), tensors_[i].cols());
  return out;
}

void ParamSet::set_zero() {
  for (auto& t : tensors_) t.setZero();
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (names_[i] != other.names_[i] || tensors_[i].rows() != other.tensors_[i].rows() ||
        tensors_[i].cols() != other.tensors_[i].cols())
      return false;
  }
  return true;
}

bool ParamSet::all_finite() const {
  for (const auto& t : tensors_)
    if (!t.allFinite()) return false;
  return true;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
  return n;
}

std::vector<double> ParamSet::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& t : tensors_) out.insert(out.end(), t.data(), t.data() + t.size());
  return out;
}

double& ParamSet::coefficient(std::size_t flat_index) {
  for (auto& t : tensors_) {
    auto n = static_cast<std::size_t>(t.size());
    if (flat_index < n) return t.data()[flat_index];
    flat_index -= n;
  }
  throw Error("flat parameter index out of range");
}

nlohmann::json ParamSet::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& t = tensors_[i];
    // Column-major, matching Eigen storage.
    std::vector<double> data(t.data(), t.data() + t.size());
    out.push_back({{"name", names_[i]}, {"rows", t.rows()}, {"cols", t.cols()}, {"data", std::move(data)}});
  }
  return out;
}

void ParamSet::assign_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != size())
    throw FormatError("tensor list does not match the model layout");
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& e = j[i];
    auto& t = tensors_[i];
    if (e.at("name").get<std::string>() != names_[i] || e.at("rows").get<Eigen::Index>() != t.rows() ||
        e.at("cols").get<Eigen::Index>() != t.cols())
      throw FormatError("tensor " + names_[i] + " does not match the model layout");
    const auto& data = e.at("data");
    if (data.size() != static_cast<std::size_t>(t.size()))
      throw FormatError("tensor " + names_[i] + " has the wrong number of values");
    for (std::size_t k = 0; k < data.size(); ++k) t.data()[k] = data[k].get<double>();
  }
}

void fill_normal(Eigen::MatrixXd& m, double stddev, Rng& rng) {
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = stddev * rng.normal();
}

void fill_uniform(Eigen::MatrixXd& m, double bound, Rng& rng) {
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.uniform(-bound, bound);
}

}  // namespace pagectx
