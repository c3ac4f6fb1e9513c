#pragma once

// Independent oracles shared by the test suites. Nothing here calls the code
// under test except to read parameters or evaluate losses.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "pagectx/params.hpp"

namespace testing {

struct GradCheck {
  double worst_relative = 0.0;
  std::string worst_name;
  std::size_t checked = 0;
};

/// Central differences over every coordinate of `params`; `loss` must
/// evaluate the objective at the current parameter values. Relative error is
/// |a - n| / max(|a|, |n|, floor).
inline GradCheck central_difference_check(pagectx::ParamSet& params, const pagectx::ParamSet& analytic,
                                          const std::function<double()>& loss, double h = 1e-4,
                                          double floor = 1e-6) {
  GradCheck out;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& m = params[p];
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      const double saved = m.data()[k];
      m.data()[k] = saved + h;
      const double up = loss();
      m.data()[k] = saved - h;
      const double down = loss();
      m.data()[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p].data()[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (rel > out.worst_relative) {
        out.worst_relative = rel;
        out.worst_name = params.name(p) + "[" + std::to_string(k) + "]";
      }
      ++out.checked;
    }
  }
  return out;
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix; eigenvalues in
/// descending order.
inline std::vector<double> jacobi_eigenvalues(Eigen::MatrixXd a, double tol = 1e-14, int max_sweeps = 100) {
  const auto n = a.rows();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) off += a(i, j) * a(i, j);
    if (off <= tol * tol * std::max(1.0, a.squaredNorm())) break;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = a(i, i);
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

/// Upper regularized incomplete gamma Q(a, x): power series for x < a + 1,
/// modified Lentz continued fraction otherwise.
inline double upper_incomplete_gamma_q(double a, double x) {
  if (x <= 0.0) return 1.0;
  const double log_prefix = a * std::log(x) - x - std::lgamma(a);
  if (x < a + 1.0) {
    double term = 1.0 / a, sum = term;
    for (int n = 1; n < 10000; ++n) {
      term *= x / (a + n);
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-17) break;
    }
    return 1.0 - sum * std::exp(log_prefix);
  }
  const double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-17) break;
  }
  return std::exp(log_prefix) * h;
}

inline double chi_square_tail(double statistic, double dof) { return upper_incomplete_gamma_q(dof / 2.0, statistic / 2.0); }

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pagectx-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
