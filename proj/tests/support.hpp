#pragma once

// Small generators for property tests.

#include <cmath>
#include <random>
#include <vector>

#include "batmil/rng.hpp"
#include "batmil/tensor.hpp"

namespace testsupport {

inline std::vector<double> gaussian(std::size_t n, batmil::Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = nd(rng);
  return v;
}

inline double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Uniform direction with norm drawn uniformly from [0, max_norm].
inline std::vector<double> in_ball(std::size_t n, double max_norm, batmil::Rng& rng) {
  std::vector<double> v = gaussian(n, rng);
  const double nv = norm(v);
  std::uniform_real_distribution<double> r(0.0, max_norm);
  const double target = r(rng);
  for (double& x : v) x *= nv > 0 ? target / nv : 0.0;
  return v;
}

inline batmil::Tensor random_tensor(std::size_t rows, std::size_t cols, batmil::Rng& rng, double scale = 1.0) {
  return batmil::Tensor(rows, cols, gaussian(rows * cols, rng, scale));
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace testsupport
