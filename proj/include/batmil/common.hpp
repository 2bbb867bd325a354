#pragma once

#include <cmath>
#include <cstddef>
#include <random>

#include "batmil/rng.hpp"
#include "batmil/tensor.hpp"

namespace batmil {

enum class Mode { train, eval };

inline bool is_training(Mode m) { return m == Mode::train; }

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, rounded to float32.
inline Tensor init_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(rows, cols);
  for (double& v : t.data) v = dist(rng);
  round_to_float(t);
  return t;
}

}  // namespace batmil
