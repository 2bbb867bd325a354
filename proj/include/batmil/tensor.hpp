#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "batmil/error.hpp"

namespace batmil {

/// Dense row-major matrix of doubles. Vectors are 1×n.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw ShapeError("Tensor: value count does not match shape");
  }

  static Tensor row_vector(std::span<const double> v) { return Tensor(1, v.size(), std::vector<double>(v.begin(), v.end())); }

  std::size_t size() const { return data.size(); }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

std::string shape_str(const Tensor& t);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// Round every entry to the nearest float32 value.
void round_to_float(Tensor& t);

}  // namespace batmil
