#include "batmil/tensor.hpp"

namespace batmil {

std::string shape_str(const Tensor& t) { return std::to_string(t.rows) + "x" + std::to_string(t.cols); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": shape " + shape_str(a) + " vs " + shape_str(b));
}

void round_to_float(Tensor& t) {
  for (double& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace batmil
