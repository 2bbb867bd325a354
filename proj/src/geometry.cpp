#include "batmil/geometry.hpp"

#include <cmath>
#include <string>

namespace batmil::geometry {

Curvature::Curvature(double c) : c_(c), sqrt_c_(std::sqrt(c)) {
  if (!std::isfinite(c) || c <= 0.0) throw DomainError("curvature must be finite and > 0, got " + std::to_string(c));
}

namespace raw {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw DomainError(std::string(what) + ": non-finite input");
  }
}

void require_interior(std::span<const double> y, Curvature c, const char* what) {
  require_finite(y, what);
  if (c.sqrt_c() * norm(y) >= 1.0) throw DomainError(std::string(what) + ": point on or outside the ball boundary");
}

void mobius_add(std::span<const double> x, std::span<const double> y, Curvature c, std::span<double> out) {
  if (x.size() != y.size() || out.size() != x.size()) throw ShapeError("mobius_add: dimension mismatch");
  const double cv = c.value();
  const double xy = dot(x, y);
  const double x2 = dot(x, x);
  const double y2 = dot(y, y);
  const double a = 1.0 + 2.0 * cv * xy + cv * y2;
  const double b = 1.0 - cv * x2;
  const double den = 1.0 + 2.0 * cv * xy + cv * cv * x2 * y2;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (a * x[i] + b * y[i]) / den;
}

void exp_map0(std::span<const double> v, Curvature c, std::span<double> out) {
  const double s = c.sqrt_c() * norm(v);
  const double scale = s < kSmallNorm ? 1.0 : std::tanh(s) / s;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = scale * v[i];
}

void log_map0(std::span<const double> y, Curvature c, std::span<double> out) {
  const double s = c.sqrt_c() * norm(y);
  const double scale = s < kSmallNorm ? 1.0 : std::atanh(s) / s;
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = scale * y[i];
}

double project_to_ball(std::span<const double> y, Curvature c, double eps, std::span<double> out) {
  const double max_norm = (1.0 - eps) / c.sqrt_c();
  const double n = norm(y);
  const double scale = n > max_norm ? max_norm / n : 1.0;
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = scale * y[i];
  return scale;
}

}  // namespace raw

BallPoint negate(const BallPoint& x) {
  BallPoint r{x.coords};
  for (double& v : r.coords) v = -v;
  return r;
}

BallPoint project_to_ball(std::span<const double> y, Curvature c, double eps) {
  raw::require_finite(y, "project_to_ball");
  BallPoint out{std::vector<double>(y.size())};
  raw::project_to_ball(y, c, eps, out.coords);
  return out;
}

BallPoint mobius_add(const BallPoint& x, const BallPoint& y, Curvature c) {
  raw::require_interior(x.coords, c, "mobius_add");
  raw::require_interior(y.coords, c, "mobius_add");
  if (x.coords.size() != y.coords.size()) throw ShapeError("mobius_add: dimension mismatch");
  std::vector<double> sum(x.coords.size());
  raw::mobius_add(x.coords, y.coords, c, sum);
  return project_to_ball(sum, c);
}

BallPoint exp_map0(const TangentVector& v, Curvature c) {
  raw::require_finite(v.coords, "exp_map0");
  std::vector<double> out(v.coords.size());
  raw::exp_map0(v.coords, c, out);
  return project_to_ball(out, c);
}

TangentVector log_map0(const BallPoint& y, Curvature c) {
  raw::require_interior(y.coords, c, "log_map0");
  TangentVector out{std::vector<double>(y.coords.size())};
  raw::log_map0(y.coords, c, out.coords);
  return out;
}

double hyp_distance(const BallPoint& x, const BallPoint& y, Curvature c) {
  if (x.coords == y.coords) return 0.0;
  const BallPoint diff = mobius_add(negate(x), y, c);
  const double s = c.sqrt_c() * raw::norm(diff.coords);
  return 2.0 / c.sqrt_c() * std::atanh(s);
}

}  // namespace batmil::geometry
