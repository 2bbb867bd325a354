#pragma once

// Poincare-ball operations at curvature -c (c > 0). Ball radius is 1/sqrt(c).
// Everything here runs in double precision.

#include <span>
#include <vector>

#include "batmil/error.hpp"

namespace batmil::geometry {

/// Margin used when clamping points back inside the ball.
inline constexpr double kBallEps = 1e-5;

/// Below this value of sqrt(c)*|v| the exp/log maps use their first-order limit.
inline constexpr double kSmallNorm = 1e-8;

/// Magnitude of the ball curvature. Always finite and strictly positive.
class Curvature {
 public:
  explicit Curvature(double c);
  double value() const { return c_; }
  double sqrt_c() const { return sqrt_c_; }
  /// Radius of the open ball, 1/sqrt(c).
  double radius() const { return 1.0 / sqrt_c_; }

 private:
  double c_;
  double sqrt_c_;
};

/// A point strictly inside the ball.
struct BallPoint {
  std::vector<double> coords;
};

/// A vector in the tangent space at the origin.
struct TangentVector {
  std::vector<double> coords;
};

BallPoint mobius_add(const BallPoint& x, const BallPoint& y, Curvature c);
BallPoint exp_map0(const TangentVector& v, Curvature c);
TangentVector log_map0(const BallPoint& y, Curvature c);
double hyp_distance(const BallPoint& x, const BallPoint& y, Curvature c);
BallPoint project_to_ball(std::span<const double> y, Curvature c, double eps = kBallEps);

/// Additive inverse in the gyrogroup: coordinate negation.
BallPoint negate(const BallPoint& x);

// Span-level kernels shared with the differentiable ops. `out` must have
// the input's length; no domain checks beyond what is documented.
namespace raw {

double norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

/// Throws DomainError if any entry is non-finite.
void require_finite(std::span<const double> v, const char* what);

/// Throws DomainError unless |y| < 1/sqrt(c).
void require_interior(std::span<const double> y, Curvature c, const char* what);

void mobius_add(std::span<const double> x, std::span<const double> y, Curvature c, std::span<double> out);

/// exp_0^c(v) = tanh(sqrt(c)|v|) v / (sqrt(c)|v|)
void exp_map0(std::span<const double> v, Curvature c, std::span<double> out);

/// log_0^c(y) = artanh(sqrt(c)|y|) y / (sqrt(c)|y|)
void log_map0(std::span<const double> y, Curvature c, std::span<double> out);

/// Rescale onto norm (1-eps)/sqrt(c) when outside it; returns the factor applied.
double project_to_ball(std::span<const double> y, Curvature c, double eps, std::span<double> out);

}  // namespace raw

}  // namespace batmil::geometry
