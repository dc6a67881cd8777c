#pragma once

#include <span>
#include <vector>

namespace siflow {

/// Natural cubic spline through (x_i, y_i) with strictly increasing x.
/// Evaluation outside [x_0, x_n] extrapolates the end cubic pieces.
class CubicSpline {
 public:
  CubicSpline() = default;
  CubicSpline(std::span<const double> x, std::span<const double> y);

  double value(double x) const;
  double derivative(double x) const;
  double operator()(double x) const { return value(x); }

 private:
  std::size_t segment(double x) const;

  std::vector<double> x_;
  std::vector<double> y_;
  std::vector<double> m_;  // second derivatives at the knots
};

}  // namespace siflow
