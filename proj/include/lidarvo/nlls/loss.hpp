#pragma once

#include <cmath>

#include <Eigen/Core>

#include "lidarvo/error.hpp"

namespace lidarvo::nlls {

struct CauchyValue {
  double value;
  double derivative;
};

/// rho(x) = a^2 log(1 + x / a^2) on a squared residual x, with its first
/// derivative 1 / (1 + x / a^2).
inline CauchyValue cauchy(double x, double a) {
  const double a2 = a * a;
  return {a2 * std::log1p(x / a2), 1.0 / (1.0 + x / a2)};
}

class RobustLoss {
 public:
  enum class Kind { Trivial, Cauchy };

  RobustLoss() = default;

  static RobustLoss trivial() { return {}; }
  static RobustLoss cauchy(double scale) {
    if (!(scale > 0.0)) throw Error("robust loss scale must be positive");
    RobustLoss loss;
    loss.kind_ = Kind::Cauchy;
    loss.scale_ = scale;
    return loss;
  }

  Kind kind() const noexcept { return kind_; }
  double scale() const noexcept { return scale_; }

  /// (rho, rho', rho'') at squared norm s.
  Eigen::Vector3d evaluate(double s) const {
    if (kind_ == Kind::Trivial) return {s, 1.0, 0.0};
    const double a2 = scale_ * scale_;
    const double inv = 1.0 / (1.0 + s / a2);
    return {a2 * std::log1p(s / a2), inv, -inv * inv / a2};
  }

 private:
  Kind kind_ = Kind::Trivial;
  double scale_ = 1.0;
};

}  // namespace lidarvo::nlls
