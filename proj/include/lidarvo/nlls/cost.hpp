#pragma once

// Residual functions and their automatic differentiation.
//
// A cost function differentiates with respect to the local increment of each
// parameter block: 6 entries (omega, v) for a pose, where the pose moves as
// R <- (I + [omega]x) R, t <- t + v to first order, and n entries for an
// n-vector. The problem maps local increments onto each block's tangent space.

#include <array>
#include <memory>
#include <span>
#include <utility>

#include <Eigen/Core>
#include <unsupported/Eigen/AutoDiff>

#include "lidarvo/geometry.hpp"

namespace lidarvo::nlls {

enum class ParameterKind { Vector, Pose, PoseFixedTranslationNorm };

/// Read-only view of a parameter block handed to cost functions.
struct ParameterView {
  const Pose* pose = nullptr;
  const double* values = nullptr;
  int size = 0;
};

inline int local_size(ParameterKind kind, int vector_size) {
  return kind == ParameterKind::Vector ? vector_size : 6;
}

class CostFunction {
 public:
  virtual ~CostFunction() = default;

  virtual int num_residuals() const = 0;

  /// Writes the residual vector and, when `jacobian` is non-null, the
  /// residual Jacobian with respect to the stacked local increments
  /// (num_residuals x sum of local sizes). Returns false when the residual is
  /// undefined at these parameters.
  virtual bool evaluate(std::span<const ParameterView> parameters, double* residuals,
                        Eigen::MatrixXd* jacobian) const = 0;
};

template <int N>
using Jet = Eigen::AutoDiffScalar<Eigen::Matrix<double, N, 1>>;

struct PoseBlock {
  static constexpr int kLocalSize = 6;

  template <typename T>
  using Lifted = PoseT<T>;

  template <typename T, int N>
  static PoseT<T> lift(const ParameterView& view, int offset) {
    const Pose& p = *view.pose;
    if constexpr (std::is_same_v<T, double>) {
      return PoseT<double>::from(p);
    } else {
      Eigen::Matrix<T, 3, 1> omega;
      Eigen::Matrix<T, 3, 1> v;
      for (int i = 0; i < 3; ++i) {
        omega(i) = T(0.0, N, offset + i);
        v(i) = T(0.0, N, offset + 3 + i);
      }
      const Eigen::Matrix<T, 3, 3> delta = Eigen::Matrix<T, 3, 3>::Identity() + skew<T>(omega);
      return {delta * p.rotation().cast<T>(), p.translation().cast<T>() + v};
    }
  }
};

template <int Size>
struct VectorBlock {
  static constexpr int kLocalSize = Size;

  template <typename T>
  using Lifted = Eigen::Matrix<T, Size, 1>;

  template <typename T, int N>
  static Eigen::Matrix<T, Size, 1> lift(const ParameterView& view, int offset) {
    Eigen::Matrix<T, Size, 1> x;
    for (int i = 0; i < Size; ++i) {
      if constexpr (std::is_same_v<T, double>) {
        x(i) = view.values[i];
      } else {
        x(i) = T(view.values[i], N, offset + i);
      }
    }
    return x;
  }
};

/// Wraps a functor
///   template <typename T> bool operator()(const Blocks::Lifted<T>&..., T* residuals) const
/// into a CostFunction with forward-mode automatic derivatives.
template <typename Functor, int kResiduals, typename... Blocks>
class AutoDiffCost final : public CostFunction {
 public:
  static constexpr int kLocalTotal = (Blocks::kLocalSize + ...);
  using JetT = Jet<kLocalTotal>;

  explicit AutoDiffCost(Functor functor) : functor_(std::move(functor)) {}

  const Functor& functor() const { return functor_; }
  int num_residuals() const override { return kResiduals; }

  bool evaluate(std::span<const ParameterView> parameters, double* residuals,
                Eigen::MatrixXd* jacobian) const override {
    if (parameters.size() != sizeof...(Blocks)) return false;
    return evaluate_impl(parameters, residuals, jacobian, std::index_sequence_for<Blocks...>{});
  }

 private:
  static constexpr std::array<int, sizeof...(Blocks)> offsets() {
    std::array<int, sizeof...(Blocks)> out{};
    const std::array<int, sizeof...(Blocks)> sizes{Blocks::kLocalSize...};
    int acc = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      out[i] = acc;
      acc += sizes[i];
    }
    return out;
  }

  template <std::size_t... I>
  bool evaluate_impl(std::span<const ParameterView> parameters, double* residuals,
                     Eigen::MatrixXd* jacobian, std::index_sequence<I...>) const {
    constexpr auto kOffsets = offsets();
    if (jacobian == nullptr) {
      return functor_(Blocks::template lift<double, kLocalTotal>(parameters[I], kOffsets[I])...,
                      residuals);
    }
    std::array<JetT, kResiduals> out;
    const bool ok =
        functor_(Blocks::template lift<JetT, kLocalTotal>(parameters[I], kOffsets[I])...,
                 out.data());
    if (!ok) return false;
    jacobian->resize(kResiduals, kLocalTotal);
    for (int r = 0; r < kResiduals; ++r) {
      residuals[r] = out[r].value();
      if (out[r].derivatives().size() == kLocalTotal) {
        jacobian->row(r) = out[r].derivatives().transpose();
      } else {
        jacobian->row(r).setZero();
      }
    }
    return true;
  }

  Functor functor_;
};

template <int kResiduals, typename... Blocks, typename Functor>
std::shared_ptr<const CostFunction> make_autodiff(Functor functor) {
  return std::make_shared<AutoDiffCost<Functor, kResiduals, Blocks...>>(std::move(functor));
}

}  // namespace lidarvo::nlls
