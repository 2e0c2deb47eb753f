#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "lidarvo/error.hpp"
#include "lidarvo/nlls/cost.hpp"
#include "lidarvo/nlls/loss.hpp"

namespace lidarvo::nlls {

enum class ResidualTag { Reprojection, Depth, ScaleRegularizer, Epipolar, PnP };

inline const char* to_string(ResidualTag tag) {
  switch (tag) {
    case ResidualTag::Reprojection: return "reprojection";
    case ResidualTag::Depth: return "depth";
    case ResidualTag::ScaleRegularizer: return "scale";
    case ResidualTag::Epipolar: return "epipolar";
    case ResidualTag::PnP: return "pnp";
  }
  return "?";
}

using ParameterId = std::size_t;
using ResidualId = std::size_t;

struct ParameterBlock {
  ParameterKind kind = ParameterKind::Vector;
  Pose* pose = nullptr;
  double* values = nullptr;
  int size = 0;
  bool constant = false;
  bool removed = false;
  double translation_norm = 0.0;  // PoseFixedTranslationNorm only

  int local_size() const { return nlls::local_size(kind, size); }
  int tangent_size() const {
    switch (kind) {
      case ParameterKind::Vector: return size;
      case ParameterKind::Pose: return 6;
      case ParameterKind::PoseFixedTranslationNorm: return 5;
    }
    return 0;
  }
  ParameterView view() const { return {pose, values, size}; }
};

struct ResidualBlock {
  std::shared_ptr<const CostFunction> cost;
  std::vector<ParameterId> parameters;
  RobustLoss loss;
  double weight = 1.0;
  ResidualTag tag = ResidualTag::Reprojection;
  bool removed = false;
};

/// A set of residual blocks over parameter blocks owned by the caller. The
/// solver updates the caller's storage in place.
class Problem {
 public:
  ParameterId add_vector(double* values, int size) {
    if (values == nullptr || size <= 0) throw Error("invalid vector parameter block");
    ParameterBlock b;
    b.kind = ParameterKind::Vector;
    b.values = values;
    b.size = size;
    parameters_.push_back(b);
    return parameters_.size() - 1;
  }

  ParameterId add_pose(Pose* pose) {
    if (pose == nullptr) throw Error("null pose parameter block");
    ParameterBlock b;
    b.kind = ParameterKind::Pose;
    b.pose = pose;
    parameters_.push_back(b);
    return parameters_.size() - 1;
  }

  /// A pose whose translation length stays at its current value; only the
  /// rotation and the translation direction are optimized.
  ParameterId add_pose_fixed_translation_norm(Pose* pose) {
    const ParameterId id = add_pose(pose);
    parameters_[id].kind = ParameterKind::PoseFixedTranslationNorm;
    parameters_[id].translation_norm = pose->translation().norm();
    return id;
  }

  void set_constant(ParameterId id, bool constant = true) { parameter(id).constant = constant; }

  ResidualId add_residual(std::shared_ptr<const CostFunction> cost,
                          std::vector<ParameterId> parameter_ids, RobustLoss loss = {},
                          double weight = 1.0, ResidualTag tag = ResidualTag::Reprojection) {
    if (!cost) throw Error("null cost function");
    if (!(weight > 0.0)) throw Error("residual weight must be positive");
    if (parameter_ids.empty()) throw Error("residual block without parameters");
    for (ParameterId p : parameter_ids) {
      if (p >= parameters_.size() || parameters_[p].removed)
        throw Error("residual references unknown parameter block");
    }
    residuals_.push_back({std::move(cost), std::move(parameter_ids), loss, weight, tag, false});
    return residuals_.size() - 1;
  }

  void remove_residual(ResidualId id) { residual(id).removed = true; }

  /// Removes every parameter block that no active residual references.
  std::vector<ParameterId> remove_orphan_parameters() {
    std::vector<int> refs(parameters_.size(), 0);
    for (const auto& r : residuals_) {
      if (r.removed) continue;
      for (ParameterId p : r.parameters) ++refs[p];
    }
    std::vector<ParameterId> removed;
    for (ParameterId p = 0; p < parameters_.size(); ++p) {
      if (!parameters_[p].removed && refs[p] == 0) {
        parameters_[p].removed = true;
        removed.push_back(p);
      }
    }
    return removed;
  }

  const std::vector<ParameterBlock>& parameters() const { return parameters_; }
  const std::vector<ResidualBlock>& residuals() const { return residuals_; }
  ParameterBlock& parameter(ParameterId id) {
    if (id >= parameters_.size()) throw Error("unknown parameter block");
    return parameters_[id];
  }
  const ResidualBlock& residual(ResidualId id) const {
    if (id >= residuals_.size()) throw Error("unknown residual block");
    return residuals_[id];
  }
  ResidualBlock& residual(ResidualId id) {
    if (id >= residuals_.size()) throw Error("unknown residual block");
    return residuals_[id];
  }

  std::size_t num_active_residuals() const {
    std::size_t n = 0;
    for (const auto& r : residuals_) n += r.removed ? 0 : 1;
    return n;
  }
  bool is_active(ParameterId id) const { return !parameters_.at(id).removed; }

  /// Raw residual vector of one block at the current parameters.
  Eigen::VectorXd residual_vector(ResidualId id) const {
    const ResidualBlock& r = residual(id);
    Eigen::VectorXd out(r.cost->num_residuals());
    std::vector<ParameterView> views;
    for (ParameterId p : r.parameters) views.push_back(parameters_[p].view());
    if (!r.cost->evaluate(views, out.data(), nullptr))
      out.setConstant(std::numeric_limits<double>::quiet_NaN());
    return out;
  }

  /// 0.5 * sum of weight * rho(|r|^2) over active residual blocks, or +inf
  /// when any residual is undefined.
  double cost() const {
    double total = 0.0;
    std::vector<ParameterView> views;
    Eigen::VectorXd r;
    for (const auto& block : residuals_) {
      if (block.removed) continue;
      views.clear();
      for (ParameterId p : block.parameters) views.push_back(parameters_[p].view());
      r.resize(block.cost->num_residuals());
      if (!block.cost->evaluate(views, r.data(), nullptr) || !r.allFinite())
        return std::numeric_limits<double>::infinity();
      total += 0.5 * block.weight * block.loss.evaluate(r.squaredNorm())(0);
    }
    return total;
  }

 private:
  std::vector<ParameterBlock> parameters_;
  std::vector<ResidualBlock> residuals_;
};

}  // namespace lidarvo::nlls
