#pragma once

// Frame-to-frame motion from feature matches: a PnP term for matches whose
// previous observation carries a depth and an epipolar term for every match,
// both under a Cauchy loss.

#include <optional>
#include <vector>

#include "lidarvo/error.hpp"
#include "lidarvo/geometry.hpp"
#include "lidarvo/nlls/solver.hpp"

namespace lidarvo {

struct FrameMatch {
  Vec2 current;   // p-bar
  Vec2 previous;  // p-tilde
  std::optional<double> depth_previous;
};

struct FrameMatchSet {
  std::vector<FrameMatch> matches;
  CameraIntrinsics intrinsics;
};

struct PriorConfig {
  double pnp_loss_scale = 1.0;        // pixels
  double epipolar_loss_scale = 1.0;
  double pnp_weight = 1.0;
  double epipolar_weight = 1.0;
  bool use_epipolar = true;
  /// PnP matches whose point lands closer than this to the image plane at the
  /// initial motion are used for the epipolar term only.
  double min_initial_depth = 0.1;
  nlls::SolverOptions solver;
};

namespace residuals {

/// p-bar - pi(motion * backproject(p-tilde, d)).
struct PnP {
  Vec2 current;
  Vec2 previous;
  double depth;
  CameraIntrinsics k;

  template <typename T>
  bool operator()(const PoseT<T>& motion, T* r) const {
    const Eigen::Matrix<T, 3, 1> x = motion * backproject<T>(previous, T(depth), k);
    if (!(scalar_value(x(2)) > kMinDepth)) return false;
    const Eigen::Matrix<T, 2, 1> px = project_unchecked<T>(x, k);
    r[0] = T(current.x()) - px(0);
    r[1] = T(current.y()) - px(1);
    return true;
  }
};

/// p-bar^T F(motion) p-tilde with F of unit Frobenius norm.
struct Epipolar {
  Vec2 current;
  Vec2 previous;
  CameraIntrinsics k;

  template <typename T>
  bool operator()(const PoseT<T>& motion, T* r) const {
    const Eigen::Matrix<T, 3, 3> f = fundamental_matrix<T>(motion.rotation, motion.translation, k);
    const Eigen::Matrix<T, 3, 1> a = current.homogeneous().cast<T>();
    const Eigen::Matrix<T, 3, 1> b = previous.homogeneous().cast<T>();
    r[0] = a.dot(f * b);
    return true;
  }
};

}  // namespace residuals

/// Throws NonPositiveDepth when the transformed point is not in front of the
/// current camera.
inline Vec2 pnp_residual(const FrameMatch& m, const Pose& motion, const CameraIntrinsics& k) {
  if (!m.depth_previous) throw Error("PnP residual needs a depth");
  const Vec3 x = motion * backproject<double>(m.previous, *m.depth_previous, k);
  return m.current - project(x, k);
}

inline double epipolar_residual(const FrameMatch& m, const Pose& motion, const CameraIntrinsics& k) {
  return m.current.homogeneous().dot(fundamental_matrix(motion, k) * m.previous.homogeneous());
}

struct PriorEstimate {
  Pose motion;
  int pnp_residuals = 0;
  int epipolar_residuals = 0;
  bool translation_norm_fixed = false;
  nlls::SolverSummary summary;
};

/// Motion mapping previous-camera into current-camera coordinates that
/// minimizes the robust joint PnP and epipolar cost, started from `init`.
/// Without any depth the translation length stays at its initial value.
/// Throws Underconstrained with fewer than 3 depth matches and fewer than 8
/// matches overall, or without depth when `init` has no translation.
inline PriorEstimate estimate_prior(const FrameMatchSet& set, const Pose& init,
                                    const PriorConfig& cfg = {}) {
  int with_depth = 0;
  for (const auto& m : set.matches)
    if (m.depth_previous && *m.depth_previous > 0.0) ++with_depth;
  if (with_depth < 3 && set.matches.size() < 8)
    throw Underconstrained("motion prior needs 3 matches with depth or 8 matches, got " +
                           std::to_string(with_depth) + " and " + std::to_string(set.matches.size()));

  if (with_depth == 0 && init.translation().norm() < 1e-12)
    throw Underconstrained("motion prior without depth needs a non-zero initial translation");

  PriorEstimate out;
  out.motion = init;
  nlls::Problem problem;
  const auto& k = set.intrinsics;
  nlls::ParameterId pose_id;
  if (with_depth == 0) {
    pose_id = problem.add_pose_fixed_translation_norm(&out.motion);
    out.translation_norm_fixed = true;
  } else {
    pose_id = problem.add_pose(&out.motion);
  }
  const auto pnp_loss = nlls::RobustLoss::cauchy(cfg.pnp_loss_scale);
  const auto epi_loss = nlls::RobustLoss::cauchy(cfg.epipolar_loss_scale);
  for (const auto& m : set.matches) {
    if (m.depth_previous && *m.depth_previous > 0.0 &&
        (init * backproject<double>(m.previous, *m.depth_previous, k)).z() > cfg.min_initial_depth) {
      problem.add_residual(
          nlls::make_autodiff<2, nlls::PoseBlock>(residuals::PnP{m.current, m.previous, *m.depth_previous, k}),
          {pose_id}, pnp_loss, cfg.pnp_weight, nlls::ResidualTag::PnP);
      ++out.pnp_residuals;
    }
    if (!cfg.use_epipolar && !out.translation_norm_fixed) continue;
    problem.add_residual(
        nlls::make_autodiff<1, nlls::PoseBlock>(residuals::Epipolar{m.current, m.previous, k}), {pose_id},
        epi_loss, cfg.epipolar_weight, nlls::ResidualTag::Epipolar);
    ++out.epipolar_residuals;
  }
  out.summary = nlls::solve_lm(problem, cfg.solver);
  return out;
}

}  // namespace lidarvo
