#pragma once

// Keyframe selection, landmark selection and the windowed bundle adjustment
// with reprojection, LIDAR depth and scale terms.
//
// Poses are camera-from-world; a landmark l is seen by keyframe P at P * l.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "lidarvo/error.hpp"
#include "lidarvo/geometry.hpp"
#include "lidarvo/nlls/solver.hpp"
#include "lidarvo/tracking.hpp"

namespace lidarvo {

enum class FrameClass { Rejected, Required, Sparsifiable };
enum class KeyframeCategory { Required, Sparsified };
enum class DepthBin { Near, Middle, Far };

inline const char* to_string(FrameClass c) {
  switch (c) {
    case FrameClass::Rejected: return "rejected";
    case FrameClass::Required: return "required";
    case FrameClass::Sparsifiable: return "sparsifiable";
  }
  return "?";
}

inline const char* to_string(DepthBin b) {
  switch (b) {
    case DepthBin::Near: return "near";
    case DepthBin::Middle: return "middle";
    case DepthBin::Far: return "far";
  }
  return "?";
}

struct WindowConfig {
  double keyframe_interval = 0.3;       // seconds
  double turn_angle_threshold = 0.015;  // rad per frame
  double min_mean_flow = 2.0;           // pixels
  int min_connectivity = 10;
  int window_min = 4;
  int window_max = 10;

  double near_limit = 30.0;    // meters
  double middle_limit = 80.0;  // meters
  int quota_near = 100;
  int quota_middle = 100;
  int quota_far = 100;
  double voxel_near = 0.5;    // meters
  double voxel_middle = 2.0;  // meters
  double voxel_far = 0.0;     // 0 disables the filter
  double vegetation_weight = 0.9;
  std::uint64_t seed = 7;

  double w0 = 10.0;  // scale regularizer
  double w1 = 1.0;   // reprojection
  double w2 = 5.0;   // depth
  double reprojection_loss = 1.0;  // Cauchy scale, pixels
  double depth_loss = 0.3;         // Cauchy scale, meters
  bool auto_balance = true;
  double balance_min = 1e-3;
  double balance_max = 1e3;
  // mean block cost below which a class counts as already fitted and w2 is left alone
  double balance_floor = 1e-4;
  bool squared_scale = true;
  bool use_scale_regularizer = true;
  bool use_depth = true;

  void validate() const {
    if (!(keyframe_interval >= 0.0)) throw ConfigError("keyframe_interval must be non-negative");
    if (!(turn_angle_threshold > 0.0)) throw ConfigError("turn_angle_threshold must be positive");
    if (!(min_mean_flow >= 0.0)) throw ConfigError("min_mean_flow must be non-negative");
    if (min_connectivity < 0) throw ConfigError("min_connectivity must be non-negative");
    if (window_min < 2 || window_min > window_max)
      throw ConfigError("window sizes must satisfy 2 <= window_min <= window_max");
    if (!(near_limit > 0.0 && near_limit < middle_limit))
      throw ConfigError("bin boundaries must be positive and increasing");
    if (quota_near < 0 || quota_middle < 0 || quota_far < 0)
      throw ConfigError("bin quotas must be non-negative");
    if (voxel_near < 0 || voxel_middle < 0 || voxel_far < 0)
      throw ConfigError("voxel sizes must be non-negative");
    if (!(vegetation_weight > 0.0 && vegetation_weight <= 1.0))
      throw ConfigError("vegetation_weight must lie in (0, 1]");
    if (!(w0 > 0 && w1 > 0 && w2 > 0)) throw ConfigError("cost weights must be positive");
    if (!(reprojection_loss > 0 && depth_loss > 0)) throw ConfigError("loss scales must be positive");
    if (!(balance_min > 0 && balance_min <= balance_max)) throw ConfigError("invalid balance clamp");
    if (!(balance_floor >= 0.0)) throw ConfigError("balance_floor must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// Keyframes

inline FrameClass classify_frame(const Pose& prior_motion, double mean_flow, const WindowConfig& cfg) {
  if (mean_flow < cfg.min_mean_flow) return FrameClass::Rejected;
  if (prior_motion.rotation_angle() >= cfg.turn_angle_threshold) return FrameClass::Required;
  return FrameClass::Sparsifiable;
}

/// Streaming keyframe decision. The first offered non-rejected frame is
/// always taken.
class KeyframeSelector {
 public:
  explicit KeyframeSelector(double interval) : interval_(interval) {}

  std::optional<KeyframeCategory> offer(double timestamp, FrameClass c) {
    if (c == FrameClass::Rejected) return std::nullopt;
    if (c == FrameClass::Required) {
      last_ = timestamp;
      return KeyframeCategory::Required;
    }
    // timestamps sampled at a fixed rate carry rounding noise
    if (last_ && timestamp - *last_ < interval_ - 1e-9) return std::nullopt;
    last_ = timestamp;
    return KeyframeCategory::Sparsified;
  }

  /// Marks a keyframe taken outside offer(), e.g. the first frame.
  void force(double timestamp) { last_ = timestamp; }

 private:
  double interval_;
  std::optional<double> last_;
};

struct ClassifiedFrame {
  double timestamp;
  FrameClass frame_class;
};

inline std::vector<bool> select_keyframes(const std::vector<ClassifiedFrame>& frames,
                                          const WindowConfig& cfg) {
  KeyframeSelector sel(cfg.keyframe_interval);
  std::vector<bool> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(sel.offer(f.timestamp, f.frame_class).has_value());
  return out;
}

/// `tracks_newest_first[i]` holds the track ids seen by the i-th newest
/// keyframe. Returns the number of keyframes to optimize.
inline int window_length(const std::vector<std::set<int>>& tracks_newest_first, const WindowConfig& cfg) {
  if (tracks_newest_first.empty()) throw Error("window_length needs at least one keyframe");
  const int available = static_cast<int>(tracks_newest_first.size());
  const auto& newest = tracks_newest_first.front();
  int n = 1;
  while (n < std::min(available, cfg.window_max)) {
    const auto& s = tracks_newest_first[static_cast<std::size_t>(n)];
    int shared = 0;
    for (int id : s) shared += newest.count(id) ? 1 : 0;
    if (shared < cfg.min_connectivity) break;
    ++n;
  }
  return std::max(n, std::min(cfg.window_min, available));
}

// ---------------------------------------------------------------------------
// Landmarks

struct Keyframe {
  int frame_id = 0;
  double timestamp = 0.0;
  Pose pose;  // camera-from-world
  KeyframeCategory category = KeyframeCategory::Sparsified;
};

struct LandmarkObservation {
  int frame_id = 0;
  Vec2 pixel = Vec2::Zero();
  std::optional<double> depth;
};

struct Landmark {
  int track_id = 0;
  Vec3 position = Vec3::Zero();  // world
  DepthBin bin = DepthBin::Near;
  double weight = 1.0;
  std::vector<LandmarkObservation> observations;
};

struct LandmarkCandidate {
  int track_id = 0;
  Vec3 position = Vec3::Zero();
  SemanticLabel label = SemanticLabel::Unknown;
  std::vector<LandmarkObservation> observations;
  double flow = 0.0;     // pixels, used to rank near landmarks
  int track_length = 0;  // observations over the whole track, ranks far ones
};

/// Mean pixel displacement between consecutive observations.
inline double mean_flow(const std::vector<LandmarkObservation>& obs) {
  if (obs.size() < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 1; i < obs.size(); ++i) sum += (obs[i].pixel - obs[i - 1].pixel).norm();
  return sum / static_cast<double>(obs.size() - 1);
}

namespace detail {

inline const Pose* find_pose(const std::vector<Keyframe>& kfs, int frame_id) {
  for (const auto& k : kfs)
    if (k.frame_id == frame_id) return &k.pose;
  return nullptr;
}

/// One candidate per occupied voxel: the one nearest the voxel's
/// coordinate-wise median, lower track id on ties.
inline std::vector<LandmarkCandidate> voxel_filter(std::vector<LandmarkCandidate> in, double size) {
  if (size <= 0.0 || in.empty()) return in;
  std::map<std::array<std::int64_t, 3>, std::vector<std::size_t>> voxels;
  for (std::size_t i = 0; i < in.size(); ++i) {
    std::array<std::int64_t, 3> key{};
    for (int a = 0; a < 3; ++a) key[a] = static_cast<std::int64_t>(std::floor(in[i].position(a) / size));
    voxels[key].push_back(i);
  }
  std::vector<LandmarkCandidate> out;
  for (const auto& [key, members] : voxels) {
    Vec3 med;
    for (int a = 0; a < 3; ++a) {
      std::vector<double> c;
      for (std::size_t i : members) c.push_back(in[i].position(a));
      med(a) = median(std::move(c));
    }
    std::size_t best = members.front();
    for (std::size_t i : members) {
      const double d = (in[i].position - med).squaredNorm();
      const double db = (in[best].position - med).squaredNorm();
      if (d < db || (d == db && in[i].track_id < in[best].track_id)) best = i;
    }
    out.push_back(std::move(in[best]));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.track_id < b.track_id; });
  return out;
}

}  // namespace detail

/// Cheirality, semantic and binning filter followed by the per-bin voxel
/// filter and quota. Observations in frames without a keyframe are dropped;
/// candidates left with fewer than 2 observations are skipped. Bins use the
/// camera-frame depth at the newest keyframe.
inline std::vector<Landmark> select_landmarks(const std::vector<LandmarkCandidate>& candidates,
                                              const std::vector<Keyframe>& keyframes,
                                              const WindowConfig& cfg) {
  if (keyframes.empty()) return {};
  const Keyframe& newest = *std::max_element(
      keyframes.begin(), keyframes.end(), [](const auto& a, const auto& b) { return a.frame_id < b.frame_id; });
  std::array<std::vector<LandmarkCandidate>, 3> bins;
  for (const auto& c : candidates) {
    if (c.label == SemanticLabel::Dynamic) continue;
    LandmarkCandidate kept = c;
    kept.observations.clear();
    bool behind = false;
    for (const auto& o : c.observations) {
      const Pose* p = detail::find_pose(keyframes, o.frame_id);
      if (!p) continue;
      if ((*p * c.position).z() <= kMinDepth) {
        behind = true;
        break;
      }
      kept.observations.push_back(o);
    }
    if (behind || kept.observations.size() < 2) continue;
    const double z = (newest.pose * c.position).z();
    if (z <= 0.0) continue;
    const int bin = z < cfg.near_limit ? 0 : (z < cfg.middle_limit ? 1 : 2);
    bins[static_cast<std::size_t>(bin)].push_back(std::move(kept));
  }

  const std::array<double, 3> voxel{cfg.voxel_near, cfg.voxel_middle, cfg.voxel_far};
  const std::array<int, 3> quota{cfg.quota_near, cfg.quota_middle, cfg.quota_far};
  std::mt19937_64 rng(cfg.seed);
  std::vector<Landmark> out;
  for (std::size_t b = 0; b < 3; ++b) {
    auto pool = detail::voxel_filter(std::move(bins[b]), voxel[b]);
    if (b == 0) {
      std::stable_sort(pool.begin(), pool.end(), [](const auto& x, const auto& y) { return x.flow > y.flow; });
    } else if (b == 1) {
      std::shuffle(pool.begin(), pool.end(), rng);
    } else {
      std::stable_sort(pool.begin(), pool.end(),
                       [](const auto& x, const auto& y) { return x.track_length > y.track_length; });
    }
    const std::size_t n = std::min(pool.size(), static_cast<std::size_t>(quota[b]));
    for (std::size_t i = 0; i < n; ++i) {
      Landmark l;
      l.track_id = pool[i].track_id;
      l.position = pool[i].position;
      l.bin = static_cast<DepthBin>(b);
      l.weight = pool[i].label == SemanticLabel::Vegetation ? cfg.vegetation_weight : 1.0;
      l.observations = std::move(pool[i].observations);
      out.push_back(std::move(l));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Residuals

namespace residuals {

/// observed - pi(P * l).
struct Reprojection {
  Vec2 observed;
  CameraIntrinsics k;

  template <typename T>
  bool operator()(const PoseT<T>& pose, const Eigen::Matrix<T, 3, 1>& l, T* r) const {
    const Eigen::Matrix<T, 3, 1> x = pose * l;
    if (!(scalar_value(x(2)) > kMinDepth)) return false;
    const Eigen::Matrix<T, 2, 1> px = project_unchecked<T>(x, k);
    r[0] = T(observed.x()) - px(0);
    r[1] = T(observed.y()) - px(1);
    return true;
  }
};

/// d-hat - z(P * l).
struct Depth {
  double measured;

  template <typename T>
  bool operator()(const PoseT<T>& pose, const Eigen::Matrix<T, 3, 1>& l, T* r) const {
    r[0] = T(measured) - (pose * l)(2);
    return true;
  }
};

/// s-hat(P1, P0) - s with s-hat the (squared) length of the translation of
/// P1 * P0^-1, the motion from camera 0 to camera 1.
struct Scale {
  double reference;
  bool squared = true;

  template <typename T>
  bool operator()(const PoseT<T>& p0, const PoseT<T>& p1, T* r) const {
    const Eigen::Matrix<T, 3, 1> t = (p1 * p0.inverse()).translation;
    using std::sqrt;
    const T sq = t.squaredNorm();
    r[0] = (squared ? sq : sqrt(sq)) - T(reference);
    return true;
  }
};

}  // namespace residuals

inline double depth_residual(const Vec3& landmark, const Pose& pose, double measured) {
  return measured - (pose * landmark).z();
}

inline double baseline_measure(const Pose& p0, const Pose& p1, bool squared = true) {
  const double sq = (p1 * p0.inverse()).translation().squaredNorm();
  return squared ? sq : std::sqrt(sq);
}

inline double scale_regularizer(const Pose& p0, const Pose& p1, double reference, bool squared = true) {
  return baseline_measure(p0, p1, squared) - reference;
}

// ---------------------------------------------------------------------------
// Window solve

struct WindowDiagnostics {
  std::vector<int> keyframe_ids;
  std::array<int, 3> bin_counts{0, 0, 0};
  int reprojection_blocks = 0;
  int depth_blocks = 0;
  int trimmed_reprojection = 0;
  int trimmed_depth = 0;
  double w2 = 0.0;
  double scale_reference = 0.0;
  nlls::SolverSummary summary;

  std::string to_string() const {
    std::ostringstream os;
    os << "window keyframes=";
    for (std::size_t i = 0; i < keyframe_ids.size(); ++i) os << (i ? "," : "") << keyframe_ids[i];
    os << " bins=" << bin_counts[0] << "/" << bin_counts[1] << "/" << bin_counts[2]
       << " reproj=" << reprojection_blocks << " depth=" << depth_blocks
       << " trimmed=" << trimmed_reprojection << "/" << trimmed_depth << " w2=" << w2
       << " initial_cost=" << summary.initial_cost << " final_cost=" << summary.final_cost
       << " iterations=" << summary.iterations << " termination=" << nlls::to_string(summary.termination);
    return os.str();
  }
};

/// Mean weighted robust cost of the active blocks with `tag`.
inline double mean_block_cost(const nlls::Problem& problem, nlls::ResidualTag tag) {
  double sum = 0.0;
  int n = 0;
  for (nlls::ResidualId id = 0; id < problem.residuals().size(); ++id) {
    const auto& r = problem.residuals()[id];
    if (r.removed || r.tag != tag) continue;
    sum += 0.5 * r.weight * r.loss.evaluate(problem.residual_vector(id).squaredNorm())(0);
    ++n;
  }
  return n ? sum / n : 0.0;
}

struct WindowProblem {
  nlls::Problem problem;
  WindowDiagnostics diag;
};

/// Assembles the window cost over `keyframes` (oldest first) and `landmarks`.
/// The problem points into both containers. The oldest pose is held fixed
/// and the scale of the first baseline is tied to its current value.
/// Landmarks with fewer than 2 observations in the window are left out.
inline WindowProblem build_window_problem(std::vector<Keyframe>& keyframes, std::vector<Landmark>& landmarks,
                                          const CameraIntrinsics& k, const WindowConfig& cfg) {
  cfg.validate();
  if (keyframes.size() < 2) throw Error("window needs at least 2 keyframes");
  for (std::size_t i = 1; i < keyframes.size(); ++i)
    if (!(keyframes[i].timestamp > keyframes[i - 1].timestamp))
      throw Error("window keyframe timestamps must increase");
  if (landmarks.empty()) throw EmptyProblem("window has no landmarks");

  WindowProblem out;
  auto& problem = out.problem;
  auto& diag = out.diag;
  for (const auto& kf : keyframes) diag.keyframe_ids.push_back(kf.frame_id);

  std::unordered_map<int, nlls::ParameterId> pose_ids;
  for (auto& kf : keyframes) pose_ids[kf.frame_id] = problem.add_pose(&kf.pose);
  problem.set_constant(pose_ids[keyframes[0].frame_id]);

  const auto reproj_loss = nlls::RobustLoss::cauchy(cfg.reprojection_loss);
  const auto depth_loss = nlls::RobustLoss::cauchy(cfg.depth_loss);
  std::vector<nlls::ResidualId> depth_blocks;
  std::vector<double> depth_base_weight;
  for (auto& l : landmarks) {
    int seen = 0;
    for (const auto& o : l.observations) seen += pose_ids.count(o.frame_id) ? 1 : 0;
    if (seen < 2) continue;
    ++diag.bin_counts[static_cast<std::size_t>(l.bin)];
    const auto lid = problem.add_vector(l.position.data(), 3);
    for (const auto& o : l.observations) {
      const auto it = pose_ids.find(o.frame_id);
      if (it == pose_ids.end()) continue;
      problem.add_residual(
          nlls::make_autodiff<2, nlls::PoseBlock, nlls::VectorBlock<3>>(residuals::Reprojection{o.pixel, k}),
          {it->second, lid}, reproj_loss, cfg.w1 * l.weight, nlls::ResidualTag::Reprojection);
      ++diag.reprojection_blocks;
      if (cfg.use_depth && o.depth) {
        depth_blocks.push_back(problem.add_residual(
            nlls::make_autodiff<1, nlls::PoseBlock, nlls::VectorBlock<3>>(residuals::Depth{*o.depth}),
            {it->second, lid}, depth_loss, cfg.w2 * l.weight, nlls::ResidualTag::Depth));
        depth_base_weight.push_back(l.weight);
        ++diag.depth_blocks;
      }
    }
  }
  if (diag.reprojection_blocks == 0) throw EmptyProblem("no landmark has two observations in the window");

  diag.w2 = cfg.w2;
  if (cfg.auto_balance && !depth_blocks.empty()) {
    const double rep = mean_block_cost(problem, nlls::ResidualTag::Reprojection);
    const double dep = mean_block_cost(problem, nlls::ResidualTag::Depth);
    if (rep > cfg.balance_floor && dep > cfg.balance_floor && (dep > 2.0 * rep || rep > 2.0 * dep)) {
      diag.w2 = std::clamp(cfg.w2 * rep / dep, cfg.balance_min, cfg.balance_max);
      for (std::size_t i = 0; i < depth_blocks.size(); ++i)
        problem.residual(depth_blocks[i]).weight = diag.w2 * depth_base_weight[i];
    }
  }

  if (cfg.use_scale_regularizer) {
    diag.scale_reference = baseline_measure(keyframes[0].pose, keyframes[1].pose, cfg.squared_scale);
    problem.add_residual(
        nlls::make_autodiff<1, nlls::PoseBlock, nlls::PoseBlock>(
            residuals::Scale{diag.scale_reference, cfg.squared_scale}),
        {pose_ids[keyframes[0].frame_id], pose_ids[keyframes[1].frame_id]}, nlls::RobustLoss::trivial(),
        cfg.w0, nlls::ResidualTag::ScaleRegularizer);
  }

  return out;
}

/// Builds the window problem and solves it with trimming; keyframe poses and
/// landmark positions are updated in place.
inline WindowDiagnostics build_and_solve_window(std::vector<Keyframe>& keyframes,
                                                std::vector<Landmark>& landmarks,
                                                const CameraIntrinsics& k, const WindowConfig& cfg,
                                                const nlls::TrimConfig& trim) {
  WindowProblem wp = build_window_problem(keyframes, landmarks, k, cfg);
  WindowDiagnostics& diag = wp.diag;
  diag.summary = nlls::solve_trimmed(wp.problem, trim);
  for (auto id : diag.summary.removed_residuals) {
    const auto tag = wp.problem.residuals()[id].tag;
    if (tag == nlls::ResidualTag::Depth) ++diag.trimmed_depth;
    if (tag == nlls::ResidualTag::Reprojection) ++diag.trimmed_reprojection;
  }
  return diag;
}

}  // namespace lidarvo
