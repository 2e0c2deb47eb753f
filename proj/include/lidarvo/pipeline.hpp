#pragma once

// Sequence driver: tracking and semantic labels, per-feature LIDAR depth,
// frame-to-frame motion prior and, in full mode, keyframe window bundle
// adjustment.
//
// Ingestion and depth extraction for frame i+1 run while frame i is being
// estimated; the stages exchange immutable FrameBundle values.

#include <algorithm>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "lidarvo/backend.hpp"
#include "lidarvo/dataset.hpp"
#include "lidarvo/error.hpp"
#include "lidarvo/frame2frame.hpp"
#include "lidarvo/geometry.hpp"
#include "lidarvo/metric.hpp"
#include "lidarvo/nlls/solver.hpp"
#include "lidarvo/pointcloud_depth.hpp"
#include "lidarvo/tracking.hpp"

namespace lidarvo {

enum class PipelineMode { PriorOnly, Full };

inline const char* to_string(PipelineMode m) { return m == PipelineMode::Full ? "full" : "prior_only"; }

inline PipelineMode parse_mode(const std::string& s) {
  if (s == "full") return PipelineMode::Full;
  if (s == "prior_only") return PipelineMode::PriorOnly;
  throw ConfigError("unknown mode '" + s + "' (expected full or prior_only)");
}

struct PipelineConfig {
  DepthConfig depth;
  TrackerConfig tracker;
  int semantic_erosion = 21;
  bool use_semantics = true;
  ClassTable classes = ClassTable::cityscapes();
  PriorConfig prior;
  WindowConfig window;
  nlls::TrimConfig trim;
  PipelineMode mode = PipelineMode::Full;
  std::size_t max_frames = 0;  // 0 processes the whole sequence
  bool prefetch = true;

  void validate() const {
    depth.validate();
    window.validate();
    trim.validate();
    if (semantic_erosion < 1) throw ConfigError("semantic erosion kernel must be >= 1");
    if (!(prior.pnp_loss_scale > 0 && prior.epipolar_loss_scale > 0)) throw ConfigError("prior loss scales must be positive");
    if (!(prior.pnp_weight >= 0 && prior.epipolar_weight >= 0)) throw ConfigError("prior weights must be non-negative");
    if (tracker.max_corners <= 0 || tracker.patch_radius <= 0 || tracker.search_radius <= 0)
      throw ConfigError("invalid tracker settings");
  }
};

struct FrameObservation {
  long track_id = 0;
  Vec2 pixel = Vec2::Zero();
  DepthEstimate depth;
  bool ground = false;  // routed to the ground branch
  SemanticLabel vote = SemanticLabel::Unknown;
};

/// Everything the estimator needs from one frame.
struct FrameBundle {
  std::size_t index = 0;
  double timestamp = 0.0;
  std::vector<FrameObservation> observations;  // sorted by track id
  std::optional<Plane> ground;
  bool semantics = false;

  const FrameObservation* find(long track_id) const {
    const auto it = std::lower_bound(observations.begin(), observations.end(), track_id,
                                     [](const FrameObservation& o, long id) { return o.track_id < id; });
    return it != observations.end() && it->track_id == track_id ? &*it : nullptr;
  }
};

/// Per-feature depth for one frame. Without a semantic frame, features whose
/// foreground estimate fails and whose line of sight meets the ground plane
/// within the depth limit fall back to the ground branch.
inline void estimate_frame_depths(std::vector<FrameObservation>& obs, const std::vector<Vec3>& lidar_points,
                                  const DatasetSequence& seq, const PipelineConfig& cfg,
                                  const SemanticFrame* semantics, std::optional<Plane>& ground) {
  const ProjectedCloud cloud = project_cloud(lidar_points, seq.extrinsics, seq.intrinsics);
  std::vector<Vec3> camera_points;
  camera_points.reserve(lidar_points.size());
  for (const Vec3& p : lidar_points) camera_points.push_back(seq.extrinsics.lidar_to_camera * p);
  try {
    ground = extract_ground_plane(camera_points, GroundConfig::from(cfg.depth));
  } catch (const InsufficientInliers&) {
    ground.reset();
  }
  for (auto& o : obs) {
    if (semantics) {
      o.ground = semantics->is_ground(o.pixel) && ground.has_value();
      o.depth = estimate_depth(o.pixel, o.ground, cloud, ground, cfg.depth);
      continue;
    }
    o.depth = estimate_depth(o.pixel, false, cloud, ground, cfg.depth);
    if (!o.depth.valid() && ground &&
        ray_hits_ground(o.pixel, *ground, seq.intrinsics, cfg.depth.max_depth)) {
      o.ground = true;
      o.depth = estimate_depth(o.pixel, true, cloud, ground, cfg.depth);
    }
  }
}

/// Ingestion and depth stage. Frames must be loaded in increasing order.
class FrameSource {
 public:
  FrameSource(const DatasetSequence& seq, const PipelineConfig& cfg) : seq_(seq), cfg_(cfg) {
    if (seq.tracks) {
      by_frame_.resize(seq.size());
      for (std::size_t t = 0; t < seq.tracks->size(); ++t) {
        const auto& track = (*seq.tracks)[t];
        for (std::size_t o = 0; o < track.observations.size(); ++o) {
          const int f = track.observations[o].frame_id;
          if (f >= 0 && static_cast<std::size_t>(f) < by_frame_.size()) by_frame_[static_cast<std::size_t>(f)].push_back({t, o});
        }
      }
    } else {
      builder_.emplace(cfg.tracker);
    }
  }

  FrameBundle load(std::size_t i) {
    FrameBundle b;
    b.index = i;
    b.timestamp = seq_.timestamps.at(i);
    if (builder_) {
      const auto ids = builder_->add_frame(static_cast<int>(i), seq_.image(i));
      const auto& tracks = builder_->tracks();
      for (long id : ids) {
        // builder ids are dense indices into its track list
        b.observations.push_back({id, tracks[static_cast<std::size_t>(id)].observations.back().pixel, {}, false,
                                  SemanticLabel::Unknown});
      }
    } else {
      for (const auto& [t, o] : by_frame_[i]) {
        const auto& track = (*seq_.tracks)[t];
        b.observations.push_back({track.track_id, track.observations[o].pixel, {}, false, SemanticLabel::Unknown});
      }
    }
    std::sort(b.observations.begin(), b.observations.end(),
              [](const auto& x, const auto& y) { return x.track_id < y.track_id; });

    std::optional<SemanticFrame> semantics;
    if (cfg_.use_semantics && seq_.semantics) {
      SemanticImage img = seq_.semantics(i);
      img.table = cfg_.classes;
      semantics.emplace(std::move(img), cfg_.semantic_erosion);
      b.semantics = true;
    }
    estimate_frame_depths(b.observations, seq_.cloud(i), seq_, cfg_, semantics ? &*semantics : nullptr, b.ground);
    for (auto& o : b.observations) o.vote = semantics ? semantics->vote(o.pixel) : SemanticLabel::Infrastructure;
    return b;
  }

 private:
  const DatasetSequence& seq_;
  const PipelineConfig& cfg_;
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> by_frame_;
  std::optional<TrackBuilder> builder_;
};

struct FrameReport {
  std::size_t frame = 0;
  FrameClass frame_class = FrameClass::Rejected;
  bool keyframe = false;
  int observations = 0;
  int depths = 0;
  int matches = 0;
  int dynamic = 0;
  double mean_flow = 0.0;
  bool prior_fallback = false;
};

struct PipelineResult {
  std::vector<Pose> trajectory;  // world-from-camera, one per processed frame
  std::vector<WindowDiagnostics> windows;
  std::vector<FrameReport> frames;
  std::optional<ErrorReport> report;  // when ground truth covers at least one segment
};

namespace detail {

struct TrackState {
  bool dynamic = false;
  SemanticLabel label = SemanticLabel::Unknown;
  int length = 0;
};

struct KeyframeObservation {
  Vec2 pixel;
  std::optional<double> depth;
};

struct KeyframeRecord {
  Keyframe kf;
  std::map<long, KeyframeObservation> obs;
};

struct Anchor {
  std::size_t keyframe = 0;
  Pose relative;  // camera-from-keyframe-camera
};

}  // namespace detail

/// Runs the sequence and returns one world-from-camera pose per frame (the
/// first camera defines the world frame). Module errors are rethrown as
/// FrameError; an under-constrained motion prior falls back to constant
/// velocity and empty or failed windows keep their initial poses.
inline PipelineResult run_pipeline(const DatasetSequence& seq, const PipelineConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  seq.validate();
  const std::size_t n = cfg.max_frames > 0 ? std::min(cfg.max_frames, seq.size()) : seq.size();
  PipelineResult result;
  if (n == 0) return result;
  const CameraIntrinsics& k = seq.intrinsics;

  if (log && (!cfg.use_semantics || !seq.semantics))
    *log << "no semantic images: every track is treated as infrastructure\n";

  FrameSource source(seq, cfg);
  const auto load = [&](std::size_t i) {
    try {
      return source.load(i);
    } catch (const FrameError&) {
      throw;
    } catch (const Error& e) {
      throw FrameError(i, e.what());
    }
  };

  std::map<long, detail::TrackState> tracks;
  std::vector<detail::KeyframeRecord> keyframes;
  std::vector<detail::Anchor> anchors;
  std::map<long, Vec3> positions;
  KeyframeSelector selector(cfg.window.keyframe_interval);
  Pose world_pose;   // camera-from-world, prior only
  Pose relative;     // camera-from-latest-keyframe
  Pose velocity;     // last motion
  std::optional<FrameBundle> previous;

  std::future<FrameBundle> next;
  if (cfg.prefetch) next = std::async(std::launch::async, load, 0);

  for (std::size_t i = 0; i < n; ++i) {
    FrameBundle bundle = cfg.prefetch ? next.get() : load(i);
    if (cfg.prefetch && i + 1 < n) next = std::async(std::launch::async, load, i + 1);

    try {
      FrameReport rep;
      rep.frame = i;
      rep.observations = static_cast<int>(bundle.observations.size());
      for (const auto& o : bundle.observations) {
        auto& st = tracks[o.track_id];
        ++st.length;
        st.label = o.vote;
        if (o.vote == SemanticLabel::Dynamic) st.dynamic = true;
        if (st.dynamic) st.label = SemanticLabel::Dynamic;
        rep.depths += o.depth.valid() ? 1 : 0;
        rep.dynamic += st.dynamic ? 1 : 0;
      }

      Pose motion;
      if (previous) {
        FrameMatchSet set{{}, k};
        double flow = 0.0;
        for (const auto& o : bundle.observations) {
          if (tracks[o.track_id].dynamic) continue;
          const FrameObservation* p = previous->find(o.track_id);
          if (!p) continue;
          std::optional<double> depth;
          if (p->depth.valid()) depth = p->depth.depth;
          set.matches.push_back({o.pixel, p->pixel, depth});
          flow += (o.pixel - p->pixel).norm();
        }
        rep.matches = static_cast<int>(set.matches.size());
        rep.mean_flow = set.matches.empty() ? 0.0 : flow / static_cast<double>(set.matches.size());
        try {
          motion = estimate_prior(set, velocity, cfg.prior).motion;
        } catch (const Underconstrained& e) {
          motion = velocity;
          rep.prior_fallback = true;
          if (log) *log << "frame " << i << ": " << e.what() << ", using constant velocity\n";
        } catch (const NumericalFailure& e) {
          motion = velocity;
          rep.prior_fallback = true;
          if (log) *log << "frame " << i << ": " << e.what() << ", using constant velocity\n";
        }
        velocity = motion;
        rep.frame_class = classify_frame(motion, rep.mean_flow, cfg.window);
      }
      world_pose = motion * world_pose;
      relative = motion * relative;

      if (cfg.mode == PipelineMode::PriorOnly) {
        result.trajectory.push_back(world_pose.inverse());
      } else {
        std::optional<KeyframeCategory> category;
        if (!previous) {
          selector.force(bundle.timestamp);
          category = KeyframeCategory::Required;
        } else {
          category = selector.offer(bundle.timestamp, rep.frame_class);
        }
        if (category) {
          detail::KeyframeRecord rec;
          rec.kf.frame_id = static_cast<int>(i);
          rec.kf.timestamp = bundle.timestamp;
          rec.kf.category = *category;
          rec.kf.pose = keyframes.empty() ? relative : relative * keyframes.back().kf.pose;
          for (const auto& o : bundle.observations) {
            std::optional<double> d;
            if (o.depth.valid()) d = o.depth.depth;
            rec.obs[o.track_id] = {o.pixel, d};
          }
          keyframes.push_back(std::move(rec));
          relative = Pose::identity();
          rep.keyframe = true;
          if (keyframes.size() >= 2) {
            std::vector<std::set<int>> sets;
            for (auto it = keyframes.rbegin(); it != keyframes.rend() && sets.size() < static_cast<std::size_t>(cfg.window.window_max); ++it) {
              std::set<int> s;
              for (const auto& [id, _] : it->obs) s.insert(static_cast<int>(id));
              sets.push_back(std::move(s));
            }
            const std::size_t len = static_cast<std::size_t>(window_length(sets, cfg.window));
            if (len >= 2) {
              const std::size_t first = keyframes.size() - len;
              std::vector<Keyframe> window;
              for (std::size_t w = first; w < keyframes.size(); ++w) window.push_back(keyframes[w].kf);

              std::map<long, std::vector<LandmarkObservation>> seen;
              for (std::size_t w = first; w < keyframes.size(); ++w)
                for (const auto& [id, o] : keyframes[w].obs)
                  seen[id].push_back({keyframes[w].kf.frame_id, o.pixel, o.depth});
              std::vector<LandmarkCandidate> candidates;
              for (auto& [id, obs] : seen) {
                if (obs.size() < 2) continue;
                const auto& st = tracks[id];
                LandmarkCandidate c;
                c.track_id = static_cast<int>(id);
                c.label = st.label;
                c.track_length = st.length;
                c.flow = mean_flow(obs);
                bool have = false;
                if (const auto it = positions.find(id); it != positions.end()) {
                  c.position = it->second;
                  have = true;
                }
                for (std::size_t j = obs.size(); !have && j-- > 0;) {
                  if (!obs[j].depth) continue;
                  const Pose* cam = detail::find_pose(window, obs[j].frame_id);
                  c.position = cam->inverse() * backproject<double>(obs[j].pixel, *obs[j].depth, k);
                  have = true;
                }
                if (!have) {
                  try {
                    c.position = triangulate(obs.front().pixel, obs.back().pixel,
                                             *detail::find_pose(window, obs.front().frame_id),
                                             *detail::find_pose(window, obs.back().frame_id), k);
                    have = true;
                  } catch (const DegenerateGeometry&) {
                  }
                }
                if (!have) continue;
                c.observations = std::move(obs);
                candidates.push_back(std::move(c));
              }
              std::vector<Landmark> landmarks = select_landmarks(candidates, window, cfg.window);
              try {
                WindowDiagnostics diag = build_and_solve_window(window, landmarks, k, cfg.window, cfg.trim);
                for (std::size_t w = 0; w < window.size(); ++w) keyframes[first + w].kf.pose = window[w].pose;
                for (const auto& l : landmarks) positions[l.track_id] = l.position;
                if (log) *log << "frame " << i << ": " << diag.to_string() << '\n';
                result.windows.push_back(std::move(diag));
              } catch (const EmptyProblem& e) {
                if (log) *log << "frame " << i << ": window skipped: " << e.what() << '\n';
              } catch (const NumericalFailure& e) {
                if (log) *log << "frame " << i << ": window solve failed: " << e.what() << '\n';
              }
            }
          }
        }
        anchors.push_back({keyframes.size() - 1, relative});
      }
      result.frames.push_back(rep);
    } catch (const FrameError&) {
      throw;
    } catch (const Error& e) {
      throw FrameError(i, e.what());
    }
    previous = std::move(bundle);
  }

  if (cfg.mode == PipelineMode::Full) {
    result.trajectory.reserve(n);
    for (const auto& a : anchors) result.trajectory.push_back((a.relative * keyframes[a.keyframe].kf.pose).inverse());
  }

  if (seq.ground_truth) {
    std::vector<Pose> truth(seq.ground_truth->begin(), seq.ground_truth->begin() + static_cast<std::ptrdiff_t>(n));
    const Pose first = truth.front().inverse();
    for (auto& p : truth) p = first * p;
    MetricConfig metric;
    if (n > 1) metric.frame_rate = static_cast<double>(n - 1) / (seq.timestamps[n - 1] - seq.timestamps[0]);
    try {
      result.report = kitti_metric(result.trajectory, truth, metric);
    } catch (const TooShort&) {
    }
  }
  return result;
}

}  // namespace lidarvo
