#pragma once

// KITTI odometry error metric (relative errors over 100-800 m segments,
// starting every 10th frame) and simple drift measures.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "lidarvo/error.hpp"
#include "lidarvo/geometry.hpp"

namespace lidarvo {

struct SegmentError {
  std::size_t first_frame = 0;
  double length = 0.0;       // meters
  double t_err = 0.0;        // fraction of the length
  double r_err = 0.0;        // rad per meter
  double speed = 0.0;        // m/s
};

struct LengthSummary {
  double length = 0.0;
  double t_err_pct = 0.0;
  double r_err_deg_per_m = 0.0;
  std::size_t count = 0;
};

struct SpeedSummary {
  double speed = 0.0;
  double t_err_pct = 0.0;
  double r_err_deg_per_m = 0.0;
  std::size_t count = 0;
};

struct ErrorReport {
  std::vector<SegmentError> segments;
  std::vector<LengthSummary> per_length;
  std::vector<SpeedSummary> per_speed;
  double t_err_pct = 0.0;        // mean over all segments
  double r_err_deg_per_m = 0.0;  // mean over all segments
};

struct MetricConfig {
  std::vector<double> lengths{100, 200, 300, 400, 500, 600, 700, 800};
  std::size_t step = 10;
  double frame_rate = 10.0;  // Hz, for the speed buckets
};

inline std::vector<double> trajectory_distances(const std::vector<Pose>& poses) {
  std::vector<double> d(poses.size(), 0.0);
  for (std::size_t i = 1; i < poses.size(); ++i)
    d[i] = d[i - 1] + (poses[i].translation() - poses[i - 1].translation()).norm();
  return d;
}

/// Both trajectories are world-from-camera.
inline ErrorReport kitti_metric(const std::vector<Pose>& estimated, const std::vector<Pose>& truth,
                                const MetricConfig& cfg = {}) {
  if (estimated.size() != truth.size())
    throw Error("trajectory lengths differ: " + std::to_string(estimated.size()) + " vs " +
                std::to_string(truth.size()));
  const auto dist = trajectory_distances(truth);
  const double min_len = *std::min_element(cfg.lengths.begin(), cfg.lengths.end());
  if (dist.empty() || dist.back() <= min_len)
    throw TooShort("trajectory of " + std::to_string(dist.empty() ? 0.0 : dist.back()) +
                   " m is shorter than the " + std::to_string(min_len) + " m segment");
  ErrorReport report;
  for (std::size_t first = 0; first < truth.size(); first += cfg.step) {
    for (double len : cfg.lengths) {
      std::size_t last = first;
      while (last < dist.size() && dist[last] <= dist[first] + len) ++last;
      if (last >= dist.size()) continue;
      const Pose dgt = truth[first].inverse() * truth[last];
      const Pose dest = estimated[first].inverse() * estimated[last];
      const Pose err = dest.inverse() * dgt;
      SegmentError s;
      s.first_frame = first;
      s.length = len;
      s.t_err = err.translation().norm() / len;
      s.r_err = err.rotation_angle() / len;
      s.speed = len / (static_cast<double>(last - first + 1) / cfg.frame_rate);
      report.segments.push_back(s);
    }
  }
  if (report.segments.empty()) throw TooShort("no complete segment in the trajectory");
  constexpr double kDeg = 180.0 / M_PI;
  for (double len : cfg.lengths) {
    LengthSummary l{len, 0.0, 0.0, 0};
    for (const auto& s : report.segments) {
      if (std::abs(s.length - len) >= 1.0) continue;
      l.t_err_pct += 100.0 * s.t_err;
      l.r_err_deg_per_m += kDeg * s.r_err;
      ++l.count;
    }
    if (l.count == 0) continue;
    l.t_err_pct /= static_cast<double>(l.count);
    l.r_err_deg_per_m /= static_cast<double>(l.count);
    report.per_length.push_back(l);
  }
  for (double speed = 2; speed < 25; speed += 2) {
    SpeedSummary b{speed, 0.0, 0.0, 0};
    for (const auto& s : report.segments) {
      if (std::abs(s.speed - speed) >= 2.0) continue;
      b.t_err_pct += 100.0 * s.t_err;
      b.r_err_deg_per_m += kDeg * s.r_err;
      ++b.count;
    }
    if (b.count == 0) continue;
    b.t_err_pct /= static_cast<double>(b.count);
    b.r_err_deg_per_m /= static_cast<double>(b.count);
    report.per_speed.push_back(b);
  }
  for (const auto& s : report.segments) {
    report.t_err_pct += 100.0 * s.t_err;
    report.r_err_deg_per_m += kDeg * s.r_err;
  }
  report.t_err_pct /= static_cast<double>(report.segments.size());
  report.r_err_deg_per_m /= static_cast<double>(report.segments.size());
  return report;
}

/// CSV with one row per segment length.
inline void write_report(const std::filesystem::path& path, const ErrorReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "segment_length,t_err_pct,r_err_deg_per_m\n";
  out.precision(10);
  for (const auto& l : report.per_length) out << l.length << ',' << l.t_err_pct << ',' << l.r_err_deg_per_m << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

inline double path_length(const std::vector<Pose>& poses) {
  const auto d = trajectory_distances(poses);
  return d.empty() ? 0.0 : d.back();
}

/// End-point position error divided by the path length of `truth`.
inline double endpoint_drift(const std::vector<Pose>& estimated, const std::vector<Pose>& truth) {
  if (estimated.size() != truth.size() || truth.empty()) throw Error("trajectories must have equal, non-zero length");
  const double len = path_length(truth);
  if (!(len > 0.0)) throw TooShort("trajectory does not move");
  return (estimated.back().translation() - truth.back().translation()).norm() / len;
}

/// Mean absolute orientation error over all frames, degrees.
inline double mean_rotation_error_deg(const std::vector<Pose>& estimated, const std::vector<Pose>& truth) {
  if (estimated.size() != truth.size() || truth.empty()) throw Error("trajectories must have equal, non-zero length");
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    sum += (estimated[i].inverse() * truth[i]).rotation_angle();
  return sum / static_cast<double>(truth.size()) * 180.0 / M_PI;
}

}  // namespace lidarvo
