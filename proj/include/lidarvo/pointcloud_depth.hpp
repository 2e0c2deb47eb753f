#pragma once

// One-shot feature depth from a single LIDAR sweep: project the sweep, take
// the points around a feature, keep the nearest depth cluster, span a plane
// with the largest triangle and intersect the feature's line of sight.
// Ground features use the points near a RANSAC ground plane instead of the
// depth cluster.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Eigenvalues>

#include "lidarvo/error.hpp"
#include "lidarvo/geometry.hpp"

namespace lidarvo {

struct ProjectedPoint {
  Vec2 pixel;
  double depth = 0.0;  // camera-frame z
  Vec3 xyz;            // camera frame
};

/// Projected sweep with a uniform grid over pixel coordinates.
class ProjectedCloud {
 public:
  static constexpr int kCellSize = 8;

  ProjectedCloud() = default;
  ProjectedCloud(std::vector<ProjectedPoint> points, const CameraIntrinsics& intrinsics)
      : points_(std::move(points)), intrinsics_(intrinsics) {
    cols_ = std::max(1, (intrinsics.width + kCellSize - 1) / kCellSize);
    rows_ = std::max(1, (intrinsics.height + kCellSize - 1) / kCellSize);
    cell_start_.assign(static_cast<std::size_t>(cols_ * rows_ + 1), 0);
    std::vector<int> cell_of(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      cell_of[i] = cell_index(points_[i].pixel);
      ++cell_start_[static_cast<std::size_t>(cell_of[i]) + 1];
    }
    for (std::size_t c = 1; c < cell_start_.size(); ++c) cell_start_[c] += cell_start_[c - 1];
    order_.resize(points_.size());
    std::vector<int> fill(cell_start_.begin(), cell_start_.end() - 1);
    for (std::size_t i = 0; i < points_.size(); ++i)
      order_[static_cast<std::size_t>(fill[static_cast<std::size_t>(cell_of[i])]++)] = static_cast<int>(i);
  }

  const std::vector<ProjectedPoint>& points() const noexcept { return points_; }
  const CameraIntrinsics& intrinsics() const noexcept { return intrinsics_; }
  std::size_t size() const noexcept { return points_.size(); }
  bool empty() const noexcept { return points_.empty(); }

  /// Points with |u - center.u| <= half_width and |v - center.v| <= half_height,
  /// in insertion order.
  std::vector<ProjectedPoint> query(const Vec2& center, double half_width,
                                    double half_height) const {
    std::vector<int> hits;
    if (points_.empty()) return {};
    const int c0 = std::clamp(static_cast<int>(std::floor((center.x() - half_width) / kCellSize)), 0, cols_ - 1);
    const int c1 = std::clamp(static_cast<int>(std::floor((center.x() + half_width) / kCellSize)), 0, cols_ - 1);
    const int r0 = std::clamp(static_cast<int>(std::floor((center.y() - half_height) / kCellSize)), 0, rows_ - 1);
    const int r1 = std::clamp(static_cast<int>(std::floor((center.y() + half_height) / kCellSize)), 0, rows_ - 1);
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        const int cell = r * cols_ + c;
        for (int k = cell_start_[cell]; k < cell_start_[cell + 1]; ++k) {
          const ProjectedPoint& p = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(k)])];
          if (std::abs(p.pixel.x() - center.x()) <= half_width &&
              std::abs(p.pixel.y() - center.y()) <= half_height)
            hits.push_back(order_[static_cast<std::size_t>(k)]);
        }
      }
    }
    std::sort(hits.begin(), hits.end());
    std::vector<ProjectedPoint> out;
    out.reserve(hits.size());
    for (int i : hits) out.push_back(points_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  int cell_index(const Vec2& px) const {
    const int c = std::clamp(static_cast<int>(std::floor(px.x() / kCellSize)), 0, cols_ - 1);
    const int r = std::clamp(static_cast<int>(std::floor(px.y() / kCellSize)), 0, rows_ - 1);
    return r * cols_ + c;
  }

  std::vector<ProjectedPoint> points_;
  CameraIntrinsics intrinsics_;
  int cols_ = 1;
  int rows_ = 1;
  std::vector<int> cell_start_;
  std::vector<int> order_;
};

/// Plane n . x = offset with unit normal n.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;

  double signed_distance(const Vec3& x) const { return normal.dot(x) - offset; }

  /// Flips the normal so that the camera centre (the origin) lies on the
  /// positive side.
  Plane facing_origin() const { return offset > 0.0 ? Plane{-normal, -offset} : *this; }
};

struct DepthConfig {
  int roi_half_width = 5;
  int roi_half_height = 5;
  int ground_roi_half_width = 5;
  int ground_roi_half_height = 15;
  double histogram_bin_width = 0.3;
  int significant_bin_count = 2;
  double max_depth = 30.0;
  double max_incidence_angle_deg = 70.0;
  double min_triangle_area = 1e-4;
  double min_triangle_area_ground = 1e-2;
  int exhaustive_cap = 25;
  double ground_ransac_threshold = 0.15;
  int ground_ransac_iterations = 200;
  double ground_min_inlier_ratio = 0.2;
  /// RANSAC hypotheses whose normal deviates more than this from the camera's
  /// vertical axis are skipped; <= 0 disables the check.
  double ground_max_tilt_deg = 30.0;
  double ground_vicinity = 0.3;
  std::uint32_t ground_seed = 42;

  void validate() const {
    if (roi_half_width <= 0 || roi_half_height <= 0 || ground_roi_half_width <= 0 ||
        ground_roi_half_height <= 0)
      throw ConfigError("depth ROI sizes must be positive");
    if (!(histogram_bin_width > 0 && max_depth > 0 && max_incidence_angle_deg > 0 &&
          min_triangle_area > 0 && ground_ransac_threshold > 0 && ground_vicinity > 0))
      throw ConfigError("depth thresholds must be positive");
    if (!(min_triangle_area_ground > min_triangle_area))
      throw ConfigError("ground triangle area must exceed the non-ground one");
    if (significant_bin_count < 1 || exhaustive_cap < 3 || ground_ransac_iterations < 1)
      throw ConfigError("invalid depth counts");
    if (!(ground_min_inlier_ratio >= 0 && ground_min_inlier_ratio <= 1))
      throw ConfigError("ground inlier ratio must lie in [0, 1]");
  }
};

enum class DepthSource { ForegroundPlane, GroundPlane };
enum class DepthStatus { Valid, RejectedAngle, RejectedRange, RejectedDegenerate, NoNeighbors };

inline const char* to_string(DepthStatus s) {
  switch (s) {
    case DepthStatus::Valid: return "valid";
    case DepthStatus::RejectedAngle: return "rejected_angle";
    case DepthStatus::RejectedRange: return "rejected_range";
    case DepthStatus::RejectedDegenerate: return "rejected_degenerate";
    case DepthStatus::NoNeighbors: return "no_neighbors";
  }
  return "?";
}

struct DepthEstimate {
  double depth = 0.0;
  Vec3 plane_normal = Vec3::Zero();
  DepthSource source = DepthSource::ForegroundPlane;
  DepthStatus status = DepthStatus::NoNeighbors;

  bool valid() const noexcept { return status == DepthStatus::Valid; }
};

/// Keeps the points with positive camera-frame depth that project inside the image.
inline ProjectedCloud project_cloud(const std::vector<Vec3>& lidar_points,
                                    const ExtrinsicCalibration& calib,
                                    const CameraIntrinsics& k) {
  std::vector<ProjectedPoint> out;
  out.reserve(lidar_points.size() / 2);
  for (const Vec3& p : lidar_points) {
    const Vec3 c = calib.lidar_to_camera * p;
    if (c.z() <= kMinDepth) continue;
    const Vec2 px = project_unchecked<double>(c, k);
    if (!k.contains(px)) continue;
    out.push_back({px, c.z(), c});
  }
  return ProjectedCloud(std::move(out), k);
}

/// Points inside the axis-aligned rectangle around the feature. Throws
/// NoNeighbors with fewer than three.
inline std::vector<ProjectedPoint> select_neighborhood(const ProjectedCloud& cloud,
                                                       const Vec2& feature, int half_width,
                                                       int half_height) {
  auto f = cloud.query(feature, half_width, half_height);
  if (f.size() < 3) throw NoNeighbors();
  return f;
}

inline std::vector<ProjectedPoint> select_neighborhood(const ProjectedCloud& cloud,
                                                       const Vec2& feature,
                                                       const DepthConfig& cfg) {
  return select_neighborhood(cloud, feature, cfg.roi_half_width, cfg.roi_half_height);
}

/// Depth histogram with bin width h anchored at the smallest depth. Returns
/// the points of the run of occupied bins that contains the nearest bin with
/// at least `significant` points. Without such a bin the nearest run is used.
inline std::vector<ProjectedPoint> segment_foreground(const std::vector<ProjectedPoint>& f,
                                                      double h, int significant = 2) {
  if (f.empty()) return {};
  if (!(h > 0.0)) throw Error("histogram bin width must be positive");
  double min_depth = f.front().depth;
  for (const auto& p : f) min_depth = std::min(min_depth, p.depth);
  std::vector<long> bin(f.size());
  long max_bin = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    bin[i] = static_cast<long>(std::floor((f[i].depth - min_depth) / h));
    max_bin = std::max(max_bin, bin[i]);
  }
  // Sparse histogram: sort the occupied bins.
  std::vector<long> sorted_bins = bin;
  std::sort(sorted_bins.begin(), sorted_bins.end());
  std::vector<std::pair<long, int>> counts;
  for (long b : sorted_bins) {
    if (counts.empty() || counts.back().first != b) counts.emplace_back(b, 0);
    ++counts.back().second;
  }
  std::size_t anchor = 0;
  bool found = false;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i].second >= significant) {
      anchor = i;
      found = true;
      break;
    }
  }
  if (!found) anchor = 0;
  std::size_t lo = anchor, hi = anchor;
  while (lo > 0 && counts[lo - 1].first == counts[lo].first - 1) --lo;
  while (hi + 1 < counts.size() && counts[hi + 1].first == counts[hi].first + 1) ++hi;
  const long first = counts[lo].first, last = counts[hi].first;
  std::vector<ProjectedPoint> out;
  for (std::size_t i = 0; i < f.size(); ++i)
    if (bin[i] >= first && bin[i] <= last) out.push_back(f[i]);
  return out;
}

struct TriangleFit {
  Plane plane;
  std::array<Vec3, 3> triangle;
  double area = 0.0;
};

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

namespace detail {

inline std::array<int, 3> max_triangle_exhaustive(const std::vector<Vec3>& pts,
                                                  const std::vector<int>& idx, double& best) {
  std::array<int, 3> arg{idx[0], idx[1], idx[2]};
  best = -1.0;
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = i + 1; j < idx.size(); ++j)
      for (std::size_t k = j + 1; k < idx.size(); ++k) {
        const double a = triangle_area(pts[idx[i]], pts[idx[j]], pts[idx[k]]);
        if (a > best) {
          best = a;
          arg = {idx[i], idx[j], idx[k]};
        }
      }
  return arg;
}

/// Indices of the 2D convex hull (Andrew's monotone chain).
inline std::vector<int> convex_hull_2d(const std::vector<Vec2>& p) {
  std::vector<int> order(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return p[a].x() < p[b].x() || (p[a].x() == p[b].x() && p[a].y() < p[b].y());
  });
  const auto cross = [&](int o, int a, int b) {
    return (p[a] - p[o]).x() * (p[b] - p[o]).y() - (p[a] - p[o]).y() * (p[b] - p[o]).x();
  };
  std::vector<int> hull(2 * p.size());
  std::size_t k = 0;
  for (int i : order) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], i) <= 0) --k;
    hull[k++] = i;
  }
  for (std::size_t n = order.size(), t = k + 1; n-- > 1;) {
    const int i = order[n - 1];
    while (k >= t && cross(hull[k - 2], hull[k - 1], i) <= 0) --k;
    hull[k++] = i;
  }
  hull.resize(k > 1 ? k - 1 : k);
  return hull;
}

}  // namespace detail

/// Plane through the triangle of largest area spanned by three points.
/// Exhaustive up to `exhaustive_cap` points; above, the search runs over the
/// convex hull of the points projected onto their principal plane.
/// Throws DegenerateTriangle when the largest area is below `min_area`.
inline TriangleFit fit_plane_max_triangle(const std::vector<Vec3>& pts, double min_area,
                                          int exhaustive_cap = 25) {
  if (pts.size() < 3) throw DegenerateTriangle(0.0);
  std::vector<int> candidates;
  if (static_cast<int>(pts.size()) <= exhaustive_cap) {
    for (std::size_t i = 0; i < pts.size(); ++i) candidates.push_back(static_cast<int>(i));
  } else {
    Vec3 mean = Vec3::Zero();
    for (const Vec3& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Mat3 cov = Mat3::Zero();
    for (const Vec3& p : pts) cov += (p - mean) * (p - mean).transpose();
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 e1 = eig.eigenvectors().col(2), e2 = eig.eigenvectors().col(1);
    std::vector<Vec2> flat;
    flat.reserve(pts.size());
    for (const Vec3& p : pts) flat.emplace_back((p - mean).dot(e1), (p - mean).dot(e2));
    candidates = detail::convex_hull_2d(flat);
    std::sort(candidates.begin(), candidates.end());
    if (candidates.size() < 3) throw DegenerateTriangle(0.0);
  }
  double area = 0.0;
  const auto tri = detail::max_triangle_exhaustive(pts, candidates, area);
  if (!(area >= min_area)) throw DegenerateTriangle(std::max(area, 0.0));
  const Vec3 &a = pts[tri[0]], &b = pts[tri[1]], &c = pts[tri[2]];
  const Vec3 n = (b - a).cross(c - a).normalized();
  TriangleFit fit;
  fit.plane = Plane{n, n.dot(a)}.facing_origin();
  fit.triangle = {a, b, c};
  fit.area = area;
  return fit;
}

/// Camera-frame z of the intersection of a line of sight through the origin
/// with the plane. Throws ParallelRay when |n . ray| <= 1e-9.
inline double intersect_ray_plane(const Vec3& ray, const Plane& plane) {
  const double denom = plane.normal.dot(ray);
  if (std::abs(denom) <= 1e-9) throw ParallelRay();
  return plane.offset / denom * ray.z();
}

/// Total least squares plane through a point set.
inline Plane fit_plane_least_squares(const std::vector<Vec3>& pts) {
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : pts) cov += (p - mean) * (p - mean).transpose();
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 n = eig.eigenvectors().col(0).normalized();
  return Plane{n, n.dot(mean)}.facing_origin();
}

struct GroundConfig {
  double threshold = 0.15;
  int iterations = 200;
  double min_inlier_ratio = 0.2;
  double max_tilt_deg = 0.0;
  std::uint32_t seed = 42;

  static GroundConfig from(const DepthConfig& cfg) {
    return {cfg.ground_ransac_threshold, cfg.ground_ransac_iterations, cfg.ground_min_inlier_ratio,
            cfg.ground_max_tilt_deg, cfg.ground_seed};
  }
};

/// RANSAC plane with the most inliers, refined by least squares over its
/// inliers. The normal points toward the camera. Throws InsufficientInliers
/// when the inlier ratio is below the configured minimum or fewer than three
/// points are given.
inline Plane extract_ground_plane(const std::vector<Vec3>& cloud, const GroundConfig& cfg) {
  if (cloud.size() < 3) throw InsufficientInliers("ground plane needs at least three points");
  std::mt19937 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
  const double cos_tilt = cfg.max_tilt_deg > 0.0 ? std::cos(cfg.max_tilt_deg * M_PI / 180.0) : -1.0;
  std::size_t best_count = 0;
  Plane best;
  for (int it = 0; it < cfg.iterations; ++it) {
    const std::size_t i = pick(rng), j = pick(rng), k = pick(rng);
    if (i == j || j == k || i == k) continue;
    const Vec3 n = (cloud[j] - cloud[i]).cross(cloud[k] - cloud[i]);
    if (n.norm() < 1e-12) continue;
    const Vec3 u = n.normalized();
    if (std::abs(u.y()) < cos_tilt) continue;
    const Plane plane{u, u.dot(cloud[i])};
    std::size_t count = 0;
    for (const Vec3& p : cloud) count += std::abs(plane.signed_distance(p)) <= cfg.threshold ? 1 : 0;
    if (count > best_count) {
      best_count = count;
      best = plane;
    }
  }
  const double ratio = static_cast<double>(best_count) / static_cast<double>(cloud.size());
  if (best_count < 3 || ratio < cfg.min_inlier_ratio)
    throw InsufficientInliers("ground plane inlier ratio " + std::to_string(ratio));
  std::vector<Vec3> inliers;
  for (const Vec3& p : cloud)
    if (std::abs(best.signed_distance(p)) <= cfg.threshold) inliers.push_back(p);
  Plane refined = fit_plane_least_squares(inliers);
  // one more pass with the refined model
  std::vector<Vec3> second;
  for (const Vec3& p : cloud)
    if (std::abs(refined.signed_distance(p)) <= cfg.threshold) second.push_back(p);
  if (second.size() >= 3) refined = fit_plane_least_squares(second);
  return refined;
}

inline Plane extract_ground_plane(const std::vector<Vec3>& cloud, double threshold) {
  GroundConfig cfg;
  cfg.threshold = threshold;
  return extract_ground_plane(cloud, cfg);
}

/// Ground test without semantics: the feature's line of sight meets the
/// ground plane in front of the camera within `max_depth`.
inline bool ray_hits_ground(const Vec2& feature, const Plane& ground, const CameraIntrinsics& k,
                            double max_depth) {
  const Vec3 ray = unproject_ray(feature, k);
  const double denom = ground.normal.dot(ray);
  if (denom >= -1e-9) return false;  // ray points away from the ground
  const double z = ground.offset / denom * ray.z();
  return z > 0.0 && z <= max_depth;
}

namespace detail {

inline DepthEstimate finish_estimate(const Vec3& ray, const TriangleFit& fit, DepthSource source,
                                     const DepthConfig& cfg, bool check_angle) {
  DepthEstimate e;
  e.source = source;
  e.plane_normal = fit.plane.normal;
  const double cos_incidence = std::abs(fit.plane.normal.dot(ray));
  if (cos_incidence <= 1e-9) {
    e.status = DepthStatus::RejectedAngle;
    return e;
  }
  e.depth = intersect_ray_plane(ray, fit.plane);
  if (check_angle &&
      std::acos(std::min(1.0, cos_incidence)) * 180.0 / M_PI >= cfg.max_incidence_angle_deg) {
    e.status = DepthStatus::RejectedAngle;
    return e;
  }
  e.status = e.depth > 0.0 && e.depth <= cfg.max_depth ? DepthStatus::Valid
                                                       : DepthStatus::RejectedRange;
  return e;
}

}  // namespace detail

/// Depth of one feature. Failures are reported through the status field.
/// The ground branch fits only points near the global ground plane, skips the
/// incidence test and requires the intersection to lie near that plane. When
/// those points span no triangle the global plane itself is intersected.
inline DepthEstimate estimate_depth(const Vec2& feature, bool is_ground,
                                    const ProjectedCloud& cloud, const std::optional<Plane>& ground,
                                    const DepthConfig& cfg) {
  const Vec3 ray = unproject_ray(feature, cloud.intrinsics());
  DepthEstimate failed;
  if (is_ground && ground) {
    failed.source = DepthSource::GroundPlane;
    std::vector<Vec3> near_ground;
    for (const auto& p :
         cloud.query(feature, cfg.ground_roi_half_width, cfg.ground_roi_half_height)) {
      if (std::abs(ground->signed_distance(p.xyz)) <= cfg.ground_vicinity) near_ground.push_back(p.xyz);
    }
    if (near_ground.size() < 3) return failed;
    TriangleFit fit;
    try {
      fit = fit_plane_max_triangle(near_ground, cfg.min_triangle_area_ground, cfg.exhaustive_cap);
    } catch (const DegenerateTriangle&) {
      // a single scan ring, e.g. where the image border clips the ROI: the
      // points already lie on the global plane
      fit.plane = *ground;
    }
    DepthEstimate e = detail::finish_estimate(ray, fit, DepthSource::GroundPlane, cfg, false);
    if (e.status == DepthStatus::Valid) {
      const Vec3 hit = ray * (e.depth / ray.z());
      if (std::abs(ground->signed_distance(hit)) > cfg.ground_vicinity)
        e.status = DepthStatus::RejectedDegenerate;
    }
    return e;
  }

  const auto f = cloud.query(feature, cfg.roi_half_width, cfg.roi_half_height);
  if (f.size() < 3) return failed;
  const auto seg = segment_foreground(f, cfg.histogram_bin_width, cfg.significant_bin_count);
  if (seg.size() < 3) {
    failed.status = DepthStatus::RejectedDegenerate;
    return failed;
  }
  std::vector<Vec3> pts;
  pts.reserve(seg.size());
  for (const auto& p : seg) pts.push_back(p.xyz);
  try {
    const TriangleFit fit = fit_plane_max_triangle(pts, cfg.min_triangle_area, cfg.exhaustive_cap);
    return detail::finish_estimate(ray, fit, DepthSource::ForegroundPlane, cfg, true);
  } catch (const DegenerateTriangle&) {
    failed.status = DepthStatus::RejectedDegenerate;
    return failed;
  }
}

}  // namespace lidarvo
