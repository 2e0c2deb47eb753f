#pragma once

// Synthetic street scenes with exact ground truth: a camera driving along
// straight and arc segments between facades, a flat road, far points and
// moving vehicles, observed by a pinhole camera (feature tracks and semantic
// label images) and a multi-beam LIDAR.
//
// The world frame is the first camera frame: x right, y down, z forward. The
// road is the plane y = camera_height.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <vector>

#include "lidarvo/dataset.hpp"
#include "lidarvo/error.hpp"
#include "lidarvo/geometry.hpp"
#include "lidarvo/tracking.hpp"

namespace lidarvo::sim {

namespace label {
inline constexpr std::uint8_t kRoad = 7;
inline constexpr std::uint8_t kBuilding = 11;
inline constexpr std::uint8_t kVegetation = 21;
inline constexpr std::uint8_t kSky = 23;
inline constexpr std::uint8_t kCar = 26;
}  // namespace label

/// Straight when turn_deg is 0, otherwise a circular arc; positive turns
/// right.
struct PathSegment {
  double length = 0.0;
  double turn_deg = 0.0;
};

struct LidarModel {
  int beams = 64;
  double lowest_nadir_deg = 65.2;  // angle of beam 0 from straight down
  double beam_step_deg = 0.4254;
  double azimuth_fov_deg = 120.0;
  double azimuth_step_deg = 0.2;
  double max_range = 120.0;
  double range_sigma = 0.0;
};

inline CameraIntrinsics kitti_intrinsics() {
  CameraIntrinsics k;
  k.focal_length_x = k.focal_length_y = 718.856;
  k.principal_point = Vec2(607.1928, 185.2157);
  k.width = 1241;
  k.height = 376;
  return k;
}

/// LIDAR axes x forward, y left, z up; mounted 0.08 m above and 0.27 m
/// behind the camera.
inline ExtrinsicCalibration kitti_extrinsics() {
  Mat3 r;
  r << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  return {Pose(r, Vec3(0, -0.08, -0.27))};
}

struct SceneSpec {
  std::vector<PathSegment> path{{200.0, 0.0}};
  double step = 1.0;  // meters per frame
  double frame_rate = 10.0;
  double camera_height = 1.65;
  CameraIntrinsics camera = kitti_intrinsics();
  ExtrinsicCalibration extrinsics = kitti_extrinsics();
  LidarModel lidar;

  double facade_offset_min = 6.0;
  double facade_offset_max = 10.0;
  double facade_length_min = 6.0;
  double facade_length_max = 14.0;
  double facade_gap_max = 3.0;
  double facade_height_min = 4.0;
  double facade_height_max = 10.0;
  double vegetation_fraction = 0.2;
  double facade_feature_density = 0.4;  // per square meter

  double road_half_width = 5.0;
  double ground_feature_density = 0.06;

  int far_points = 300;
  double far_min = 80.0;
  double far_max = 250.0;

  int vehicles = 0;
  double vehicle_feature_density = 2.0;

  double pixel_sigma = 0.0;
  double track_end_probability = 0.05;
  double min_feature_depth = 1.0;
  bool semantics = true;
  std::uint64_t seed = 1;

  /// Number of frames; 0 derives it from the path length and step.
  std::size_t frame_count = 0;

  std::size_t frames() const {
    if (frame_count > 0) return frame_count;
    double len = 0.0;
    for (const auto& s : path) len += s.length;
    return static_cast<std::size_t>(std::floor(len / step + 1e-9)) + 1;
  }

  void validate() const {
    if (path.empty()) throw ConfigError("synthetic path is empty");
    for (const auto& s : path)
      if (!(s.length > 0.0)) throw ConfigError("path segment length must be positive");
    if (!(step >= 0.0 && frame_rate > 0.0 && camera_height > 0.0)) throw ConfigError("invalid motion settings");
    if (step == 0.0 && frame_count == 0) throw ConfigError("a standing camera needs an explicit frame count");
    if (!(facade_offset_min > 0 && facade_offset_min <= facade_offset_max)) throw ConfigError("invalid facade offsets");
    if (!(facade_length_min > 0 && facade_length_min <= facade_length_max)) throw ConfigError("invalid facade lengths");
    if (!(facade_height_min > 0 && facade_height_min <= facade_height_max)) throw ConfigError("invalid facade heights");
    if (lidar.beams <= 0 || !(lidar.azimuth_step_deg > 0) || !(lidar.max_range > 0))
      throw ConfigError("invalid LIDAR model");
    if (pixel_sigma < 0 || lidar.range_sigma < 0) throw ConfigError("noise must be non-negative");
    if (!(track_end_probability >= 0 && track_end_probability < 1)) throw ConfigError("invalid track end probability");
    camera.validate();
  }
};

/// Straight 80 m, a 90 degree right arc of radius 40 m, straight 57 m.
inline SceneSpec corridor_with_turn() {
  SceneSpec s;
  s.path = {{80.0, 0.0}, {M_PI / 2 * 40.0, 90.0}, {57.0, 0.0}};
  return s;
}

/// Arc-length parametrized path in the x-z plane, extended straight beyond
/// both ends.
class Path {
 public:
  explicit Path(const std::vector<PathSegment>& segments) {
    double s = 0.0, heading = 0.0;
    Vec3 pos = Vec3::Zero();
    for (const auto& seg : segments) {
      const double kappa = seg.turn_deg * M_PI / 180.0 / seg.length;
      segs_.push_back({s, seg.length, kappa, pos, heading});
      pos = eval(segs_.back(), seg.length);
      heading += kappa * seg.length;
      s += seg.length;
    }
    length_ = s;
    end_pos_ = pos;
    end_heading_ = heading;
  }

  double length() const noexcept { return length_; }

  Vec3 position(double s) const {
    if (s <= 0.0) return forward(0.0) * s;
    if (s >= length_) return end_pos_ + forward(length_) * (s - length_);
    const Seg& g = find(s);
    return eval(g, s - g.s0);
  }

  double heading(double s) const {
    if (s <= 0.0) return 0.0;
    if (s >= length_) return end_heading_;
    const Seg& g = find(s);
    return g.heading0 + g.kappa * (s - g.s0);
  }

  Vec3 forward(double s) const {
    const double h = heading(s);
    return Vec3(std::sin(h), 0.0, std::cos(h));
  }
  Vec3 right(double s) const {
    const double h = heading(s);
    return Vec3(std::cos(h), 0.0, -std::sin(h));
  }
  Mat3 rotation(double s) const { return so3_exp(Vec3(0.0, heading(s), 0.0)); }

  /// World-from-camera pose at arc length s.
  Pose camera(double s) const { return Pose(rotation(s), position(s)); }

 private:
  struct Seg {
    double s0, length, kappa;
    Vec3 pos0;
    double heading0;
  };

  static Vec3 eval(const Seg& g, double ds) {
    const double h0 = g.heading0;
    if (std::abs(g.kappa) < 1e-12)
      return g.pos0 + ds * Vec3(std::sin(h0), 0.0, std::cos(h0));
    const double h = h0 + g.kappa * ds;
    return g.pos0 + Vec3((std::cos(h0) - std::cos(h)) / g.kappa, 0.0, (std::sin(h) - std::sin(h0)) / g.kappa);
  }

  const Seg& find(double s) const {
    for (std::size_t i = segs_.size(); i-- > 0;)
      if (s >= segs_[i].s0) return segs_[i];
    return segs_.front();
  }

  std::vector<Seg> segs_;
  double length_ = 0.0;
  Vec3 end_pos_ = Vec3::Zero();
  double end_heading_ = 0.0;
};

/// Rectangle origin + a*u + b*v with a in [0, lu], b in [0, lv].
struct Quad {
  Vec3 origin;
  Vec3 u;
  Vec3 v;
  double lu = 0.0;
  double lv = 0.0;
  std::uint8_t label = label::kBuilding;

  Vec3 normal() const { return u.cross(v); }
  std::array<Vec3, 4> corners() const {
    return {origin, origin + lu * u, origin + lu * u + lv * v, origin + lv * v};
  }

  /// Ray parameter of the hit, if any.
  std::optional<double> intersect(const Vec3& o, const Vec3& d) const {
    const Vec3 n = normal();
    const double denom = n.dot(d);
    if (std::abs(denom) < 1e-12) return std::nullopt;
    const double t = n.dot(origin - o) / denom;
    if (t <= 0.0) return std::nullopt;
    const Vec3 q = o + t * d - origin;
    const double a = q.dot(u), b = q.dot(v);
    if (a < 0.0 || a > lu || b < 0.0 || b > lv) return std::nullopt;
    return t;
  }
};

struct Vehicle {
  double s0 = 0.0;      // arc length at frame 0
  double speed = 0.0;   // meters per frame along the path, negative for oncoming
  double lateral = 0.0;  // offset to the right of the path
  Vec3 half_size{0.9, 0.75, 2.25};  // x, y, z in the vehicle frame

  /// World-from-vehicle pose at a frame. Vehicle axes follow the camera
  /// convention; its centre sits half its height above the road.
  Pose pose(const Path& path, double camera_height, double frame) const {
    const double s = s0 + speed * frame;
    const Vec3 c = path.position(s) + lateral * path.right(s) + Vec3(0, camera_height - half_size.y(), 0);
    const double flip = speed < 0 ? M_PI : 0.0;
    return Pose(so3_exp(Vec3(0, path.heading(s) + flip, 0)), c);
  }

  std::optional<double> intersect(const Pose& vehicle_from_world, const Vec3& o, const Vec3& d) const {
    const Pose& vw = vehicle_from_world;
    const Vec3 lo = vw * o;
    const Vec3 ld = vw.rotation() * d;
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
      if (std::abs(ld(a)) < 1e-15) {
        if (std::abs(lo(a)) > half_size(a)) return std::nullopt;
        continue;
      }
      double ta = (-half_size(a) - lo(a)) / ld(a), tb = (half_size(a) - lo(a)) / ld(a);
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return std::nullopt;
    }
    if (t0 <= 0.0) return std::nullopt;
    return t0;
  }
};

struct Feature {
  Vec3 point;  // world, or vehicle frame for vehicle features
  int facade = -1;
  int vehicle = -1;
  bool ground = false;
  std::uint8_t label = label::kBuilding;
};

struct Scene {
  SceneSpec spec;
  Path path{std::vector<PathSegment>{{1.0, 0.0}}};
  std::vector<Pose> poses;  // world-from-camera per frame
  std::vector<Quad> facades;
  std::vector<Vehicle> vehicles;
  std::vector<Feature> features;
  std::vector<int> track_feature;  // feature index of each track id

  Vec3 feature_world(const Feature& f, std::size_t frame) const {
    if (f.vehicle < 0) return f.point;
    return vehicles[static_cast<std::size_t>(f.vehicle)].pose(path, spec.camera_height, static_cast<double>(frame)) *
           f.point;
  }

  /// Vehicle-from-world poses at a frame.
  std::vector<Pose> vehicle_frames(std::size_t frame) const {
    std::vector<Pose> out;
    for (const auto& v : vehicles) out.push_back(v.pose(path, spec.camera_height, static_cast<double>(frame)).inverse());
    return out;
  }

  /// Nearest hit of a world ray among facades and vehicles; the road is
  /// included when `with_ground`.
  double cast(const Vec3& o, const Vec3& d, const std::vector<Pose>& vehicle_from_world, bool with_ground,
              const std::vector<int>& facade_subset, const std::vector<int>* vehicle_subset = nullptr) const {
    double best = std::numeric_limits<double>::infinity();
    for (int i : facade_subset)
      if (auto t = facades[static_cast<std::size_t>(i)].intersect(o, d)) best = std::min(best, *t);
    const auto hit_vehicle = [&](std::size_t v) {
      if (auto t = vehicles[v].intersect(vehicle_from_world[v], o, d)) best = std::min(best, *t);
    };
    if (vehicle_subset) {
      for (int v : *vehicle_subset) hit_vehicle(static_cast<std::size_t>(v));
    } else {
      for (std::size_t v = 0; v < vehicles.size(); ++v) hit_vehicle(v);
    }
    if (with_ground && d.y() > 1e-12) {
      const double t = (spec.camera_height - o.y()) / d.y();
      if (t > 0) best = std::min(best, t);
    }
    return best;
  }

  /// Facades with a point within `range` of `center`.
  std::vector<int> facades_near(const Vec3& center, double range) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < facades.size(); ++i) {
      const Quad& q = facades[i];
      const Vec3 rel = center - q.origin;
      const double a = std::clamp(rel.dot(q.u), 0.0, q.lu), b = std::clamp(rel.dot(q.v), 0.0, q.lv);
      if ((q.origin + a * q.u + b * q.v - center).norm() <= range) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  std::vector<Vec3> lidar_cloud(std::size_t frame) const;
  SemanticImage semantic_image(std::size_t frame) const;
};

namespace detail {

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a * 0x9E3779B97F4A7C15ULL ^ (b + 0x632BE59BD9B4E019ULL + (a << 6) + (a >> 2));
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  return x;
}

/// Convex polygon (already clipped to z > near) filled into `img`.
inline void fill_convex(GrayImage& img, const std::vector<Vec2>& poly, std::uint8_t value) {
  if (poly.size() < 3) return;
  double ymin = poly[0].y(), ymax = poly[0].y();
  for (const auto& p : poly) {
    ymin = std::min(ymin, p.y());
    ymax = std::max(ymax, p.y());
  }
  // pixel centres sit at integer coordinates
  const int y0 = std::max(0, static_cast<int>(std::ceil(ymin)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::floor(ymax)));
  for (int y = y0; y <= y1; ++y) {
    const double yc = y;
    double xl = std::numeric_limits<double>::infinity(), xr = -xl;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2& a = poly[i];
      const Vec2& b = poly[(i + 1) % poly.size()];
      if ((a.y() <= yc && b.y() >= yc) || (b.y() <= yc && a.y() >= yc)) {
        if (std::abs(b.y() - a.y()) < 1e-12) {
          xl = std::min({xl, a.x(), b.x()});
          xr = std::max({xr, a.x(), b.x()});
        } else {
          const double x = a.x() + (yc - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
          xl = std::min(xl, x);
          xr = std::max(xr, x);
        }
      }
    }
    if (!(xl <= xr)) continue;
    const int x0 = std::max(0, static_cast<int>(std::ceil(xl)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::floor(xr)));
    for (int x = x0; x <= x1; ++x) img.at(x, y) = value;
  }
}

/// Clips a camera-frame polygon to z >= near and projects it.
inline std::vector<Vec2> clip_and_project(const std::vector<Vec3>& poly, const CameraIntrinsics& k,
                                          double near = 0.05) {
  std::vector<Vec3> clipped;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec3& a = poly[i];
    const Vec3& b = poly[(i + 1) % poly.size()];
    const bool ia = a.z() >= near, ib = b.z() >= near;
    if (ia) clipped.push_back(a);
    if (ia != ib) clipped.push_back(a + (near - a.z()) / (b.z() - a.z()) * (b - a));
  }
  std::vector<Vec2> out;
  for (const Vec3& p : clipped) out.push_back(project_unchecked<double>(p, k));
  return out;
}

}  // namespace detail

inline std::vector<Vec3> Scene::lidar_cloud(std::size_t frame) const {
  const LidarModel& m = spec.lidar;
  const Pose world_from_lidar = poses.at(frame) * spec.extrinsics.lidar_to_camera;
  const Vec3 origin = world_from_lidar.translation();
  const Pose lidar_from_world = world_from_lidar.inverse();
  const int columns = static_cast<int>(std::floor(m.azimuth_fov_deg / m.azimuth_step_deg + 1e-9)) + 1;
  const auto azimuth = [&](int c) { return (-0.5 * m.azimuth_fov_deg + c * m.azimuth_step_deg) * M_PI / 180.0; };
  // Facades per azimuth column. A quad wholly in front of the scanner covers
  // the azimuth interval spanned by its corners; one straddling it may cover
  // any column; one wholly behind it none.
  std::vector<std::vector<int>> column_facades(static_cast<std::size_t>(columns));
  for (int i : facades_near(origin, m.max_range)) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    bool ahead = false, behind = false;
    for (const Vec3& c : facades[static_cast<std::size_t>(i)].corners()) {
      const Vec3 l = lidar_from_world * c;
      (l.x() > 0.0 ? ahead : behind) = true;
      const double a = std::atan2(l.y(), l.x());
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
    if (!ahead) continue;
    for (int c = 0; c < columns; ++c) {
      const double a = azimuth(c);
      if (behind || (a >= lo - 1e-9 && a <= hi + 1e-9)) column_facades[static_cast<std::size_t>(c)].push_back(i);
    }
  }
  const auto vehicle_poses = vehicle_frames(frame);
  std::vector<int> vehicle_subset;
  for (std::size_t v = 0; v < vehicles.size(); ++v) {
    const Vec3 c = lidar_from_world * vehicle_poses[v].inverse().translation();
    const double radius = vehicles[v].half_size.norm();
    if (c.norm() - radius <= m.max_range && c.x() + radius > 0.0) vehicle_subset.push_back(static_cast<int>(v));
  }
  std::mt19937_64 rng(detail::mix(spec.seed, 0x11D4 + frame));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Vec3> cloud;
  for (int b = 0; b < m.beams; ++b) {
    const double elevation = (m.lowest_nadir_deg + b * m.beam_step_deg - 90.0) * M_PI / 180.0;
    for (int c = 0; c < columns; ++c) {
      const double az = azimuth(c);
      const Vec3 dir_l(std::cos(elevation) * std::cos(az), std::cos(elevation) * std::sin(az), std::sin(elevation));
      const Vec3 dir_w = world_from_lidar.rotation() * dir_l;
      double t = cast(origin, dir_w, vehicle_poses, true, column_facades[static_cast<std::size_t>(c)], &vehicle_subset);
      if (!(t <= m.max_range)) continue;
      if (m.range_sigma > 0.0) t += m.range_sigma * noise(rng);
      cloud.push_back(dir_l * t);
    }
  }
  return cloud;
}

inline SemanticImage Scene::semantic_image(std::size_t frame) const {
  const CameraIntrinsics& k = spec.camera;
  SemanticImage out;
  out.labels = GrayImage(k.width, k.height, label::kSky);
  const Pose cw = poses.at(frame).inverse();
  // the camera has no pitch or roll: the horizon is the principal row
  for (int y = 0; y < k.height; ++y)
    if (y > k.principal_point.y())
      for (int x = 0; x < k.width; ++x) out.labels.at(x, y) = label::kRoad;

  struct Item {
    double depth;
    std::vector<Vec3> poly;
    std::uint8_t value;
  };
  std::vector<Item> items;
  const Vec3 eye = poses.at(frame).translation();
  for (int i : facades_near(eye, 250.0)) {
    const Quad& q = facades[static_cast<std::size_t>(i)];
    std::vector<Vec3> poly;
    double depth = 0.0;
    for (const Vec3& c : q.corners()) {
      poly.push_back(cw * c);
      depth += poly.back().z() / 4.0;
    }
    items.push_back({depth, poly, q.label});
  }
  for (const auto& v : vehicles) {
    const Pose wv = v.pose(path, spec.camera_height, static_cast<double>(frame));
    const Vec3& h = v.half_size;
    const double depth = (cw * wv.translation()).z();
    for (int axis = 0; axis < 3; ++axis) {
      for (double sign : {-1.0, 1.0}) {
        const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
        std::vector<Vec3> poly;
        for (auto [s1, s2] : {std::pair{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}) {
          Vec3 p;
          p(axis) = sign * h(axis);
          p(a1) = s1 * h(a1);
          p(a2) = s2 * h(a2);
          poly.push_back(cw * (wv * p));
        }
        items.push_back({depth, poly, label::kCar});
      }
    }
  }
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.depth > b.depth; });
  for (const auto& it : items) detail::fill_convex(out.labels, detail::clip_and_project(it.poly, k), it.value);
  return out;
}

struct SyntheticDataset {
  DatasetSequence sequence;
  std::shared_ptr<const Scene> scene;
};

/// Builds the scene and its observations. Tracks and ground truth are
/// computed eagerly; LIDAR clouds and label images on demand. Everything is
/// a deterministic function of the spec (including its seed).
inline SyntheticDataset generate_scene(const SceneSpec& spec) {
  spec.validate();
  auto scene = std::make_shared<Scene>();
  scene->spec = spec;
  scene->path = Path(spec.path);
  const Path& path = scene->path;
  const std::size_t n = spec.frames();
  for (std::size_t i = 0; i < n; ++i) scene->poses.push_back(path.camera(static_cast<double>(i) * spec.step));

  std::mt19937_64 rng(detail::mix(spec.seed, 0x5CE7E));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto uniform = [&](double a, double b) { return a + (b - a) * u01(rng); };
  const auto poisson_count = [&](double mean) {
    return static_cast<int>(std::poisson_distribution<int>(std::max(mean, 0.0))(rng));
  };

  // facades along both sides
  const double s_begin = -20.0, s_end = path.length() + 60.0;
  for (int side : {-1, 1}) {
    double s = s_begin + uniform(0.0, spec.facade_gap_max);
    while (s < s_end) {
      const double len = uniform(spec.facade_length_min, spec.facade_length_max);
      const double offset = uniform(spec.facade_offset_min, spec.facade_offset_max);
      const double height = uniform(spec.facade_height_min, spec.facade_height_max);
      const bool vegetation = u01(rng) < spec.vegetation_fraction;
      Vec3 a = path.position(s) + side * offset * path.right(s);
      Vec3 b = path.position(s + len) + side * offset * path.right(s + len);
      a.y() = b.y() = spec.camera_height;
      Quad q;
      q.origin = a;
      q.lu = (b - a).norm();
      q.u = (b - a) / q.lu;
      q.v = Vec3(0, -1, 0);
      q.lv = height;
      q.label = vegetation ? label::kVegetation : label::kBuilding;
      const int fid = static_cast<int>(scene->facades.size());
      scene->facades.push_back(q);
      const int count = poisson_count(spec.facade_feature_density * q.lu * q.lv);
      for (int f = 0; f < count; ++f) {
        Feature feat;
        feat.point = q.origin + uniform(0.0, q.lu) * q.u + uniform(0.0, q.lv) * q.v;
        feat.facade = fid;
        feat.label = q.label;
        scene->features.push_back(feat);
      }
      s += len + uniform(0.0, spec.facade_gap_max);
    }
  }

  // road features
  {
    const int count = poisson_count(spec.ground_feature_density * 2 * spec.road_half_width * (s_end - s_begin));
    for (int f = 0; f < count; ++f) {
      const double s = uniform(s_begin, s_end);
      Feature feat;
      feat.point = path.position(s) + uniform(-spec.road_half_width, spec.road_half_width) * path.right(s);
      feat.point.y() = spec.camera_height;
      feat.ground = true;
      feat.label = label::kRoad;
      scene->features.push_back(feat);
    }
  }

  // far points
  for (int f = 0; f < spec.far_points; ++f) {
    const double s = uniform(0.0, path.length());
    const double d = uniform(spec.far_min, spec.far_max);
    Feature feat;
    feat.point = path.position(s) + path.rotation(s) * Vec3(uniform(-0.6, 0.6) * d, uniform(-25.0, 0.0), d);
    feat.label = label::kBuilding;
    scene->features.push_back(feat);
  }

  // vehicles: alternately oncoming on the left and slower traffic on the right
  for (int v = 0; v < spec.vehicles; ++v) {
    Vehicle veh;
    const bool oncoming = v % 2 == 0;
    veh.s0 = uniform(15.0, path.length() + 30.0);
    veh.speed = oncoming ? -uniform(0.5, 1.0) * spec.step : uniform(0.3, 0.7) * spec.step;
    veh.lateral = oncoming ? -3.5 : 3.5;
    const int vid = static_cast<int>(scene->vehicles.size());
    scene->vehicles.push_back(veh);
    const Vec3& h = veh.half_size;
    const double area = 8 * (h.x() * h.y() + h.y() * h.z() + h.x() * h.z());
    const int count = poisson_count(spec.vehicle_feature_density * area);
    for (int f = 0; f < count; ++f) {
      // uniform on the surface: pick a face by area
      const double faces[3] = {h.y() * h.z(), h.x() * h.z(), h.x() * h.y()};
      double pick = uniform(0.0, faces[0] + faces[1] + faces[2]);
      int axis = 0;
      while (axis < 2 && pick > faces[axis]) pick -= faces[axis++];
      Vec3 p(uniform(-h.x(), h.x()), uniform(-h.y(), h.y()), uniform(-h.z(), h.z()));
      p(axis) = (u01(rng) < 0.5 ? -1.0 : 1.0) * h(axis);
      Feature feat;
      feat.point = p;
      feat.vehicle = vid;
      feat.label = label::kCar;
      scene->features.push_back(feat);
    }
  }

  // observations
  std::mt19937_64 obs_rng(detail::mix(spec.seed, 0x0B5));
  std::normal_distribution<double> pixel_noise(0.0, 1.0);
  std::vector<int> current(scene->features.size(), -1);
  std::vector<FeatureTrack> tracks;
  const CameraIntrinsics& k = spec.camera;
  for (std::size_t frame = 0; frame < n; ++frame) {
    const Pose& wc = scene->poses[frame];
    const Pose cw = wc.inverse();
    const Vec3 eye = wc.translation();
    const auto subset = scene->facades_near(eye, spec.far_max + 10.0);
    const auto vehicle_poses = scene->vehicle_frames(frame);
    std::vector<Pose> world_from_vehicle;
    for (const Pose& p : vehicle_poses) world_from_vehicle.push_back(p.inverse());
    for (std::size_t fi = 0; fi < scene->features.size(); ++fi) {
      const Feature& f = scene->features[fi];
      const Vec3 w = f.vehicle < 0 ? f.point : world_from_vehicle[static_cast<std::size_t>(f.vehicle)] * f.point;
      const Vec3 c = cw * w;
      bool visible = c.z() > spec.min_feature_depth;
      Vec2 px;
      if (visible) {
        px = project_unchecked<double>(c, k);
        visible = k.contains(px);
      }
      if (visible) {
        const Vec3 d = w - eye;
        const double dist = d.norm();
        visible = scene->cast(eye, d / dist, vehicle_poses, false, subset) >= dist - 1e-6;
      }
      const double end_draw = u01(obs_rng);
      const double nx = pixel_noise(obs_rng), ny = pixel_noise(obs_rng);
      if (!visible) {
        current[fi] = -1;
        continue;
      }
      if (current[fi] >= 0 && end_draw < spec.track_end_probability) current[fi] = -1;
      if (current[fi] < 0) {
        current[fi] = static_cast<int>(tracks.size());
        FeatureTrack t;
        t.track_id = current[fi];
        tracks.push_back(t);
        scene->track_feature.push_back(static_cast<int>(fi));
      }
      const Vec2 observed = px + spec.pixel_sigma * Vec2(nx, ny);
      tracks[static_cast<std::size_t>(current[fi])].add(static_cast<int>(frame), observed);
    }
  }
  // single observations carry no motion information
  std::vector<FeatureTrack> kept;
  for (auto& t : tracks)
    if (t.observations.size() >= 2) kept.push_back(std::move(t));

  SyntheticDataset out;
  out.scene = scene;
  DatasetSequence& seq = out.sequence;
  seq.name = "synthetic-" + std::to_string(spec.seed);
  seq.intrinsics = k;
  seq.extrinsics = spec.extrinsics;
  for (std::size_t i = 0; i < n; ++i) seq.timestamps.push_back(static_cast<double>(i) / spec.frame_rate);
  seq.tracks = std::move(kept);
  seq.ground_truth = scene->poses;
  std::shared_ptr<const Scene> cscene = scene;
  seq.cloud = [cscene](std::size_t i) { return cscene->lidar_cloud(i); };
  if (spec.semantics) seq.semantics = [cscene](std::size_t i) { return cscene->semantic_image(i); };
  return out;
}

}  // namespace lidarvo::sim
