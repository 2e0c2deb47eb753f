#pragma once

// Rigid transforms, the pinhole camera, epipolar geometry and two-view
// triangulation. Poses map points from a source frame into a target frame:
// x_target = R * x_source + t.

#include <algorithm>
#include <cmath>
#include <type_traits>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "lidarvo/error.hpp"

namespace lidarvo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

/// Plain value of a scalar, also for automatic-differentiation scalars.
template <typename T>
double scalar_value(const T& x) {
  if constexpr (std::is_arithmetic_v<T>) {
    return static_cast<double>(x);
  } else {
    return x.value();
  }
}

template <typename T>
Eigen::Matrix<T, 3, 3> skew(const Eigen::Matrix<T, 3, 1>& v) {
  Eigen::Matrix<T, 3, 3> m;
  m << T(0), -v(2), v(1),
       v(2), T(0), -v(0),
       -v(1), v(0), T(0);
  return m;
}

/// Rodrigues' formula.
inline Mat3 so3_exp(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 k = skew(w);
  if (theta < 1e-10) return Mat3::Identity() + k + 0.5 * k * k;
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

inline Vec3 so3_log(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.angle() * aa.axis();
}

/// Closest rotation in Frobenius norm.
inline Mat3 project_to_rotation(const Mat3& m) {
  const Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

/// Rigid transform in SE(3).
class Pose {
 public:
  Pose() = default;

  /// The rotation argument is projected onto SO(3).
  Pose(const Mat3& rotation, const Vec3& translation)
      : rotation_(project_to_rotation(rotation)), translation_(translation) {}

  static Pose identity() { return {}; }
  static Pose from_axis_angle(const Vec3& axis_angle, const Vec3& translation) {
    return Pose(Unchecked{}, so3_exp(axis_angle), translation);
  }
  static Pose from_translation(const Vec3& translation) {
    return Pose(Unchecked{}, Mat3::Identity(), translation);
  }
  /// Top 3x4 block of a homogeneous matrix.
  static Pose from_matrix(const Mat34& m) { return Pose(m.leftCols<3>(), m.col(3)); }

  const Mat3& rotation() const noexcept { return rotation_; }
  const Vec3& translation() const noexcept { return translation_; }

  Pose operator*(const Pose& other) const {
    return Pose(Unchecked{}, rotation_ * other.rotation_,
                rotation_ * other.translation_ + translation_);
  }
  Vec3 operator*(const Vec3& x) const { return rotation_ * x + translation_; }

  Pose inverse() const {
    const Mat3 rt = rotation_.transpose();
    return Pose(Unchecked{}, rt, -(rt * translation_));
  }

  /// Applies a local increment (omega, v): R <- exp(omega) R, t <- t + v.
  Pose retract(const Vec6& delta) const {
    return Pose(Unchecked{}, so3_exp(delta.head<3>()) * rotation_,
                translation_ + delta.tail<3>());
  }

  /// Rotation angle in radians, in [0, pi].
  double rotation_angle() const {
    const Mat3& r = rotation_;
    const double s = 0.5 * Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)).norm();
    return std::atan2(s, 0.5 * (r.trace() - 1.0));
  }

  Mat34 matrix3x4() const {
    Mat34 m;
    m.leftCols<3>() = rotation_;
    m.col(3) = translation_;
    return m;
  }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topRows<3>() = matrix3x4();
    return m;
  }

 private:
  struct Unchecked {};
  Pose(Unchecked, const Mat3& r, const Vec3& t) : rotation_(r), translation_(t) {}

  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

inline Pose compose(const Pose& a, const Pose& b) { return a * b; }
inline Pose inverse(const Pose& p) { return p.inverse(); }
inline Vec3 transform_point(const Pose& p, const Vec3& x) { return p * x; }

/// Pose lifted to an arbitrary scalar type (used by the residual functors).
template <typename T>
struct PoseT {
  Eigen::Matrix<T, 3, 3> rotation;
  Eigen::Matrix<T, 3, 1> translation;

  static PoseT from(const Pose& p) {
    return {p.rotation().cast<T>(), p.translation().cast<T>()};
  }
  Eigen::Matrix<T, 3, 1> operator*(const Eigen::Matrix<T, 3, 1>& x) const {
    return rotation * x + translation;
  }
  PoseT operator*(const PoseT& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  PoseT inverse() const {
    const Eigen::Matrix<T, 3, 3> rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }
};

struct CameraIntrinsics {
  double focal_length_x = 0.0;
  double focal_length_y = 0.0;
  Vec2 principal_point = Vec2::Zero();
  int width = 0;
  int height = 0;

  /// Throws Error when focal lengths are not positive or the principal point
  /// lies outside the image.
  void validate() const {
    if (!(focal_length_x > 0.0 && focal_length_y > 0.0))
      throw Error("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw Error("camera image size must be positive");
    if (principal_point.x() < 0.0 || principal_point.x() > width ||
        principal_point.y() < 0.0 || principal_point.y() > height)
      throw Error("principal point outside image bounds");
  }

  bool contains(const Vec2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width - 1.0 && px.y() <= height - 1.0;
  }

  Mat3 matrix() const {
    Mat3 k = Mat3::Identity();
    k(0, 0) = focal_length_x;
    k(1, 1) = focal_length_y;
    k(0, 2) = principal_point.x();
    k(1, 2) = principal_point.y();
    return k;
  }

  Mat3 inverse_matrix() const {
    Mat3 k = Mat3::Identity();
    k(0, 0) = 1.0 / focal_length_x;
    k(1, 1) = 1.0 / focal_length_y;
    k(0, 2) = -principal_point.x() / focal_length_x;
    k(1, 2) = -principal_point.y() / focal_length_y;
    return k;
  }
};

struct ExtrinsicCalibration {
  Pose lidar_to_camera;
};

inline constexpr double kMinDepth = 1e-9;

/// Pinhole projection without the depth check.
template <typename T>
Eigen::Matrix<T, 2, 1> project_unchecked(const Eigen::Matrix<T, 3, 1>& p,
                                         const CameraIntrinsics& k) {
  return {T(k.focal_length_x) * p(0) / p(2) + T(k.principal_point.x()),
          T(k.focal_length_y) * p(1) / p(2) + T(k.principal_point.y())};
}

/// Projects a camera-frame point to pixels. Throws NonPositiveDepth when the
/// point is on or behind the image plane. The result may lie outside the image.
inline Vec2 project(const Vec3& point, const CameraIntrinsics& k) {
  if (point.z() <= kMinDepth) throw NonPositiveDepth();
  return project_unchecked<double>(point, k);
}

/// Unit line of sight through a pixel.
inline Vec3 unproject_ray(const Vec2& pixel, const CameraIntrinsics& k) {
  return Vec3((pixel.x() - k.principal_point.x()) / k.focal_length_x,
              (pixel.y() - k.principal_point.y()) / k.focal_length_y, 1.0)
      .normalized();
}

/// Camera-frame point at the given z-depth along the pixel's line of sight.
template <typename T>
Eigen::Matrix<T, 3, 1> backproject(const Vec2& pixel, const T& depth, const CameraIntrinsics& k) {
  return {T((pixel.x() - k.principal_point.x()) / k.focal_length_x) * depth,
          T((pixel.y() - k.principal_point.y()) / k.focal_length_y) * depth, depth};
}

/// F = K^-T [t]x R K^-1 scaled to unit Frobenius norm, for a motion mapping
/// previous-camera coordinates into current-camera coordinates. Corresponding
/// pixels satisfy current^T F previous = 0. A motion without translation has
/// no epipolar geometry; the zero matrix is returned for it.
template <typename T>
Eigen::Matrix<T, 3, 3> fundamental_matrix(const Eigen::Matrix<T, 3, 3>& rotation,
                                          const Eigen::Matrix<T, 3, 1>& translation,
                                          const CameraIntrinsics& k) {
  const Eigen::Matrix<T, 3, 3> k_inv = k.inverse_matrix().cast<T>();
  const Eigen::Matrix<T, 3, 3> f = k_inv.transpose() * skew(translation) * rotation * k_inv;
  T norm2 = T(0);
  for (int i = 0; i < 9; ++i) norm2 += f(i) * f(i);
  if (!(scalar_value(norm2) > 1e-300)) return Eigen::Matrix<T, 3, 3>::Zero();
  using std::sqrt;
  return f / sqrt(norm2);
}

inline Mat3 fundamental_matrix(const Pose& motion, const CameraIntrinsics& k) {
  return fundamental_matrix<double>(motion.rotation(), motion.translation(), k);
}

/// Linear (DLT) two-view triangulation. Poses are camera-from-world; the
/// result is in world coordinates. Cheirality is not checked.
/// Throws DegenerateGeometry for coincident camera centres or parallel rays.
inline Vec3 triangulate(const Vec2& obs_a, const Vec2& obs_b, const Pose& pose_a,
                        const Pose& pose_b, const CameraIntrinsics& k) {
  const Vec3 center_a = pose_a.inverse().translation();
  const Vec3 center_b = pose_b.inverse().translation();
  if ((center_a - center_b).norm() < 1e-12)
    throw DegenerateGeometry("triangulation from coincident camera centres");
  const Vec3 ray_a = pose_a.rotation().transpose() * unproject_ray(obs_a, k);
  const Vec3 ray_b = pose_b.rotation().transpose() * unproject_ray(obs_b, k);
  if (ray_a.cross(ray_b).norm() < 1e-8)
    throw DegenerateGeometry("triangulation from parallel rays");

  const Mat3 k_inv = k.inverse_matrix();
  Eigen::Matrix4d a;
  const auto add_view = [&](int row, const Vec2& obs, const Pose& pose) {
    const Vec3 x = k_inv * obs.homogeneous();
    const Mat34 p = pose.matrix3x4();
    a.row(row) = x.x() * p.row(2) - p.row(0);
    a.row(row + 1) = x.y() * p.row(2) - p.row(1);
  };
  add_view(0, obs_a, pose_a);
  add_view(2, obs_b, pose_b);
  const Eigen::JacobiSVD<Eigen::Matrix4d> svd(a, Eigen::ComputeFullV);
  const Vec4 h = svd.matrixV().col(3);
  if (std::abs(h.w()) < 1e-14) throw DegenerateGeometry("triangulated point at infinity");
  return h.head<3>() / h.w();
}

/// Camera centre in world coordinates of a camera-from-world pose.
inline Vec3 camera_center(const Pose& camera_from_world) {
  return -(camera_from_world.rotation().transpose() * camera_from_world.translation());
}

}  // namespace lidarvo
