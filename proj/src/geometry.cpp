#include "jogs/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "jogs/error.hpp"

namespace jogs {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kDegenerate: return "degenerate configuration";
    case ErrorKind::kInsufficientData: return "insufficient data";
    case ErrorKind::kEstimationFailure: return "estimation failure";
    case ErrorKind::kRankDeficient: return "rank deficient";
    case ErrorKind::kNoConstraint: return "no constraint";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kIo: return "io error";
  }
  return "error";
}

namespace geometry {
namespace {

void require_finite(const EulerAngles& a) {
  if (!std::isfinite(a.alpha) || !std::isfinite(a.beta) || !std::isfinite(a.gamma)) {
    throw Error(ErrorKind::kInvalidArgument, "Euler angles must be finite");
  }
}

// Derivatives of the elementary rotations.
Mat3 d_rotation_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 0, 0, 0,
       0, -s, -c,
       0, c, -s;
  return m;
}

Mat3 d_rotation_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << -s, 0, c,
        0, 0, 0,
       -c, 0, -s;
  return m;
}

Mat3 d_rotation_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << -s, -c, 0,
        c, -s, 0,
        0, 0, 0;
  return m;
}

}  // namespace

Mat3 rotation_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 1, 0, 0,
       0, c, -s,
       0, s, c;
  return m;
}

Mat3 rotation_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, 0, s,
       0, 1, 0,
      -s, 0, c;
  return m;
}

Mat3 rotation_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, -s, 0,
       s, c, 0,
       0, 0, 1;
  return m;
}

Mat3 euler_to_rotation(const EulerAngles& angles) {
  require_finite(angles);
  return rotation_z(angles.gamma) * rotation_y(angles.beta) * rotation_x(angles.alpha);
}

std::array<Mat3, 3> rotation_jacobians(const EulerAngles& angles) {
  require_finite(angles);
  const Mat3 rx = rotation_x(angles.alpha);
  const Mat3 ry = rotation_y(angles.beta);
  const Mat3 rz = rotation_z(angles.gamma);
  return {rz * ry * d_rotation_x(angles.alpha),
          rz * d_rotation_y(angles.beta) * rx,
          d_rotation_z(angles.gamma) * ry * rx};
}

EulerAngles rotation_to_euler(const Mat3& r) {
  EulerAngles out;
  const double cos_beta = std::hypot(r(0, 0), r(1, 0));
  out.beta = std::atan2(-r(2, 0), cos_beta);
  if (cos_beta > 1e-12) {
    out.alpha = std::atan2(r(2, 1), r(2, 2));
    out.gamma = std::atan2(r(1, 0), r(0, 0));
  } else {
    // Gimbal lock: only alpha +/- gamma is observable; put it all in alpha.
    out.gamma = 0.0;
    out.alpha = std::atan2(-r(1, 2), r(1, 1));
  }
  return out;
}

double wrap_angle(double angle) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::remainder(angle, two_pi);  // [-pi, pi]
  if (r <= -std::numbers::pi) r += two_pi;
  return r;
}

EulerAngles canonicalize(const EulerAngles& angles) {
  return {wrap_angle(angles.alpha), wrap_angle(angles.beta), wrap_angle(angles.gamma)};
}

Mat3 CameraPose::rotation_matrix() const { return euler_to_rotation(rotation); }

Vec3 CameraPose::center() const { return -(rotation_matrix().transpose() * translation); }

Vec6 CameraPose::as_vector() const {
  Vec6 v;
  v << rotation.alpha, rotation.beta, rotation.gamma, translation;
  return v;
}

CameraPose CameraPose::from_vector(const Vec6& v) {
  return {{v[0], v[1], v[2]}, v.tail<3>()};
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw Error(ErrorKind::kInvalidArgument, "image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw Error(ErrorKind::kInvalidArgument, "principal point outside the image");
  }
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << fx, 0, cx,
       0, fy, cy,
       0, 0, 1;
  return k;
}

ProjectionResult project(const Vec3& point, const CameraPose& pose,
                         const CameraIntrinsics& intrinsics) {
  if (!point.allFinite()) {
    throw Error(ErrorKind::kInvalidArgument, "point must be finite");
  }
  const Vec3 pc = pose.rotation_matrix() * point + pose.translation;
  if (std::abs(pc.z()) < kDepthEpsilon) {
    throw Error(ErrorKind::kDegenerate, "point lies on the camera plane");
  }
  ProjectionResult out;
  out.pixel = {intrinsics.fx * pc.x() / pc.z() + intrinsics.cx,
               intrinsics.fy * pc.y() / pc.z() + intrinsics.cy};
  out.depth = pc.z();
  return out;
}

Vec3 back_project(const Vec2& pixel, double depth, const CameraPose& pose,
                  const CameraIntrinsics& intrinsics) {
  const Vec3 pc{(pixel.x() - intrinsics.cx) / intrinsics.fx * depth,
                (pixel.y() - intrinsics.cy) / intrinsics.fy * depth, depth};
  return pose.rotation_matrix().transpose() * (pc - pose.translation);
}

Mat26 projection_jacobian(const Vec3& point, const CameraPose& pose,
                          const CameraIntrinsics& intrinsics) {
  const auto dr = rotation_jacobians(pose.rotation);
  const Vec3 pc = pose.rotation_matrix() * point + pose.translation;
  if (pc.z() <= kDepthEpsilon) {
    throw Error(ErrorKind::kDegenerate, "point behind the camera");
  }
  const double inv_z = 1.0 / pc.z();
  Eigen::Matrix<double, 2, 3> d_pixel_d_pc;
  d_pixel_d_pc << intrinsics.fx * inv_z, 0, -intrinsics.fx * pc.x() * inv_z * inv_z,
                  0, intrinsics.fy * inv_z, -intrinsics.fy * pc.y() * inv_z * inv_z;
  Mat26 j;
  for (int k = 0; k < 3; ++k) {
    j.col(k) = d_pixel_d_pc * (dr[k] * point);
  }
  j.rightCols<3>() = d_pixel_d_pc;
  return j;
}

CameraPose pose_from_rt(const Mat3& rotation, const Vec3& translation) {
  return {rotation_to_euler(rotation), translation};
}

CameraPose apply_increment(const CameraPose& pose, const Vec6& delta, double scale) {
  return CameraPose::from_vector(pose.as_vector() + scale * delta);
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  const Mat3 rel = a.transpose() * b;
  const double c = std::clamp((rel.trace() - 1.0) * 0.5, -1.0, 1.0);
  // acos loses precision near zero; use the skew part there.
  const Vec3 axis{rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1)};
  return std::atan2(0.5 * axis.norm(), c);
}

}  // namespace geometry
}  // namespace jogs
