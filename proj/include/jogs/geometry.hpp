#pragma once

#include <array>

#include <Eigen/Core>

namespace jogs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat26 = Eigen::Matrix<double, 2, 6>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

namespace geometry {

inline constexpr double kDepthEpsilon = 1e-8;

/// Rotation angles in radians. The rotation is R = Rz(gamma) * Ry(beta) * Rx(alpha).
struct EulerAngles {
  double alpha = 0.0;  // pitch, about x
  double beta = 0.0;   // yaw, about y
  double gamma = 0.0;  // roll, about z

  bool operator==(const EulerAngles&) const = default;
};

/// World-to-camera extrinsics: x_cam = R * x_world + translation.
struct CameraPose {
  EulerAngles rotation;
  Vec3 translation = Vec3::Zero();

  Mat3 rotation_matrix() const;
  /// Camera center in world coordinates, -R^T s.
  Vec3 center() const;
  /// Parameter vector in increment order (alpha, beta, gamma, sx, sy, sz).
  Vec6 as_vector() const;
  static CameraPose from_vector(const Vec6& v);

  bool operator==(const CameraPose& other) const {
    return rotation == other.rotation && translation == other.translation;
  }
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws Error(kInvalidArgument) unless fx, fy > 0 and the principal point lies in the image.
  void validate() const;
  Mat3 matrix() const;
};

struct ProjectionResult {
  Vec2 pixel = Vec2::Zero();
  double depth = 0.0;
};

Mat3 rotation_x(double angle);
Mat3 rotation_y(double angle);
Mat3 rotation_z(double angle);

Mat3 euler_to_rotation(const EulerAngles& angles);

/// dR/dalpha, dR/dbeta, dR/dgamma.
std::array<Mat3, 3> rotation_jacobians(const EulerAngles& angles);

/// Inverse of euler_to_rotation. At gimbal lock (|cos beta| ~ 0) gamma is set to zero.
EulerAngles rotation_to_euler(const Mat3& rotation);

/// Wraps every angle into (-pi, pi].
EulerAngles canonicalize(const EulerAngles& angles);
double wrap_angle(double angle);

ProjectionResult project(const Vec3& point, const CameraPose& pose, const CameraIntrinsics& intrinsics);

/// Inverse of project for a known camera-frame depth.
Vec3 back_project(const Vec2& pixel, double depth, const CameraPose& pose,
                  const CameraIntrinsics& intrinsics);

/// d pixel / d pose with columns (alpha, beta, gamma, sx, sy, sz).
Mat26 projection_jacobian(const Vec3& point, const CameraPose& pose,
                          const CameraIntrinsics& intrinsics);

/// Pose built from a rotation matrix (converted to Euler angles) and translation.
CameraPose pose_from_rt(const Mat3& rotation, const Vec3& translation);

/// pose + scale * delta in the (alpha, beta, gamma, sx, sy, sz) parameterization.
CameraPose apply_increment(const CameraPose& pose, const Vec6& delta, double scale = 1.0);

/// Geodesic angle between two rotation matrices, radians.
double rotation_angle_between(const Mat3& a, const Mat3& b);

}  // namespace geometry

using geometry::CameraIntrinsics;
using geometry::CameraPose;
using geometry::EulerAngles;

}  // namespace jogs
