#pragma once

#include <optional>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "jogs/geometry.hpp"
#include "jogs/image.hpp"

namespace jogs::splat {

using Mat2 = Eigen::Matrix2d;
using Vec4 = Eigen::Vector4d;

/// 2D covariance dilation (pixels^2) applied after EWA projection.
inline constexpr double kCovarianceDilation = 0.3;
/// Mahalanobis cutoff for the 2D footprint.
inline constexpr double kTruncationSigma = 3.0;
/// Gaussians closer than this (camera-frame z) are culled.
inline constexpr double kNearPlane = 0.01;

struct GaussianPrimitive {
  Vec3 position = Vec3::Zero();
  Vec3 log_scale = Vec3::Constant(-2.0);
  Vec4 rotation{1.0, 0.0, 0.0, 0.0};  // unit quaternion (w, x, y, z)
  double opacity_logit = 0.0;
  Vec3 color = Vec3::Constant(0.5);

  double opacity() const;
  /// R_q diag(exp(2 log_scale)) R_q^T, with the quaternion normalized first.
  Mat3 covariance() const;

  bool operator==(const GaussianPrimitive&) const = default;
};

struct GaussianCloud {
  std::vector<GaussianPrimitive> gaussians;

  std::size_t size() const { return gaussians.size(); }
  bool empty() const { return gaussians.empty(); }
  bool operator==(const GaussianCloud&) const = default;
};

Mat3 quaternion_to_rotation(const Vec4& q);
double sigmoid(double x);
double logit(double p);

struct ProjectedGaussian {
  Vec2 mean = Vec2::Zero();
  Mat2 cov = Mat2::Zero();
  double depth = 0.0;
  bool culled = true;
};

ProjectedGaussian project_gaussian(const GaussianPrimitive& g, const CameraPose& pose,
                                   const CameraIntrinsics& intrinsics);

struct RenderOutput {
  ImageBuffer image;
  std::vector<double> per_pixel_alpha;  // H*W, row-major
  std::vector<double> visibility;       // per Gaussian, max blend weight
  std::vector<double> radius;           // per Gaussian, 3-sigma screen radius (0 if culled)
};

RenderOutput render(const GaussianCloud& cloud, const CameraPose& pose,
                    const CameraIntrinsics& intrinsics);

struct GaussianGradient {
  Vec3 position = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();
  double opacity_logit = 0.0;
  Vec3 color = Vec3::Zero();
  Vec2 mean2d = Vec2::Zero();  // screen-space, used by densification statistics
};

/// Reverse-mode gradients of a scalar loss given d loss / d image. Recomputes
/// the forward state internally so it can be called standalone.
std::vector<GaussianGradient> render_backward(const GaussianCloud& cloud, const CameraPose& pose,
                                              const CameraIntrinsics& intrinsics,
                                              const ImageBuffer& d_image);

/// Per-Gaussian statistics accumulated between densification passes.
struct GradientStats {
  std::vector<double> mean2d_norm_sum;
  std::vector<Vec3> position_grad_sum;
  std::vector<int> count;
  std::vector<double> max_radius;

  void reset(std::size_t n);
  void accumulate(const std::vector<GaussianGradient>& grads, const std::vector<double>& radius);
};

struct DensifyThresholds {
  double grad_threshold = 0.0002;  // mean screen-space gradient norm
  double percent_dense = 0.01;     // of scene extent; clone below, split above
  double scene_extent = 1.0;
  double min_opacity = 0.005;
  double max_screen_radius = 0.0;  // pixels; 0 disables
  double max_world_scale = 0.0;    // fraction of extent; 0 disables
  double split_scale_factor = 1.6;
};

/// Clones small Gaussians and splits large ones whose mean screen-space
/// gradient exceeds the threshold, then prunes. When `origin` is given it
/// receives, per output Gaussian, the index of the unchanged input it copies
/// or -1 for a newly created clone or split child.
GaussianCloud densify_and_prune(const GaussianCloud& cloud, const GradientStats& stats,
                                const DensifyThresholds& thresholds, std::mt19937_64& rng,
                                std::vector<int>* origin = nullptr);

}  // namespace jogs::splat
