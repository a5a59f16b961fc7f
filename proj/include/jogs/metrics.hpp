#pragma once

#include <limits>
#include <string>
#include <vector>

#include "jogs/geometry.hpp"
#include "jogs/image.hpp"

namespace jogs::metrics {

/// Returned by compute_psnr for identical images.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

double compute_psnr(const ImageBuffer& a, const ImageBuffer& b);

/// Mean SSIM over all fully-contained 11x11 Gaussian windows, averaged over channels.
double compute_ssim(const ImageBuffer& a, const ImageBuffer& b);

/// SSIM together with d SSIM / d a.
double compute_ssim(const ImageBuffer& a, const ImageBuffer& b, ImageBuffer* grad_a);

struct Trajectory {
  std::vector<CameraPose> poses;
  std::vector<std::string> ids;

  std::size_t size() const { return poses.size(); }
  /// Throws on duplicate ids or id/pose count mismatch (ids may be empty).
  void validate() const;
};

struct AlignmentResult {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

/// Similarity minimizing sum |s R src_i + t - dst_i|^2.
AlignmentResult umeyama_points(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);

/// Aligns camera centers of `estimated` onto `reference`.
AlignmentResult umeyama_align(const Trajectory& estimated, const Trajectory& reference);

/// Applies a similarity to every pose of a trajectory (cameras move with the world).
Trajectory transform_trajectory(const Trajectory& t, const AlignmentResult& sim);

/// RMS camera-center error after similarity alignment.
double compute_ate(const Trajectory& estimated, const Trajectory& reference);

struct RpeResult {
  double translation = 0.0;  // RMS, reference units
  double rotation_deg = 0.0;  // RMS, degrees
};

/// Relative pose error over camera-to-world motions with index step `delta`.
RpeResult compute_rpe(const Trajectory& estimated, const Trajectory& reference, int delta = 1);

}  // namespace jogs::metrics
