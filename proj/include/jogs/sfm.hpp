#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "jogs/geometry.hpp"
#include "jogs/image.hpp"
#include "jogs/splat.hpp"

namespace jogs::sfm {

inline constexpr int kDescriptorSize = 128;
using Descriptor = Eigen::Matrix<double, kDescriptorSize, 1>;

struct Keypoint {
  Vec2 position = Vec2::Zero();  // pixels, centers at integer coordinates
  double scale = 0.0;            // blob sigma in pixels
  double orientation = 0.0;      // radians
  Descriptor descriptor = Descriptor::Zero();  // unit norm, non-negative
};

struct FeatureConfig {
  int scales_per_octave = 3;
  double base_sigma = 1.6;
  double contrast_threshold = 0.04;  // on |DoG| * scales_per_octave
  double edge_ratio = 10.0;
  bool upsample = true;  // double the image first, which helps small inputs
  int max_keypoints = 4000;
};

/// Difference-of-Gaussians keypoints with gradient-histogram descriptors.
std::vector<Keypoint> detect_features(const ImageBuffer& image, const FeatureConfig& config = {});

struct MatchPair {
  int image_a = 0;
  int image_b = 0;
  std::vector<std::pair<int, int>> correspondences;  // (keypoint in a, keypoint in b)
  std::vector<bool> inlier_mask;

  int inlier_count() const;
};

/// Mutual nearest neighbours that also pass the ratio test.
MatchPair match_features(const std::vector<Keypoint>& a, const std::vector<Keypoint>& b,
                         double ratio = 0.8);

struct RansacOptions {
  int max_iterations = 2048;
  double threshold_px = 1.5;
  double confidence = 0.999;
  std::uint64_t seed = 0;
};

struct EssentialResult {
  Mat3 essential = Mat3::Zero();
  std::vector<bool> inliers;
  int inlier_count = 0;
};

/// Sampson distance of a correspondence under E, converted to pixels.
double sampson_distance_px(const Mat3& essential, const Vec2& pixel_a, const Vec2& pixel_b,
                           const CameraIntrinsics& intrinsics);

/// Least-squares eight-point estimate in normalized coordinates, projected onto
/// the essential manifold. Throws kDegenerate when the system has a null space
/// of dimension above one.
Mat3 essential_eight_point(const std::vector<Vec2>& normalized_a,
                           const std::vector<Vec2>& normalized_b);

EssentialResult estimate_essential_ransac(const std::vector<Vec2>& pixels_a,
                                          const std::vector<Vec2>& pixels_b,
                                          const CameraIntrinsics& intrinsics,
                                          const RansacOptions& options = {});

/// Convenience overload that also writes the inlier mask into `matches`.
EssentialResult estimate_essential_ransac(MatchPair& matches, const std::vector<Keypoint>& a,
                                          const std::vector<Keypoint>& b,
                                          const CameraIntrinsics& intrinsics,
                                          const RansacOptions& options = {});

/// Pose of camera b relative to camera a (x_b = R x_a + t) with |t| = 1,
/// chosen among the four decompositions by cheirality over the masked points.
CameraPose recover_pose(const Mat3& essential, const std::vector<Vec2>& pixels_a,
                        const std::vector<Vec2>& pixels_b, const CameraIntrinsics& intrinsics,
                        const std::vector<bool>& mask = {});

struct Observation {
  CameraPose pose;
  Vec2 pixel = Vec2::Zero();
};

inline constexpr double kMinParallaxDeg = 1.0;

/// DLT plus one Gauss-Newton step on reprojection error.
Vec3 triangulate(const std::vector<Observation>& observations, const CameraIntrinsics& intrinsics);

/// Largest angle (degrees) between viewing rays of `point` over all view pairs.
double parallax_deg(const Vec3& point, const std::vector<Observation>& observations);

/// Up to four camera poses consistent with three 2D-3D correspondences.
std::vector<CameraPose> solve_p3p(const std::array<Vec3, 3>& points,
                                  const std::array<Vec2, 3>& pixels,
                                  const CameraIntrinsics& intrinsics);

struct PnpResult {
  CameraPose pose;
  std::vector<bool> inliers;
  int inlier_count = 0;
};

/// Minimizes reprojection error over `pose` with Levenberg-Marquardt.
CameraPose refine_pose_reprojection(const CameraPose& initial, const std::vector<Vec3>& points,
                                    const std::vector<Vec2>& pixels,
                                    const CameraIntrinsics& intrinsics,
                                    const std::vector<bool>& mask = {}, int max_iterations = 20);

PnpResult solve_pnp_ransac(const std::vector<Vec3>& points, const std::vector<Vec2>& pixels,
                           const CameraIntrinsics& intrinsics, const RansacOptions& options = {});

struct TrackObservation {
  int image = 0;
  int keypoint = 0;
  Vec2 pixel = Vec2::Zero();

  bool operator==(const TrackObservation&) const = default;
};

struct SfmReconstruction {
  std::map<int, CameraPose> poses;   // registered image index -> world-to-camera pose
  std::vector<Vec3> points;
  std::vector<Vec3> colors;          // per point, RGB in [0, 1]
  std::vector<std::vector<TrackObservation>> tracks;  // per point
  int reference_image = 0;
  std::vector<int> unregistered;

  /// Mean and max pixel reprojection error over registered observations.
  std::pair<double, double> reprojection_error(const CameraIntrinsics& intrinsics) const;
};

struct BundleAdjustOptions {
  int max_iterations = 50;
  double huber_px = 2.0;
  double initial_damping = 1e-4;
  double function_tolerance = 1e-12;
  /// Image whose pose is frozen; -1 uses the reconstruction's reference.
  int reference_image = -1;
  /// Image whose translation norm is frozen; -1 picks the lowest other index.
  int scale_image = -1;
};

struct BundleAdjustReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  int accepted_steps = 0;
  std::vector<double> cost_trace;  // robust cost after each accepted step
};

/// Huber-robust LM over all poses except the reference and all points.
SfmReconstruction bundle_adjust(const SfmReconstruction& recon,
                                const CameraIntrinsics& intrinsics,
                                const BundleAdjustOptions& options = {},
                                BundleAdjustReport* report = nullptr);

/// Robust cost used by bundle_adjust (sum of Huber penalties on pixel residual norms).
double robust_cost(const SfmReconstruction& recon, const CameraIntrinsics& intrinsics,
                   double huber_px);

struct SfmConfig {
  FeatureConfig features;
  double match_ratio = 0.8;
  RansacOptions ransac;
  int min_pair_inliers = 16;
  int min_pnp_inliers = 8;
  double pnp_threshold_px = 3.0;
  double max_reprojection_px = 4.0;
  int bundle_iterations = 50;
  double huber_px = 2.0;
  int threads = 1;
};

/// Keypoint positions of every image plus pairwise matches; the input of the
/// geometric stage, either produced by detection or injected directly.
struct FeatureGraph {
  std::vector<std::vector<Vec2>> keypoints;  // per image
  std::vector<MatchPair> matches;
};

/// Incremental reconstruction from a feature graph. `images` is optional and
/// only used for point colors.
SfmReconstruction reconstruct(const FeatureGraph& graph, const CameraIntrinsics& intrinsics,
                              const SfmConfig& config = {},
                              const std::vector<ImageBuffer>* images = nullptr);

/// Detect, match all pairs, then reconstruct.
SfmReconstruction run_initialization(const std::vector<ImageBuffer>& images,
                                     const CameraIntrinsics& intrinsics,
                                     const SfmConfig& config = {});

/// Seed Gaussians: isotropic scale from the mean distance to the 3 nearest
/// neighbours, opacity 0.1, color from the observing pixels.
splat::GaussianCloud seed_cloud(const SfmReconstruction& recon);

}  // namespace jogs::sfm
