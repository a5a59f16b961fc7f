#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "jogs/geometry.hpp"
#include "jogs/image.hpp"
#include "jogs/metrics.hpp"
#include "jogs/sfm.hpp"
#include "jogs/splat.hpp"

namespace jogs::synthetic {

/// Parameters of a procedurally generated verification scene. Every random
/// draw is derived from `seed`.
struct SyntheticSceneSpec {
  int gaussian_count = 300;
  int width = 64;
  int height = 64;
  int view_count = 8;
  double fov_deg = 60.0;
  double orbit_radius = 4.0;     // camera distance from the cloud centroid
  double orbit_arc_deg = 60.0;   // total azimuth span of the camera orbit
  double elevation_deg = 10.0;
  double scene_radius = 1.5;     // half-size of the sampled cloud
  double texture_frequency = 1.5;  // texture richness: cycles per scene radius
  double gaussian_scale = 1.0;   // multiplier on the density-derived footprint
  double opacity = 0.95;
  double noise_level = 0.0;      // std-dev of additive image noise
  // "volume": centers uniform in a ball of scene_radius.
  // "surface": flattened splats on a jittered grid over a square wall of
  // half-size scene_radius facing the orbit, displaced by a smooth relief.
  std::string layout = "surface";
  double relief = 0.3;  // surface height amplitude, fraction of scene_radius
  double color_jitter = 0.3;  // std-dev of an independent per-Gaussian color offset
  std::uint64_t seed = 7;

  void validate() const;
  /// Parses `key = value` lines; unknown keys are rejected.
  static SyntheticSceneSpec from_map(const std::map<std::string, std::string>& kv);
};

struct SyntheticScene {
  splat::GaussianCloud cloud;
  metrics::Trajectory trajectory;  // ground-truth world-to-camera poses
  std::vector<ImageBuffer> images;
  CameraIntrinsics intrinsics;
  double extent = 0.0;  // diameter of the Gaussian centers' bounding sphere
};

CameraIntrinsics intrinsics_for(int width, int height, double fov_deg);

/// Pose of a camera at `center` looking at `target` with world -y as image up.
CameraPose look_at(const Vec3& center, const Vec3& target);

SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec);

/// Ideal correspondences: every Gaussian center projecting inside an image
/// becomes a keypoint there, and every image pair is matched on shared
/// Gaussians with all matches flagged as inliers.
sfm::FeatureGraph exact_feature_graph(const splat::GaussianCloud& cloud,
                                      const std::vector<CameraPose>& poses,
                                      const CameraIntrinsics& intrinsics);

}  // namespace jogs::synthetic
