#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "jogs/geometry.hpp"
#include "jogs/image.hpp"
#include "jogs/lk3d.hpp"
#include "jogs/sfm.hpp"
#include "jogs/splat.hpp"

namespace jogs::train {

struct TrainConfig {
  int total_iterations = 3000;  // T_G
  int pose_interval = 100;      // k
  int pose_cutoff = -1;         // m; -1 means T_G / 4, 0 disables pose refinement
  double lambda = 0.2;          // weight of the D-SSIM term

  double lr_position = 1.6e-4;  // times the camera extent, decayed exponentially
  double lr_position_final = 1.6e-6;
  double lr_color = 0.0025;
  double lr_opacity = 0.05;
  double lr_scale = 0.005;
  double lr_rotation = 0.001;

  int densify_interval = 100;
  int densify_from = 500;
  int densify_until = -1;  // -1 means T_G / 2
  double densify_grad_threshold = 0.0002;  // normalized-device units, as in 3DGS
  double percent_dense = 0.01;
  double min_opacity = 0.005;
  double max_world_scale = 0.1;  // fraction of the camera extent
  int max_gaussians = 20000;

  lk3d::LkConfig lk;
  int threads = 1;
  std::uint64_t random_seed = 0;

  int resolved_pose_cutoff() const { return pose_cutoff < 0 ? total_iterations / 4 : pose_cutoff; }
  int resolved_densify_until() const { return densify_until < 0 ? total_iterations / 2 : densify_until; }
  /// Enforces 1 <= k <= m <= T_G (m = 0 is accepted and disables the pose phase).
  void validate() const;
};

enum class Phase { kGaussian, kPose };

struct PhaseRecord {
  int iteration = 0;
  Phase phase = Phase::kGaussian;
  int view = -1;  // trained view for Gaussian steps
};

using AdamVector = Eigen::Matrix<double, 14, 1>;

struct AdamState {
  std::vector<AdamVector> first;
  std::vector<AdamVector> second;
  long step = 0;

  void resize(std::size_t n);
};

struct TrainState {
  splat::GaussianCloud cloud;
  std::vector<CameraPose> poses;
  int iteration = 0;
  std::vector<std::pair<int, double>> loss_history;
  std::vector<PhaseRecord> phase_log;
  std::vector<std::pair<int, std::vector<CameraPose>>> pose_history;  // after each pose phase
  std::vector<std::string> warnings;
  AdamState adam;
  splat::GradientStats grad_stats;
  double camera_extent = 1.0;
};

/// (1 - lambda) * L1 + lambda * (1 - SSIM) / 2.
double photometric_loss(const ImageBuffer& rendered, const ImageBuffer& target, double lambda);

/// Same, also writing d loss / d rendered.
double photometric_loss(const ImageBuffer& rendered, const ImageBuffer& target, double lambda,
                        ImageBuffer* grad);

/// One Adam update of every Gaussian parameter from a single view. Poses are
/// left untouched. Returns the loss before the update.
double gaussian_step(TrainState& state, int view, const TrainConfig& config,
                     const std::vector<ImageBuffer>& images, const CameraIntrinsics& intrinsics);

/// Radius-like extent of the camera centers (1.1 x max distance to their mean).
double camera_extent(const std::vector<CameraPose>& poses);

TrainState make_state(splat::GaussianCloud cloud, std::vector<CameraPose> poses);

using IterationObserver = std::function<void(int iteration, Phase phase, const TrainState& state)>;

/// Alternating optimization: at iteration t, refine all poses with LK3D when
/// t mod k == 0 and t <= m, otherwise take one Gaussian step.
TrainState train(const std::vector<ImageBuffer>& images, const CameraIntrinsics& intrinsics,
                 splat::GaussianCloud init_cloud, std::vector<CameraPose> init_poses,
                 const TrainConfig& config, const IterationObserver& observer = {});

/// Convenience overload seeding the cloud from a reconstruction that registered every image.
TrainState train(const std::vector<ImageBuffer>& images, const CameraIntrinsics& intrinsics,
                 const sfm::SfmReconstruction& init, const TrainConfig& config,
                 const IterationObserver& observer = {});

}  // namespace jogs::train
