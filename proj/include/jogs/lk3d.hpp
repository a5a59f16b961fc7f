#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jogs/geometry.hpp"
#include "jogs/image.hpp"
#include "jogs/splat.hpp"

namespace jogs::lk3d {

using Mat36 = Eigen::Matrix<double, 3, 6>;

/// Per-channel horizontal and vertical derivatives of an image.
struct ImageGradient {
  ImageBuffer du;
  ImageBuffer dv;
};

/// Central differences in the interior, one-sided differences on the border.
ImageGradient image_gradient(const ImageBuffer& image);

/// Bilinear sample at a continuous pixel position; nullopt outside [0, W-1] x [0, H-1].
std::optional<Rgb> sample_bilinear(const ImageBuffer& image, const Vec2& pixel);

struct LkConfig {
  int max_iterations = 20;           // T_L
  double step_scale = 1.0;           // eta, applied to all six components
  double damping = 0.0;              // initial Levenberg damping on diag(H)
  double convergence_tol = 1e-6;     // on |delta P|
  double visibility_threshold = 0.05;

  void validate() const;
};

struct LkResidual {
  int gaussian_index = 0;
  Vec3 residual = Vec3::Zero();  // c(g) - I(W(x(g); P)), per channel
  Mat36 steepest = Mat36::Zero();  // rows: [dI_c/du, dI_c/dv] * dW/dP
  double weight = 0.0;
};

struct ResidualSet {
  std::vector<LkResidual> residuals;
  int active = 0;  // residuals with nonzero weight

  bool all_excluded() const { return active == 0; }
};

/// Residuals for every Gaussian; excluded ones (behind camera, out of view,
/// occluded per `visibility`) carry weight 0.
ResidualSet build_residuals(const splat::GaussianCloud& cloud, const CameraPose& pose,
                            const CameraIntrinsics& intrinsics, const ImageBuffer& image,
                            const ImageGradient& gradients, const LkConfig& config,
                            std::span<const double> visibility);

/// Same, with visibility taken from a fresh forward render at `pose`.
ResidualSet build_residuals(const splat::GaussianCloud& cloud, const CameraPose& pose,
                            const CameraIntrinsics& intrinsics, const ImageBuffer& image,
                            const ImageGradient& gradients, const LkConfig& config);

struct NormalEquations {
  Mat6 hessian = Mat6::Zero();
  Vec6 rhs = Vec6::Zero();
};

NormalEquations assemble_normal_equations(std::span<const LkResidual> residuals);

/// Solves (H + damping * diag(H)) dP = b, escalating damping x10 up to four times.
Vec6 solve_increment(const Mat6& hessian, const Vec6& rhs, double damping);

struct LkDiagnostics {
  std::vector<double> cost_trace;  // cost at start, then after each accepted step
  int iterations = 0;
  int accepted_steps = 0;
  int rejected_steps = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

struct LkResult {
  CameraPose pose;
  LkDiagnostics diagnostics;
};

/// Summed squared residual over the gated Gaussians at `pose`.
double photometric_cost(const splat::GaussianCloud& cloud, const CameraPose& pose,
                        const CameraIntrinsics& intrinsics, const ImageBuffer& image,
                        std::span<const double> visibility, double visibility_threshold);

LkResult refine_pose(const splat::GaussianCloud& cloud, const CameraPose& pose,
                     const CameraIntrinsics& intrinsics, const ImageBuffer& image,
                     const LkConfig& config);

struct MultiPoseResult {
  std::vector<CameraPose> poses;
  std::vector<LkDiagnostics> diagnostics;
  std::vector<std::string> warnings;  // prefixed with the pose index
};

/// Refines each pose independently; `threads` > 1 runs cameras concurrently.
MultiPoseResult refine_all_poses(const splat::GaussianCloud& cloud,
                                 std::span<const CameraPose> poses,
                                 const CameraIntrinsics& intrinsics,
                                 std::span<const ImageBuffer> images, const LkConfig& config,
                                 int threads = 1);

}  // namespace jogs::lk3d
