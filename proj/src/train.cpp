#include "jogs/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "jogs/error.hpp"
#include "jogs/metrics.hpp"

namespace jogs::train {
namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-15;

AdamVector pack(const splat::GaussianGradient& g) {
  AdamVector v;
  v << g.position, g.log_scale, g.rotation, g.opacity_logit, g.color;
  return v;
}

AdamVector pack(const splat::GaussianPrimitive& g) {
  AdamVector v;
  v << g.position, g.log_scale, g.rotation, g.opacity_logit, g.color;
  return v;
}

void unpack(const AdamVector& v, splat::GaussianPrimitive& g) {
  g.position = v.segment<3>(0);
  g.log_scale = v.segment<3>(3);
  g.rotation = v.segment<4>(6);
  g.opacity_logit = v[10];
  g.color = v.segment<3>(11);
}

double position_lr(const TrainConfig& c, int iteration, double extent) {
  const double f = c.total_iterations > 0 ? std::clamp(static_cast<double>(iteration) / c.total_iterations, 0.0, 1.0) : 0.0;
  if (c.lr_position <= 0.0) return 0.0;
  const double final_lr = std::max(c.lr_position_final, 1e-300);
  return extent * std::exp((1.0 - f) * std::log(c.lr_position) + f * std::log(final_lr));
}

}  // namespace

void TrainConfig::validate() const {
  if (total_iterations < 1) throw Error(ErrorKind::kConfig, "total_iterations must be >= 1");
  const int m = resolved_pose_cutoff();
  if (m != 0 && !(1 <= pose_interval && pose_interval <= m && m <= total_iterations)) {
    throw Error(ErrorKind::kConfig, "schedule must satisfy 1 <= k <= m <= T_G (k=" +
                                        std::to_string(pose_interval) + ", m=" + std::to_string(m) +
                                        ", T_G=" + std::to_string(total_iterations) + ")");
  }
  if (m == 0 && pose_interval < 1) throw Error(ErrorKind::kConfig, "pose_interval must be >= 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorKind::kConfig, "lambda must lie in [0, 1]");
  for (double lr : {lr_position, lr_position_final, lr_color, lr_opacity, lr_scale, lr_rotation}) {
    if (!(lr >= 0.0)) throw Error(ErrorKind::kConfig, "learning rates must be >= 0");
  }
  if (densify_interval < 1) throw Error(ErrorKind::kConfig, "densify_interval must be >= 1");
  if (max_gaussians < 1) throw Error(ErrorKind::kConfig, "max_gaussians must be >= 1");
  if (threads < 1) throw Error(ErrorKind::kConfig, "threads must be >= 1");
  lk.validate();
}

void AdamState::resize(std::size_t n) {
  first.assign(n, AdamVector::Zero());
  second.assign(n, AdamVector::Zero());
}

double photometric_loss(const ImageBuffer& rendered, const ImageBuffer& target, double lambda) {
  return photometric_loss(rendered, target, lambda, nullptr);
}

double photometric_loss(const ImageBuffer& rendered, const ImageBuffer& target, double lambda,
                        ImageBuffer* grad) {
  if (!rendered.same_shape(target) || rendered.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "loss needs two non-empty images of equal shape");
  }
  const std::size_t n = rendered.size();
  double l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) l1 += std::abs(rendered.data()[i] - target.data()[i]);
  l1 /= static_cast<double>(n);
  double ssim = 1.0;
  ImageBuffer d_ssim;
  if (lambda > 0.0) ssim = metrics::compute_ssim(rendered, target, grad ? &d_ssim : nullptr);
  if (grad) {
    *grad = ImageBuffer(rendered.width(), rendered.height(), 0.0);
    auto& g = grad->data();
    for (std::size_t i = 0; i < n; ++i) {
      const double d = rendered.data()[i] - target.data()[i];
      const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      g[i] = (1.0 - lambda) * sign / static_cast<double>(n);
      if (lambda > 0.0) g[i] -= 0.5 * lambda * d_ssim.data()[i];
    }
  }
  return (1.0 - lambda) * l1 + lambda * 0.5 * (1.0 - ssim);
}

double camera_extent(const std::vector<CameraPose>& poses) {
  if (poses.empty()) return 1.0;
  Vec3 mean = Vec3::Zero();
  for (const auto& p : poses) mean += p.center();
  mean /= static_cast<double>(poses.size());
  double radius = 0.0;
  for (const auto& p : poses) radius = std::max(radius, (p.center() - mean).norm());
  return radius > 1e-9 ? 1.1 * radius : 1.0;
}

TrainState make_state(splat::GaussianCloud cloud, std::vector<CameraPose> poses) {
  TrainState s;
  s.cloud = std::move(cloud);
  s.poses = std::move(poses);
  s.adam.resize(s.cloud.size());
  s.grad_stats.reset(s.cloud.size());
  s.camera_extent = camera_extent(s.poses);
  return s;
}

double gaussian_step(TrainState& state, int view, const TrainConfig& config,
                     const std::vector<ImageBuffer>& images, const CameraIntrinsics& k) {
  if (view < 0 || view >= static_cast<int>(images.size()) || view >= static_cast<int>(state.poses.size())) {
    throw Error(ErrorKind::kInvalidArgument, "view index out of range");
  }
  const CameraPose& pose = state.poses[view];
  const auto rendered = splat::render(state.cloud, pose, k);
  ImageBuffer d_image;
  const double loss = photometric_loss(rendered.image, images[view], config.lambda, &d_image);
  if (!std::isfinite(loss)) {
    throw Error(ErrorKind::kDivergence, "non-finite loss on view " + std::to_string(view));
  }
  state.loss_history.emplace_back(state.iteration + 1, loss);
  if (state.cloud.empty()) return loss;

  auto grads = splat::render_backward(state.cloud, pose, k, d_image);
  // Densification statistics use normalized-device units like the reference 3DGS.
  for (auto& g : grads) g.mean2d = g.mean2d.cwiseProduct(Vec2{0.5 * k.width, 0.5 * k.height});
  state.grad_stats.accumulate(grads, rendered.radius);

  AdamVector lr;
  const double lp = position_lr(config, state.iteration + 1, state.camera_extent);
  lr << lp, lp, lp, config.lr_scale, config.lr_scale, config.lr_scale, config.lr_rotation,
      config.lr_rotation, config.lr_rotation, config.lr_rotation, config.lr_opacity, config.lr_color,
      config.lr_color, config.lr_color;

  AdamState& adam = state.adam;
  if (adam.first.size() != state.cloud.size()) adam.resize(state.cloud.size());
  ++adam.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam.step));
  for (std::size_t i = 0; i < state.cloud.size(); ++i) {
    const AdamVector g = pack(grads[i]);
    if (!g.allFinite()) {
      throw Error(ErrorKind::kDivergence, "non-finite gradient for Gaussian " + std::to_string(i));
    }
    AdamVector& m = adam.first[i];
    AdamVector& v = adam.second[i];
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
    const AdamVector step =
        lr.cwiseProduct((m / c1).cwiseQuotient(((v / c2).cwiseSqrt().array() + kAdamEpsilon).matrix()));
    splat::GaussianPrimitive& gp = state.cloud.gaussians[i];
    unpack(pack(gp) - step, gp);
    if (config.lr_rotation > 0.0) {
      const double norm = gp.rotation.norm();
      if (norm > 0.0) gp.rotation /= norm;
    }
    gp.color = gp.color.cwiseMax(0.0).cwiseMin(1.0);
  }
  return loss;
}

TrainState train(const std::vector<ImageBuffer>& images, const CameraIntrinsics& k,
                 splat::GaussianCloud init_cloud, std::vector<CameraPose> init_poses,
                 const TrainConfig& config, const IterationObserver& observer) {
  config.validate();
  k.validate();
  if (images.empty() || images.size() != init_poses.size()) {
    throw Error(ErrorKind::kInvalidArgument, "need one pose per training image");
  }
  for (const auto& img : images) {
    if (img.width() != k.width || img.height() != k.height) {
      throw Error(ErrorKind::kInvalidArgument, "image size does not match intrinsics");
    }
  }
  TrainState state = make_state(std::move(init_cloud), std::move(init_poses));
  state.pose_history.emplace_back(0, state.poses);

  const int k_interval = config.pose_interval;
  const int m = config.resolved_pose_cutoff();
  const int densify_until = config.resolved_densify_until();
  std::mt19937_64 rng(config.random_seed);
  std::vector<int> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  bool densify_pending = false;

  for (int t = 1; t <= config.total_iterations; ++t) {
    try {
      Phase phase;
      if (m > 0 && t % k_interval == 0 && t <= m) {
        phase = Phase::kPose;
        auto result = lk3d::refine_all_poses(state.cloud, state.poses, k, images, config.lk, config.threads);
        state.poses = std::move(result.poses);
        for (auto& w : result.warnings) state.warnings.push_back("iteration " + std::to_string(t) + ", " + w);
        state.phase_log.push_back({t, phase, -1});
        state.pose_history.emplace_back(t, state.poses);
      } else {
        phase = Phase::kGaussian;
        if (cursor >= order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const int view = order[cursor++];
        gaussian_step(state, view, config, images, k);
        state.phase_log.push_back({t, phase, view});

        if (t % config.densify_interval == 0 && t >= config.densify_from && t <= densify_until) {
          densify_pending = true;
        }
        if (densify_pending) {
          densify_pending = false;
          if (static_cast<int>(state.cloud.size()) < config.max_gaussians) {
            splat::DensifyThresholds th;
            th.grad_threshold = config.densify_grad_threshold;
            th.percent_dense = config.percent_dense;
            th.scene_extent = state.camera_extent;
            th.min_opacity = config.min_opacity;
            th.max_world_scale = config.max_world_scale;
            std::vector<int> origin;
            state.cloud = splat::densify_and_prune(state.cloud, state.grad_stats, th, rng, &origin);
            AdamState remapped;
            remapped.step = state.adam.step;
            remapped.resize(state.cloud.size());
            for (std::size_t i = 0; i < origin.size(); ++i) {
              if (origin[i] < 0) continue;
              remapped.first[i] = state.adam.first[origin[i]];
              remapped.second[i] = state.adam.second[origin[i]];
            }
            state.adam = std::move(remapped);
          }
          state.grad_stats.reset(state.cloud.size());
        }
      }
      // A pose iteration that coincides with a densification tick defers it
      // to the next Gaussian step, keeping the two phases exclusive.
      if (phase == Phase::kPose && t % config.densify_interval == 0 && t >= config.densify_from &&
          t <= densify_until) {
        densify_pending = true;
      }
      state.iteration = t;
      if (observer) observer(t, phase, state);
    } catch (const Error& e) {
      throw Error::with_context(e, "iteration " + std::to_string(t));
    }
  }
  return state;
}

TrainState train(const std::vector<ImageBuffer>& images, const CameraIntrinsics& k,
                 const sfm::SfmReconstruction& init, const TrainConfig& config,
                 const IterationObserver& observer) {
  std::vector<CameraPose> poses;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto it = init.poses.find(static_cast<int>(i));
    if (it == init.poses.end()) {
      throw Error(ErrorKind::kInvalidArgument, "image " + std::to_string(i) + " is not registered");
    }
    poses.push_back(it->second);
  }
  return train(images, k, sfm::seed_cloud(init), std::move(poses), config, observer);
}

}  // namespace jogs::train
