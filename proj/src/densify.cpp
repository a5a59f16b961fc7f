#include <algorithm>
#include <cmath>

#include "jogs/splat.hpp"

namespace jogs::splat {

void GradientStats::reset(std::size_t n) {
  mean2d_norm_sum.assign(n, 0.0);
  position_grad_sum.assign(n, Vec3::Zero());
  count.assign(n, 0);
  max_radius.assign(n, 0.0);
}

void GradientStats::accumulate(const std::vector<GaussianGradient>& grads,
                               const std::vector<double>& radius) {
  if (count.size() != grads.size()) reset(grads.size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (radius[i] <= 0.0) continue;
    mean2d_norm_sum[i] += grads[i].mean2d.norm();
    position_grad_sum[i] += grads[i].position;
    count[i] += 1;
    max_radius[i] = std::max(max_radius[i], radius[i]);
  }
}

GaussianCloud densify_and_prune(const GaussianCloud& cloud, const GradientStats& stats,
                                const DensifyThresholds& th, std::mt19937_64& rng,
                                std::vector<int>* origin) {
  const bool have_stats = stats.count.size() == cloud.size();
  const double dense_limit = th.percent_dense * th.scene_extent;
  std::normal_distribution<double> normal(0.0, 1.0);

  GaussianCloud out;
  out.gaussians.reserve(cloud.size());
  if (origin) origin->clear();
  auto keep = [&](const GaussianPrimitive& g, int source) {
    if (g.opacity() < th.min_opacity) return;
    if (th.max_world_scale > 0.0 &&
        std::exp(g.log_scale.maxCoeff()) > th.max_world_scale * th.scene_extent) {
      return;
    }
    out.gaussians.push_back(g);
    if (origin) origin->push_back(source);
  };

  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const GaussianPrimitive& g = cloud.gaussians[i];
    if (have_stats && th.max_screen_radius > 0.0 && stats.max_radius[i] > th.max_screen_radius) {
      continue;
    }
    const bool triggered = have_stats && stats.count[i] > 0 &&
                           stats.mean2d_norm_sum[i] / stats.count[i] >= th.grad_threshold;
    const int self = static_cast<int>(i);
    if (!triggered) {
      keep(g, self);
      continue;
    }
    const double max_scale = std::exp(g.log_scale.maxCoeff());
    if (max_scale <= dense_limit) {
      keep(g, self);
      GaussianPrimitive clone = g;
      const Vec3 grad = stats.position_grad_sum[i];
      if (grad.norm() > 0.0) clone.position -= max_scale * grad.normalized();
      keep(clone, -1);
    } else {
      const Mat3 r = quaternion_to_rotation(g.rotation);
      const Vec3 s = g.log_scale.array().exp();
      for (int child = 0; child < 2; ++child) {
        GaussianPrimitive c = g;
        const Vec3 z{normal(rng), normal(rng), normal(rng)};
        c.position = g.position + r * s.cwiseProduct(z);
        c.log_scale = g.log_scale.array() - std::log(th.split_scale_factor);
        keep(c, -1);
      }
    }
  }
  return out;
}

}  // namespace jogs::splat
