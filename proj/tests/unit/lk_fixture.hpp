#pragma once
// Photometrically consistent LK fixture: a smooth procedural image and a cloud
// whose colors are the image sampled at each center's true projection, so the
// true pose is an exact zero of the LK objective.

#include <cmath>
#include <random>

#include "jogs/lk3d.hpp"
#include "jogs/synthetic.hpp"

namespace fixture {

struct LkScene {
  jogs::splat::GaussianCloud cloud;
  jogs::CameraPose pose;
  jogs::ImageBuffer image;
  jogs::CameraIntrinsics k;
  double extent = 0.0;
};

inline jogs::ImageBuffer texture(int w, int h) {
  jogs::ImageBuffer img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = x / double(w), v = y / double(h);
      img.at(x, y, 0) = 0.5 + 0.3 * std::sin(7 * u + 3 * v);
      img.at(x, y, 1) = 0.5 + 0.3 * std::cos(5 * v - 4 * u + 1);
      img.at(x, y, 2) = 0.5 + 0.2 * std::sin(6 * (u + v) + 2);
    }
  }
  return img;
}

inline LkScene make_lk_scene(int points, unsigned seed) {
  LkScene s;
  s.k = jogs::synthetic::intrinsics_for(64, 64, 60.0);
  s.pose = jogs::synthetic::look_at({0.8, -0.4, -4.0}, {0, 0, 0});
  s.image = texture(64, 64);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  while (static_cast<int>(s.cloud.size()) < points) {
    jogs::splat::GaussianPrimitive g;
    g.position = {u(rng), u(rng), 0.3 * u(rng)};
    g.log_scale = jogs::Vec3::Constant(std::log(0.02));
    g.opacity_logit = jogs::splat::logit(0.9);
    const auto pr = jogs::geometry::project(g.position, s.pose, s.k);
    const auto c = jogs::lk3d::sample_bilinear(s.image, pr.pixel);
    // Keep a margin so that perturbed projections stay inside the frame.
    if (!c || pr.pixel.minCoeff() < 6 || pr.pixel.maxCoeff() > 57) continue;
    g.color = {(*c)[0], (*c)[1], (*c)[2]};
    s.cloud.gaussians.push_back(g);
  }
  s.extent = 2.0 * std::sqrt(2.09);
  return s;
}

}  // namespace fixture
