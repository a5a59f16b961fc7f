#include <doctest.h>

#include <numbers>
#include <random>

#include <Eigen/Eigenvalues>

#include "jogs/splat.hpp"
#include "oracles.hpp"

using namespace jogs;
using namespace jogs::splat;

namespace {

const CameraIntrinsics kCam{100, 100, 50, 50, 101, 101};

GaussianPrimitive make(const Vec3& p, double sigma, double opacity, const Vec3& color) {
  GaussianPrimitive g;
  g.position = p;
  g.log_scale = Vec3::Constant(std::log(sigma));
  g.opacity_logit = logit(opacity);
  g.color = color;
  return g;
}

// Scalar loss sum(d_image * image) and its finite-difference derivative.
double weighted(const GaussianCloud& c, const CameraPose& pose, const CameraIntrinsics& k, const ImageBuffer& w) {
  const auto img = render(c, pose, k).image;
  double s = 0;
  for (std::size_t i = 0; i < img.size(); ++i) s += img.data()[i] * w.data()[i];
  return s;
}

GaussianCloud random_scene(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-1, 1), pos(0, 1);
  GaussianCloud c;
  for (int i = 0; i < n; ++i) {
    GaussianPrimitive g;
    g.position = {0.6 * u(rng), 0.6 * u(rng), 3 + u(rng)};
    g.log_scale = {std::log(0.15 + 0.1 * pos(rng)), std::log(0.15 + 0.1 * pos(rng)), std::log(0.15 + 0.1 * pos(rng))};
    g.rotation = Vec4{1 + u(rng), u(rng), u(rng), u(rng)}.normalized();
    g.opacity_logit = u(rng);
    g.color = {pos(rng), pos(rng), pos(rng)};
    c.gaussians.push_back(g);
  }
  return c;
}

}  // namespace

TEST_CASE("project_gaussian: on-axis EWA oracle, culling, rotation symmetry") {
  const auto pg = project_gaussian(make({0, 0, 1}, 0.1, 0.5, Vec3::Zero()), {}, kCam);
  REQUIRE_FALSE(pg.culled);
  CHECK((pg.cov - Mat2{{100.3, 0}, {0, 100.3}}).norm() < 1e-9);
  CHECK(pg.depth == doctest::Approx(1.0));
  CHECK(project_gaussian(make({0, 0, -1}, 0.1, 0.5, Vec3::Zero()), {}, kCam).culled);

  GaussianPrimitive a = make({0, 0, 2}, 0.1, 0.5, Vec3::Zero());
  a.log_scale = {std::log(0.2), std::log(0.05), std::log(0.1)};
  GaussianPrimitive b = a;
  b.rotation = {std::cos(std::numbers::pi / 4), 0, 0, std::sin(std::numbers::pi / 4)};  // 90 deg about z
  const auto ca = project_gaussian(a, {}, kCam).cov, cb = project_gaussian(b, {}, kCam).cov;
  CHECK(std::abs(ca(0, 0) - cb(1, 1)) < 1e-9);
  CHECK(std::abs(ca(1, 1) - cb(0, 0)) < 1e-9);
}

TEST_CASE("render: saturated splat, hand-evaluated compositing, empty scene") {
  GaussianCloud one{{make({0, 0, 1}, 5.0, 0.99999, {1, 0, 0})}};
  const auto r = render(one, {}, kCam);
  CHECK(std::abs(r.image.at(50, 50, 0) - 1.0) < 1e-3);
  CHECK(r.image.at(50, 50, 1) < 1e-3);

  // Both splats centered on pixel (50,50) with alpha*G = 0.5 there.
  GaussianCloud two{{make({0, 0, 1}, 0.05, 0.5, {1, 0, 0}), make({0, 0, 2}, 0.05, 0.5, {0, 1, 0})}};
  const auto r2 = render(two, {}, kCam);
  CHECK(std::abs(r2.image.at(50, 50, 0) - 0.5) < 1e-12);
  CHECK(std::abs(r2.image.at(50, 50, 1) - 0.25) < 1e-12);
  CHECK(std::abs(r2.per_pixel_alpha[50 * 101 + 50] - 0.75) < 1e-12);
  // Input order must not matter: the renderer sorts by depth.
  GaussianCloud swapped{{two.gaussians[1], two.gaussians[0]}};
  CHECK(render(swapped, {}, kCam).image == r2.image);

  const auto empty = render(GaussianCloud{}, {}, kCam);
  for (double v : empty.image.data()) CHECK(v == 0.0);
  for (double v : empty.per_pixel_alpha) CHECK(v == 0.0);
}

TEST_CASE("render_backward: zero upstream gradient gives zero gradients") {
  std::mt19937_64 rng(1);
  const auto c = random_scene(rng, 5);
  const CameraIntrinsics k{32, 32, 15.5, 15.5, 32, 32};
  const auto g = render_backward(c, {}, k, ImageBuffer(32, 32, 0.0));
  for (const auto& gg : g) {
    CHECK(gg.position.norm() == 0.0);
    CHECK(gg.log_scale.norm() == 0.0);
    CHECK(gg.rotation.norm() == 0.0);
    CHECK(gg.opacity_logit == 0.0);
    CHECK(gg.color.norm() == 0.0);
  }
}

TEST_CASE("render_backward: color gradient of an L1 loss against a shifted target") {
  const CameraIntrinsics k{32, 32, 15.5, 15.5, 32, 32};
  GaussianCloud c{{make({0, 0, 3}, 0.3, 0.8, {0.4, 0.5, 0.6})}};
  GaussianCloud shifted = c;
  shifted.gaussians[0].position.x() += 0.2;
  const auto target = render(shifted, {}, k).image;
  auto l1 = [&](const GaussianCloud& cc, ImageBuffer* grad) {
    const auto img = render(cc, {}, k).image;
    double s = 0;
    if (grad) *grad = ImageBuffer(32, 32);
    for (std::size_t i = 0; i < img.size(); ++i) {
      const double d = img.data()[i] - target.data()[i];
      s += std::abs(d);
      if (grad) grad->data()[i] = d > 0 ? 1 : (d < 0 ? -1 : 0);
    }
    return s;
  };
  ImageBuffer up;
  l1(c, &up);
  const auto g = render_backward(c, {}, k, up);
  const double h = 1e-6;
  for (int ch = 0; ch < 3; ++ch) {
    GaussianCloud p = c, m = c;
    p.gaussians[0].color[ch] += h;
    m.gaussians[0].color[ch] -= h;
    const double fd = (l1(p, nullptr) - l1(m, nullptr)) / (2 * h);
    CHECK(std::abs(g[0].color[ch] - fd) <= 1e-3 * std::max(1.0, std::abs(fd)));
  }
}

TEST_CASE("render_backward: every parameter of a 10-Gaussian scene matches finite differences") {
  std::mt19937_64 rng(7);
  const CameraIntrinsics k{32, 32, 15.5, 15.5, 32, 32};
  const auto c = random_scene(rng, 10);
  auto w = oracle::random_image(32, 32, rng);
  const CameraPose pose{{0.02, -0.03, 0.01}, {0.05, 0.0, 0.1}};
  oracle::mask_truncation_band(w, c, pose, k);
  const auto g = render_backward(c, pose, k, w);
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    auto fd = [&](auto&& poke) {
      GaussianCloud p = c, m = c;
      poke(p.gaussians[i], h);
      poke(m.gaussians[i], -h);
      return (weighted(p, pose, k, w) - weighted(m, pose, k, w)) / (2 * h);
    };
    auto rel = [&](double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); };
    for (int d = 0; d < 3; ++d) {
      worst = std::max(worst, rel(g[i].position[d], fd([d](GaussianPrimitive& q, double e) { q.position[d] += e; })));
      worst = std::max(worst, rel(g[i].log_scale[d], fd([d](GaussianPrimitive& q, double e) { q.log_scale[d] += e; })));
      worst = std::max(worst, rel(g[i].color[d], fd([d](GaussianPrimitive& q, double e) { q.color[d] += e; })));
    }
    for (int d = 0; d < 4; ++d) {
      worst = std::max(worst, rel(g[i].rotation[d], fd([d](GaussianPrimitive& q, double e) { q.rotation[d] += e; })));
    }
    worst = std::max(worst, rel(g[i].opacity_logit, fd([](GaussianPrimitive& q, double e) { q.opacity_logit += e; })));
  }
  CHECK(worst < 1e-2);
}

TEST_CASE("densify_and_prune rules") {
  std::mt19937_64 rng(3);
  GaussianCloud c;
  for (int i = 0; i < 4; ++i) c.gaussians.push_back(make({0.1 * i, 0, 3}, 0.01, 0.5, {0.5, 0.5, 0.5}));
  GradientStats stats;
  stats.reset(c.size());
  DensifyThresholds th;
  th.scene_extent = 1.0;
  std::vector<int> origin;
  CHECK(densify_and_prune(c, stats, th, rng, &origin) == c);
  CHECK(origin == std::vector<int>{0, 1, 2, 3});

  GaussianCloud faint = c;
  faint.gaussians[2].opacity_logit = logit(0.001);
  const auto pruned = densify_and_prune(faint, stats, th, rng);
  CHECK(pruned.size() == 3);

  // One large Gaussian with a strong screen-space gradient is split in two.
  GaussianCloud big{{make({0, 0, 3}, 0.2, 0.5, {0.5, 0.5, 0.5})}};
  big.gaussians[0].log_scale = {std::log(0.2), std::log(0.1), std::log(0.05)};
  GradientStats s1;
  s1.reset(1);
  GaussianGradient gg;
  gg.mean2d = {0.01, 0.0};
  s1.accumulate({gg}, {5.0});
  const auto split = densify_and_prune(big, s1, th, rng, &origin);
  REQUIRE(split.size() == 2);
  CHECK(origin == std::vector<int>{-1, -1});
  for (const auto& child : split.gaussians) {
    CHECK((child.log_scale - (big.gaussians[0].log_scale.array() - std::log(1.6)).matrix()).norm() < 1e-12);
    // Children are drawn from the parent's distribution; 5 sigma bounds the draw.
    CHECK((child.position - big.gaussians[0].position).norm() < 5 * 0.2);
  }
}
