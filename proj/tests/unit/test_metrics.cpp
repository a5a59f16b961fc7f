#include <doctest.h>

#include <numbers>
#include <random>

#include "jogs/error.hpp"
#include "jogs/metrics.hpp"
#include "oracles.hpp"

using namespace jogs;
using namespace jogs::metrics;
constexpr double kDeg = std::numbers::pi / 180.0;

namespace {

Trajectory orbit(int n) {
  Trajectory t;
  for (int i = 0; i < n; ++i) {
    const double a = 0.3 * i;
    const Mat3 r = oracle::euler(0.1 * i, a, 0.05 * i);
    const Vec3 c{3 * std::sin(a), 0.2 * i, -3 * std::cos(a)};
    t.poses.push_back(geometry::pose_from_rt(r, -(r * c)));
    t.ids.push_back(std::to_string(i));
  }
  return t;
}

}  // namespace

TEST_CASE("PSNR: infinity marker, 20 dB, formula oracle, symmetry") {
  ImageBuffer a(8, 8, 0.5), b(8, 8, 0.6);
  CHECK(compute_psnr(a, a) == kPsnrInfinity);
  CHECK(compute_psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  std::mt19937_64 rng(1);
  const auto x = oracle::random_image(13, 9, rng), y = oracle::random_image(13, 9, rng);
  double mse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mse += (x.data()[i] - y.data()[i]) * (x.data()[i] - y.data()[i]);
  mse /= x.size();
  CHECK(std::abs(compute_psnr(x, y) - 10 * std::log10(1 / mse)) < 1e-9);
  CHECK(compute_psnr(x, y) == compute_psnr(y, x));
  CHECK_THROWS_AS(compute_psnr(x, a), Error);
}

TEST_CASE("SSIM: self-similarity, constants, anti-correlation, brute-force oracle") {
  std::mt19937_64 rng(2);
  const auto x = oracle::random_image(24, 20, rng), y = oracle::random_image(24, 20, rng);
  CHECK(compute_ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(compute_ssim(ImageBuffer(16, 16, 0.5), ImageBuffer(16, 16, 0.5)) == doctest::Approx(1.0));
  CHECK(std::abs(compute_ssim(x, y) - oracle::ssim(x, y)) < 1e-10);
  CHECK(std::abs(compute_ssim(x, y) - compute_ssim(y, x)) < 1e-12);

  ImageBuffer check(32, 32), neg(32, 32);
  for (int yy = 0; yy < 32; ++yy) {
    for (int xx = 0; xx < 32; ++xx) {
      const double d = ((xx / 2 + yy / 2) % 2) ? 0.3 : -0.3;
      for (int c = 0; c < 3; ++c) {
        check.at(xx, yy, c) = 0.5 + d;
        neg.at(xx, yy, c) = 0.5 - d;
      }
    }
  }
  CHECK(compute_ssim(check, neg) < 0.0);
  CHECK_THROWS_AS(compute_ssim(ImageBuffer(10, 10), ImageBuffer(10, 10)), Error);
}

TEST_CASE("SSIM gradient matches finite differences") {
  std::mt19937_64 rng(4);
  auto x = oracle::random_image(14, 13, rng);
  const auto y = oracle::random_image(14, 13, rng);
  ImageBuffer g;
  compute_ssim(x, y, &g);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); i += 7) {
    const double v = x.data()[i];
    x.data()[i] = v + h;
    const double p = compute_ssim(x, y);
    x.data()[i] = v - h;
    const double m = compute_ssim(x, y);
    x.data()[i] = v;
    CHECK(std::abs((p - m) / (2 * h) - g.data()[i]) < 1e-7);
  }
}

TEST_CASE("Umeyama: self alignment, construct-then-recover, collinear") {
  const Trajectory t = orbit(6);
  auto s = umeyama_align(t, t);
  CHECK(s.scale == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((s.rotation - Mat3::Identity()).norm() < 1e-9);
  CHECK(s.translation.norm() < 1e-9);

  AlignmentResult g{2.0, oracle::rz(30 * kDeg), Vec3::Zero()};
  const Trajectory scaled = transform_trajectory(t, g);
  s = umeyama_align(scaled, t);
  CHECK(std::abs(s.scale - 0.5) < 1e-9);
  CHECK(geometry::rotation_angle_between(s.rotation, oracle::rz(-30 * kDeg)) < 1e-9);

  Trajectory line;
  for (int i = 0; i < 4; ++i) line.poses.push_back({{}, Vec3{0, 0, double(i)}});
  CHECK_THROWS_AS(umeyama_align(line, line), Error);
}

TEST_CASE("ATE: zero, similarity invariance, Monte-Carlo noise band") {
  const Trajectory t = orbit(8);
  CHECK(compute_ate(t, t) < 1e-12);
  const Trajectory moved = transform_trajectory(t, {1.7, oracle::euler(0.3, 0.2, -0.5), Vec3{1, -2, 3}});
  CHECK(compute_ate(moved, t) < 1e-9);

  std::mt19937_64 rng(9);
  // sigma is the RMS length of the 3D offset, so each axis gets sigma / sqrt(3).
  std::normal_distribution<double> n(0, 0.01 / std::sqrt(3.0));
  std::uniform_real_distribution<double> u(-1, 1);
  Trajectory ref, est;
  for (int i = 0; i < 100; ++i) {
    const Vec3 c{u(rng), u(rng), u(rng)};
    ref.poses.push_back(geometry::pose_from_rt(Mat3::Identity(), -c));
    const Vec3 noisy = c + Vec3{n(rng), n(rng), n(rng)};
    est.poses.push_back(geometry::pose_from_rt(Mat3::Identity(), -noisy));
  }
  const double ate = compute_ate(est, ref);
  CHECK(ate >= 0.007);
  CHECK(ate <= 0.013);
}

TEST_CASE("RPE: zero, gauge invariance, injected 5 degree error") {
  const Trajectory t = orbit(5);
  auto r = compute_rpe(t, t);
  CHECK(r.translation < 1e-12);
  CHECK(r.rotation_deg < 1e-9);

  // A fixed world rotation composed into every camera leaves relative motion intact.
  Trajectory g = t;
  const Mat3 w = oracle::euler(0.4, -0.2, 0.9);
  for (auto& p : g.poses) p = geometry::pose_from_rt(p.rotation_matrix() * w, p.translation);
  r = compute_rpe(g, t);
  CHECK(r.translation < 1e-9);
  CHECK(r.rotation_deg < 1e-9);

  Trajectory a, b;
  a.poses = {CameraPose{}, CameraPose{}};
  b.poses = {CameraPose{}, geometry::pose_from_rt(oracle::rx(5 * kDeg), Vec3::Zero())};
  r = compute_rpe(b, a);
  CHECK(std::abs(r.rotation_deg - 5.0) < 1e-9);
  CHECK_THROWS_AS(compute_rpe(a, a, 2), Error);
}

TEST_CASE("Trajectory validation rejects duplicate ids") {
  Trajectory t = orbit(3);
  t.ids[1] = t.ids[0];
  CHECK_THROWS_AS(t.validate(), Error);
}
