#include <doctest.h>

#include <numbers>
#include <random>

#include "jogs/error.hpp"
#include "jogs/geometry.hpp"
#include "oracles.hpp"

using namespace jogs;
using geometry::euler_to_rotation;
constexpr double kPi = std::numbers::pi;

TEST_CASE("euler_to_rotation: identity, axis rotation and product oracle") {
  CHECK(euler_to_rotation({0, 0, 0}).isApprox(Mat3::Identity(), 1e-15));
  const Vec3 mapped = euler_to_rotation({kPi / 2, 0, 0}) * Vec3{0, 1, 0};
  CHECK((mapped - Vec3{0, 0, 1}).norm() < 1e-12);
  const Mat3 r = euler_to_rotation({0.3, -0.7, 1.1});
  CHECK((r - oracle::euler(0.3, -0.7, 1.1)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((r.transpose() * r - Mat3::Identity()).norm() < 1e-9);
  CHECK(std::abs(r.determinant() - 1.0) < 1e-9);
}

TEST_CASE("rotation_jacobians match finite differences, including gimbal lock") {
  Mat3 gz;
  gz << 0, -1, 0, 1, 0, 0, 0, 0, 0;
  CHECK((geometry::rotation_jacobians({0, 0, 0})[2] - gz).norm() < 1e-15);
  for (const EulerAngles e : {EulerAngles{0.3, -0.7, 1.1}, EulerAngles{0, kPi / 2, 0}}) {
    const auto j = geometry::rotation_jacobians(e);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      double p[3] = {e.alpha, e.beta, e.gamma}, m[3] = {e.alpha, e.beta, e.gamma};
      p[k] += h;
      m[k] -= h;
      const Mat3 fd = (oracle::euler(p[0], p[1], p[2]) - oracle::euler(m[0], m[1], m[2])) / (2 * h);
      CHECK((j[k] - fd).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("project: optical axis, offset point, composition oracle") {
  const CameraIntrinsics k{100, 100, 50, 50, 101, 101};
  auto r = geometry::project({0, 0, 1}, {}, k);
  CHECK(r.pixel.isApprox(Vec2{50, 50}));
  CHECK(r.depth == doctest::Approx(1.0));
  r = geometry::project({0.1, 0, 1}, {}, k);
  CHECK((r.pixel - Vec2{60, 50}).norm() < 1e-12);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 50; ++t) {
    CameraPose pose{{u(rng), u(rng), u(rng)}, {0.1 * u(rng), 0.1 * u(rng), 5 + u(rng)}};
    const Vec3 p{u(rng), u(rng), u(rng)};
    const auto got = geometry::project(p, pose, k);
    const Vec2 want = oracle::project(p, pose.rotation.alpha, pose.rotation.beta, pose.rotation.gamma,
                                      pose.translation, 100, 100, 50, 50);
    CHECK((got.pixel - want).norm() < 1e-9);
  }
  CHECK_THROWS_AS(geometry::project({0, 0, 0}, {}, k), Error);
}

TEST_CASE("back_project inverts project") {
  const CameraIntrinsics k{80, 90, 31.5, 29.5, 64, 60};
  const CameraPose pose{{0.2, -0.1, 0.4}, {0.3, -0.2, 4.0}};
  const Vec3 p{0.4, -0.3, 0.2};
  const auto pr = geometry::project(p, pose, k);
  CHECK((geometry::back_project(pr.pixel, pr.depth, pose, k) - p).norm() < 1e-12);
}

TEST_CASE("projection_jacobian: analytic columns and finite differences") {
  const CameraIntrinsics k{100, 100, 50, 50, 101, 101};
  const Mat26 j0 = geometry::projection_jacobian({0, 0, 1}, {}, k);
  CHECK((j0.col(3) - Vec2{100, 0}).norm() < 1e-12);
  CHECK(j0.col(5).norm() < 1e-12);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 100; ++t) {
    const Vec6 v{u(rng), u(rng), u(rng), 0.2 * u(rng), 0.2 * u(rng), 4 + u(rng)};
    const Vec3 p{u(rng), u(rng), u(rng)};
    const Mat26 j = geometry::projection_jacobian(p, CameraPose::from_vector(v), k);
    const double h = 1e-6;
    for (int c = 0; c < 6; ++c) {
      Vec6 a = v, b = v;
      a[c] += h;
      b[c] -= h;
      const Vec2 fd = (oracle::project(p, a[0], a[1], a[2], a.tail<3>(), 100, 100, 50, 50) -
                       oracle::project(p, b[0], b[1], b[2], b.tail<3>(), 100, 100, 50, 50)) /
                      (2 * h);
      CHECK((j.col(c) - fd).cwiseAbs().maxCoeff() < 1e-4 * (1 + j.col(c).cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("canonicalize wraps into (-pi, pi] and keeps the rotation") {
  auto c = geometry::canonicalize({2 * kPi, 0, 0});
  CHECK(std::abs(c.alpha) < 1e-12);
  c = geometry::canonicalize({kPi + 0.1, 0, 0});
  CHECK(c.alpha == doctest::Approx(-kPi + 0.1));
  const EulerAngles big{-3 * kPi, 4 * kPi, 5 * kPi};
  c = geometry::canonicalize(big);
  for (double a : {c.alpha, c.beta, c.gamma}) {
    CHECK(a > -kPi);
    CHECK(a <= kPi);
  }
  CHECK((euler_to_rotation(c) - euler_to_rotation(big)).norm() < 1e-9);
  CHECK(geometry::wrap_angle(kPi) == doctest::Approx(kPi));
}

TEST_CASE("rotation_to_euler round trip and pose helpers") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 100; ++t) {
    const Mat3 r = oracle::euler(u(rng), 0.5 * u(rng), u(rng));
    CHECK((euler_to_rotation(geometry::rotation_to_euler(r)) - r).norm() < 1e-9);
  }
  const CameraPose p{{0.1, 0.2, 0.3}, {1, 2, 3}};
  CHECK(CameraPose::from_vector(p.as_vector()) == p);
  CHECK((p.rotation_matrix() * p.center() + p.translation).norm() < 1e-12);
  const Vec6 d = Vec6::Constant(0.01);
  CHECK((geometry::apply_increment(p, d, 0.5).as_vector() - (p.as_vector() + 0.005 * Vec6::Ones())).norm() < 1e-15);
  CHECK(geometry::rotation_angle_between(Mat3::Identity(), oracle::rz(0.25)) == doctest::Approx(0.25));
}

TEST_CASE("intrinsics validation") {
  CHECK_THROWS_AS((CameraIntrinsics{-1, 1, 0, 0, 10, 10}.validate()), Error);
  CHECK_THROWS_AS((CameraIntrinsics{1, 1, 20, 0, 10, 10}.validate()), Error);
  CHECK_NOTHROW((CameraIntrinsics{1, 1, 4.5, 4.5, 10, 10}.validate()));
}
