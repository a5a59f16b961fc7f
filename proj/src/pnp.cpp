#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "jogs/error.hpp"
#include "jogs/sfm.hpp"

namespace jogs::sfm {
namespace {

// Real roots of c[0] x^n + ... + c[n], polished with Newton steps.
std::vector<double> real_roots(std::vector<double> c) {
  const double scale = std::max(1e-300, std::abs(*std::max_element(
      c.begin(), c.end(), [](double a, double b) { return std::abs(a) < std::abs(b); })));
  while (!c.empty() && std::abs(c.front()) <= 1e-12 * scale) c.erase(c.begin());
  const int n = static_cast<int>(c.size()) - 1;
  std::vector<double> roots;
  if (n < 1) return roots;
  Eigen::MatrixXd comp = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) comp(0, i) = -c[i + 1] / c[0];
  for (int i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
  const Eigen::EigenSolver<Eigen::MatrixXd> es(comp, false);
  for (int i = 0; i < n; ++i) {
    const auto z = es.eigenvalues()[i];
    if (std::abs(z.imag()) > 1e-6 * std::max(1.0, std::abs(z))) continue;
    double x = z.real();
    for (int it = 0; it < 3; ++it) {
      double p = c[0], dp = 0.0;
      for (int k = 1; k <= n; ++k) {
        dp = dp * x + p;
        p = p * x + c[k];
      }
      if (!(std::abs(dp) > 0.0)) break;
      x -= p / dp;
    }
    roots.push_back(x);
  }
  return roots;
}

// Rigid transform mapping world points onto camera-frame points.
CameraPose kabsch(const std::array<Vec3, 3>& world, const std::array<Vec3, 3>& cam) {
  Vec3 mw = Vec3::Zero(), mc = Vec3::Zero();
  for (int i = 0; i < 3; ++i) {
    mw += world[i];
    mc += cam[i];
  }
  mw /= 3.0;
  mc /= 3.0;
  Mat3 h = Mat3::Zero();
  for (int i = 0; i < 3; ++i) h += (world[i] - mw) * (cam[i] - mc).transpose();
  const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
  return geometry::pose_from_rt(r, mc - r * mw);
}

double reprojection_sq(const CameraPose& pose, const Mat3& r, const Vec3& x, const Vec2& pixel,
                       const CameraIntrinsics& k) {
  const Vec3 pc = r * x + pose.translation;
  if (!(pc.z() > geometry::kDepthEpsilon)) return std::numeric_limits<double>::infinity();
  const Vec2 p{k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy};
  return (p - pixel).squaredNorm();
}

bool all_collinear(const std::vector<Vec3>& pts) {
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Mat3 scatter = Mat3::Zero();
  for (const auto& p : pts) scatter += (p - mean) * (p - mean).transpose();
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter);
  return !(eig.eigenvalues()[2] > 0.0) || eig.eigenvalues()[1] <= 1e-12 * eig.eigenvalues()[2];
}

}  // namespace

// Grunert's formulation: with bearings f_i and distances d_i, write d2 = u d1,
// d3 = v d1. The law of cosines on the three sides reduces to a quartic in v.
std::vector<CameraPose> solve_p3p(const std::array<Vec3, 3>& x, const std::array<Vec2, 3>& pixels,
                                  const CameraIntrinsics& k) {
  std::array<Vec3, 3> f;
  for (int i = 0; i < 3; ++i) {
    f[i] = Vec3{(pixels[i].x() - k.cx) / k.fx, (pixels[i].y() - k.cy) / k.fy, 1.0}.normalized();
  }
  const double a2 = (x[1] - x[2]).squaredNorm();
  const double b2 = (x[0] - x[2]).squaredNorm();
  const double c2 = (x[0] - x[1]).squaredNorm();
  std::vector<CameraPose> out;
  if (!(a2 > 0.0 && b2 > 0.0 && c2 > 0.0)) return out;
  const double ca = f[1].dot(f[2]);
  const double cb = f[0].dot(f[2]);
  const double cg = f[0].dot(f[1]);

  const double amc = (a2 - c2) / b2;
  const double apc = (a2 + c2) / b2;
  const double bmc = (b2 - c2) / b2;
  const double bma = (b2 - a2) / b2;
  const double a4 = (amc - 1.0) * (amc - 1.0) - 4.0 * c2 / b2 * ca * ca;
  const double a3 = 4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
  const double a2c = 2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * bmc * ca * ca -
                            4.0 * apc * ca * cb * cg + 2.0 * bma * cg * cg);
  const double a1 = 4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg);
  const double a0 = (1.0 + amc) * (1.0 + amc) - 4.0 * a2 / b2 * cg * cg;

  for (double v : real_roots({a4, a3, a2c, a1, a0})) {
    const double den = 2.0 * (cg - v * ca);
    if (!(std::abs(den) > 1e-12)) continue;
    const double u = ((-1.0 + amc) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / den;
    const double q = 1.0 + v * v - 2.0 * v * cb;
    if (!(q > 0.0)) continue;
    const double d1 = std::sqrt(b2 / q);
    const double d2 = u * d1, d3 = v * d1;
    if (!(d1 > 0.0 && d2 > 0.0 && d3 > 0.0)) continue;
    out.push_back(kabsch(x, {d1 * f[0], d2 * f[1], d3 * f[2]}));
  }
  return out;
}

CameraPose refine_pose_reprojection(const CameraPose& initial, const std::vector<Vec3>& points,
                                    const std::vector<Vec2>& pixels, const CameraIntrinsics& k,
                                    const std::vector<bool>& mask, int max_iterations) {
  auto cost_of = [&](const CameraPose& pose) {
    const Mat3 r = pose.rotation_matrix();
    double c = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      c += reprojection_sq(pose, r, points[i], pixels[i], k);
    }
    return c;
  };
  CameraPose pose = initial;
  double cost = cost_of(pose);
  if (!std::isfinite(cost)) return pose;
  double lambda = 1e-4;
  for (int it = 0; it < max_iterations; ++it) {
    Mat6 h = Mat6::Zero();
    Vec6 b = Vec6::Zero();
    const Mat3 r = pose.rotation_matrix();
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      const Vec3 pc = r * points[i] + pose.translation;
      const Vec2 p{k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy};
      const Mat26 j = geometry::projection_jacobian(points[i], pose, k);
      h += j.transpose() * j;
      b += j.transpose() * (pixels[i] - p);
    }
    bool accepted = false;
    for (int attempt = 0; attempt < 8 && !accepted; ++attempt) {
      Mat6 a = h;
      a.diagonal() += lambda * h.diagonal();
      const Vec6 step = a.ldlt().solve(b);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      CameraPose candidate = geometry::apply_increment(pose, step);
      const double c = cost_of(candidate);
      if (c <= cost) {
        const double gain = cost - c;
        pose = candidate;
        cost = c;
        lambda = std::max(1e-12, lambda * 0.1);
        accepted = true;
        if (step.norm() < 1e-14 || gain <= 1e-16 * std::max(cost, 1e-300)) return pose;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
  }
  return pose;
}

PnpResult solve_pnp_ransac(const std::vector<Vec3>& points, const std::vector<Vec2>& pixels,
                           const CameraIntrinsics& k, const RansacOptions& options) {
  if (points.size() != pixels.size()) {
    throw Error(ErrorKind::kInvalidArgument, "2D and 3D lists differ in length");
  }
  const std::size_t n = points.size();
  if (n < 4) throw Error(ErrorKind::kInsufficientData, "PnP needs >= 4 correspondences");
  if (all_collinear(points)) throw Error(ErrorKind::kDegenerate, "PnP points are collinear");

  const double thr2 = options.threshold_px * options.threshold_px;
  auto score = [&](const CameraPose& pose, std::vector<bool>& mask) {
    const Mat3 r = pose.rotation_matrix();
    mask.assign(n, false);
    int count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (reprojection_sq(pose, r, points[i], pixels[i], k) < thr2) {
        mask[i] = true;
        ++count;
      }
    }
    return count;
  };

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> index(n);
  for (std::size_t i = 0; i < n; ++i) index[i] = i;
  PnpResult best;
  std::vector<bool> mask;
  int trials = options.max_iterations;
  for (int it = 0; it < trials; ++it) {
    for (int j = 0; j < 3; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, n - 1);
      std::swap(index[j], index[pick(rng)]);
    }
    const std::array<Vec3, 3> x{points[index[0]], points[index[1]], points[index[2]]};
    const double span = std::max({(x[1] - x[0]).squaredNorm(), (x[2] - x[0]).squaredNorm(), 1e-300});
    if ((x[1] - x[0]).cross(x[2] - x[0]).norm() <= 1e-9 * span) continue;
    const std::array<Vec2, 3> px{pixels[index[0]], pixels[index[1]], pixels[index[2]]};
    for (const CameraPose& pose : solve_p3p(x, px, k)) {
      const int count = score(pose, mask);
      if (count > best.inlier_count) {
        best.pose = pose;
        best.inliers = mask;
        best.inlier_count = count;
        const double w = static_cast<double>(count) / n;
        const double denom = std::log(1.0 - w * w * w);
        if (w >= 1.0) {
          trials = 0;
        } else if (denom < 0.0) {
          trials = std::min<int>(trials, static_cast<int>(std::ceil(std::log(1.0 - options.confidence) / denom)));
        }
      }
    }
  }
  if (best.inlier_count < 4) throw Error(ErrorKind::kEstimationFailure, "PnP found no consensus");
  for (int round = 0; round < 3; ++round) {
    const CameraPose refined = refine_pose_reprojection(best.pose, points, pixels, k, best.inliers, 30);
    const int count = score(refined, mask);
    if (count < best.inlier_count) break;
    const bool same = mask == best.inliers;
    best.pose = refined;
    best.inliers = mask;
    best.inlier_count = count;
    if (same) break;
  }
  return best;
}

}  // namespace jogs::sfm
