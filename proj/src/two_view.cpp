#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "jogs/error.hpp"
#include "jogs/sfm.hpp"

namespace jogs::sfm {
namespace {

Vec2 normalize_pixel(const Vec2& p, const CameraIntrinsics& k) {
  return {(p.x() - k.cx) / k.fx, (p.y() - k.cy) / k.fy};
}

// Similarity moving points to zero mean and mean distance sqrt(2).
Mat3 hartley_transform(const std::vector<Vec2>& pts) {
  Vec2 mean = Vec2::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double dist = 0.0;
  for (const auto& p : pts) dist += (p - mean).norm();
  dist /= static_cast<double>(pts.size());
  const double s = dist > 0.0 ? std::numbers::sqrt2 / dist : 1.0;
  Mat3 t;
  t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  return t;
}

int ransac_trials(double inlier_ratio, int sample_size, double confidence, int cap) {
  if (inlier_ratio >= 1.0) return 1;
  if (inlier_ratio <= 0.0) return cap;
  const double denom = std::log(1.0 - std::pow(inlier_ratio, sample_size));
  if (!(denom < 0.0)) return cap;
  const double n = std::log(1.0 - confidence) / denom;
  return static_cast<int>(std::min<double>(cap, std::ceil(n)));
}

Vec3 triangulate_normalized(const Mat3& r, const Vec3& t, const Vec2& a, const Vec2& b) {
  Eigen::Matrix4d m;
  Eigen::Matrix<double, 3, 4> p;
  p << r, t;
  m.row(2) = b.x() * p.row(2) - p.row(0);
  m.row(3) = b.y() * p.row(2) - p.row(1);
  m.row(0) = a.x() * Eigen::RowVector4d(0, 0, 1, 0) - Eigen::RowVector4d(1, 0, 0, 0);
  m.row(1) = a.y() * Eigen::RowVector4d(0, 0, 1, 0) - Eigen::RowVector4d(0, 1, 0, 0);
  const Eigen::JacobiSVD<Eigen::Matrix4d> svd(m, Eigen::ComputeFullV);
  const Eigen::Vector4d x = svd.matrixV().col(3);
  return x.head<3>() / x[3];
}

}  // namespace

double sampson_distance_px(const Mat3& e, const Vec2& pixel_a, const Vec2& pixel_b,
                           const CameraIntrinsics& k) {
  const Vec3 a = normalize_pixel(pixel_a, k).homogeneous();
  const Vec3 b = normalize_pixel(pixel_b, k).homogeneous();
  const Vec3 ea = e * a;
  const Vec3 etb = e.transpose() * b;
  const double num = b.dot(ea);
  const double den = ea.x() * ea.x() + ea.y() * ea.y() + etb.x() * etb.x() + etb.y() * etb.y();
  if (!(den > 0.0)) return std::numeric_limits<double>::infinity();
  return std::abs(num) / std::sqrt(den) * 0.5 * (k.fx + k.fy);
}

Mat3 essential_eight_point(const std::vector<Vec2>& na, const std::vector<Vec2>& nb) {
  if (na.size() != nb.size() || na.size() < 8) {
    throw Error(ErrorKind::kInsufficientData, "eight-point solve needs >= 8 correspondences");
  }
  const Mat3 ta = hartley_transform(na), tb = hartley_transform(nb);
  Eigen::MatrixXd a(na.size(), 9);
  for (std::size_t i = 0; i < na.size(); ++i) {
    const Vec3 x = ta * na[i].homogeneous();
    const Vec3 y = tb * nb[i].homogeneous();
    a.row(i) << y.x() * x.x(), y.x() * x.y(), y.x(), y.y() * x.x(), y.y() * x.y(), y.y(), x.x(), x.y(), 1.0;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd_a(a, Eigen::ComputeFullV);
  const Eigen::VectorXd sv = svd_a.singularValues();  // descending, 8 or 9 entries
  if (!(sv[0] > 0.0) || sv[7] <= 1e-9 * sv[0]) {
    throw Error(ErrorKind::kDegenerate, "eight-point system has a multi-dimensional null space");
  }
  const Eigen::VectorXd f = svd_a.matrixV().col(8);
  Mat3 e;
  e << f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8];
  e = tb.transpose() * e * ta;
  const Eigen::JacobiSVD<Mat3> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 projected = svd.matrixU() * Vec3(1.0, 1.0, 0.0).asDiagonal() * svd.matrixV().transpose();
  return projected;
}

EssentialResult estimate_essential_ransac(const std::vector<Vec2>& pixels_a,
                                          const std::vector<Vec2>& pixels_b,
                                          const CameraIntrinsics& k,
                                          const RansacOptions& options) {
  if (pixels_a.size() != pixels_b.size()) {
    throw Error(ErrorKind::kInvalidArgument, "correspondence lists differ in length");
  }
  const std::size_t n = pixels_a.size();
  if (n < 8) throw Error(ErrorKind::kInsufficientData, "essential estimation needs >= 8 correspondences");
  std::vector<Vec2> na(n), nb(n);
  for (std::size_t i = 0; i < n; ++i) {
    na[i] = normalize_pixel(pixels_a[i], k);
    nb[i] = normalize_pixel(pixels_b[i], k);
  }
  auto score = [&](const Mat3& e, std::vector<bool>& mask) {
    mask.assign(n, false);
    int count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (sampson_distance_px(e, pixels_a[i], pixels_b[i], k) < options.threshold_px) {
        mask[i] = true;
        ++count;
      }
    }
    return count;
  };

  std::mt19937_64 rng(options.seed);
  EssentialResult best;
  std::vector<bool> mask;
  int trials = options.max_iterations;
  std::vector<std::size_t> index(n);
  for (std::size_t i = 0; i < n; ++i) index[i] = i;
  for (int it = 0; it < trials; ++it) {
    // Partial Fisher-Yates shuffle for an 8-sample without replacement.
    std::vector<Vec2> sa(8), sb(8);
    for (int j = 0; j < 8; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, n - 1);
      std::swap(index[j], index[pick(rng)]);
      sa[j] = na[index[j]];
      sb[j] = nb[index[j]];
    }
    Mat3 e;
    try {
      e = essential_eight_point(sa, sb);
    } catch (const Error&) {
      continue;
    }
    const int count = score(e, mask);
    if (count > best.inlier_count) {
      best.essential = e;
      best.inliers = mask;
      best.inlier_count = count;
      trials = std::min(trials, ransac_trials(static_cast<double>(count) / n, 8, options.confidence,
                                              options.max_iterations));
    }
  }
  if (best.inlier_count < 8) {
    throw Error(ErrorKind::kEstimationFailure, "no essential matrix with >= 8 inliers");
  }
  // Polish on the consensus set; keep it only if it does not lose support.
  for (int round = 0; round < 3; ++round) {
    std::vector<Vec2> ia, ib;
    for (std::size_t i = 0; i < n; ++i) {
      if (best.inliers[i]) {
        ia.push_back(na[i]);
        ib.push_back(nb[i]);
      }
    }
    Mat3 e;
    try {
      e = essential_eight_point(ia, ib);
    } catch (const Error&) {
      break;
    }
    const int count = score(e, mask);
    if (count < best.inlier_count) break;
    const bool same = mask == best.inliers;
    best.essential = e;
    best.inliers = mask;
    best.inlier_count = count;
    if (same) break;
  }
  return best;
}

EssentialResult estimate_essential_ransac(MatchPair& matches, const std::vector<Keypoint>& a,
                                          const std::vector<Keypoint>& b,
                                          const CameraIntrinsics& k, const RansacOptions& options) {
  std::vector<Vec2> pa, pb;
  for (const auto& [i, j] : matches.correspondences) {
    pa.push_back(a.at(i).position);
    pb.push_back(b.at(j).position);
  }
  EssentialResult r = estimate_essential_ransac(pa, pb, k, options);
  matches.inlier_mask = r.inliers;
  return r;
}

CameraPose recover_pose(const Mat3& essential, const std::vector<Vec2>& pixels_a,
                        const std::vector<Vec2>& pixels_b, const CameraIntrinsics& k,
                        const std::vector<bool>& mask) {
  if (pixels_a.size() != pixels_b.size()) {
    throw Error(ErrorKind::kInvalidArgument, "correspondence lists differ in length");
  }
  std::vector<Vec2> na, nb;
  for (std::size_t i = 0; i < pixels_a.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    na.push_back(normalize_pixel(pixels_a[i], k));
    nb.push_back(normalize_pixel(pixels_b[i], k));
  }
  if (na.empty()) throw Error(ErrorKind::kInsufficientData, "pose recovery needs >= 1 inlier");

  const Eigen::JacobiSVD<Mat3> svd(essential, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU(), v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Mat3 w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const std::array<Mat3, 2> rotations{u * w * v.transpose(), u * w.transpose() * v.transpose()};
  const Vec3 t = u.col(2);

  int best_count = -1;
  Mat3 best_r = Mat3::Identity();
  Vec3 best_t = Vec3::Zero();
  for (const Mat3& r : rotations) {
    for (double sign : {1.0, -1.0}) {
      const Vec3 tt = sign * t;
      int count = 0;
      for (std::size_t i = 0; i < na.size(); ++i) {
        const Vec3 x = triangulate_normalized(r, tt, na[i], nb[i]);
        if (x.allFinite() && x.z() > 0.0 && (r * x + tt).z() > 0.0) ++count;
      }
      if (count > best_count) {
        best_count = count;
        best_r = r;
        best_t = tt;
      }
    }
  }
  if (2 * best_count <= static_cast<int>(na.size())) {
    throw Error(ErrorKind::kEstimationFailure, "no decomposition puts a majority of points in front");
  }
  // Translation is unobservable without parallax; flag near-pure rotation.
  std::vector<double> angles;
  for (std::size_t i = 0; i < na.size(); ++i) {
    const Vec3 ra = (best_r * na[i].homogeneous()).normalized();
    const Vec3 rb = nb[i].homogeneous().normalized();
    angles.push_back(std::acos(std::clamp(ra.dot(rb), -1.0, 1.0)));
  }
  std::nth_element(angles.begin(), angles.begin() + angles.size() / 2, angles.end());
  if (angles[angles.size() / 2] < 1e-3 * std::numbers::pi / 180.0) {
    throw Error(ErrorKind::kDegenerate, "correspondences are explained by a pure rotation");
  }
  return geometry::pose_from_rt(best_r, best_t.normalized());
}

double parallax_deg(const Vec3& point, const std::vector<Observation>& observations) {
  double best = 0.0;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const Vec3 ri = (point - observations[i].pose.center()).normalized();
    for (std::size_t j = i + 1; j < observations.size(); ++j) {
      const Vec3 rj = (point - observations[j].pose.center()).normalized();
      best = std::max(best, std::acos(std::clamp(ri.dot(rj), -1.0, 1.0)));
    }
  }
  return best * 180.0 / std::numbers::pi;
}

Vec3 triangulate(const std::vector<Observation>& obs, const CameraIntrinsics& k) {
  if (obs.size() < 2) throw Error(ErrorKind::kInsufficientData, "triangulation needs >= 2 views");
  double baseline = 0.0;
  for (std::size_t i = 1; i < obs.size(); ++i) {
    baseline = std::max(baseline, (obs[i].pose.center() - obs[0].pose.center()).norm());
  }
  if (!(baseline > 1e-12)) throw Error(ErrorKind::kDegenerate, "low parallax: camera centers coincide");

  Eigen::MatrixXd a(2 * obs.size(), 4);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    Eigen::Matrix<double, 3, 4> p;
    p << obs[i].pose.rotation_matrix(), obs[i].pose.translation;
    const Vec2 x = normalize_pixel(obs[i].pixel, k);
    a.row(2 * i) = x.x() * p.row(2) - p.row(0);
    a.row(2 * i + 1) = x.y() * p.row(2) - p.row(1);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (!(std::abs(h[3]) > 1e-14)) throw Error(ErrorKind::kDegenerate, "low parallax: point at infinity");
  Vec3 x = h.head<3>() / h[3];

  if (parallax_deg(x, obs) < kMinParallaxDeg) {
    throw Error(ErrorKind::kDegenerate, "low parallax: viewing rays differ by less than 1 degree");
  }
  auto in_front = [&](const Vec3& p) {
    return std::all_of(obs.begin(), obs.end(), [&](const Observation& o) {
      return (o.pose.rotation_matrix() * p + o.pose.translation).z() > geometry::kDepthEpsilon;
    });
  };
  if (!in_front(x)) throw Error(ErrorKind::kEstimationFailure, "cheirality: point behind a camera");

  // One Gauss-Newton step on pixel reprojection error.
  Mat3 jtj = Mat3::Zero();
  Vec3 jtr = Vec3::Zero();
  for (const auto& o : obs) {
    const Mat3 r = o.pose.rotation_matrix();
    const Vec3 pc = r * x + o.pose.translation;
    const double iz = 1.0 / pc.z();
    const Vec2 proj{k.fx * pc.x() * iz + k.cx, k.fy * pc.y() * iz + k.cy};
    Eigen::Matrix<double, 2, 3> dp;
    dp << k.fx * iz, 0, -k.fx * pc.x() * iz * iz, 0, k.fy * iz, -k.fy * pc.y() * iz * iz;
    const Eigen::Matrix<double, 2, 3> j = dp * r;
    const Vec2 res = o.pixel - proj;
    jtj += j.transpose() * j;
    jtr += j.transpose() * res;
  }
  const Eigen::LDLT<Mat3> ldlt(jtj);
  if (ldlt.info() == Eigen::Success) {
    const Vec3 step = ldlt.solve(jtr);
    if (step.allFinite() && in_front(x + step)) x += step;
  }
  return x;
}

}  // namespace jogs::sfm
