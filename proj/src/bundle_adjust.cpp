#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "jogs/error.hpp"
#include "jogs/sfm.hpp"

namespace jogs::sfm {
namespace {

using Mat23 = Eigen::Matrix<double, 2, 3>;

double huber(double r, double delta) {
  return r <= delta ? 0.5 * r * r : delta * (r - 0.5 * delta);
}

struct Projection {
  Vec2 pixel;
  Vec3 camera_point;
  bool valid;
};

Projection project_point(const CameraPose& pose, const Mat3& r, const Vec3& x, const CameraIntrinsics& k) {
  const Vec3 pc = r * x + pose.translation;
  if (!(pc.z() > geometry::kDepthEpsilon)) return {Vec2::Zero(), pc, false};
  return {{k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy}, pc, true};
}

// Two unit vectors spanning the plane orthogonal to n.
Eigen::Matrix<double, 3, 2> tangent_basis(const Vec3& n) {
  Vec3 helper = Vec3::UnitX();
  if (std::abs(n.x()) > std::abs(n.y()) || std::abs(n.x()) > std::abs(n.z())) {
    helper = std::abs(n.y()) < std::abs(n.z()) ? Vec3::UnitY() : Vec3::UnitZ();
  }
  const Vec3 e1 = n.cross(helper).normalized();
  const Vec3 e2 = n.cross(e1).normalized();
  Eigen::Matrix<double, 3, 2> b;
  b << e1, e2;
  return b;
}

struct CameraBlock {
  int image = 0;
  int offset = 0;
  int dim = 6;  // 5 when the translation norm is frozen
};

}  // namespace

std::pair<double, double> SfmReconstruction::reprojection_error(const CameraIntrinsics& k) const {
  double sum = 0.0, worst = 0.0;
  int count = 0;
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (const auto& o : tracks[p]) {
      const auto it = poses.find(o.image);
      if (it == poses.end()) continue;
      const Projection pr = project_point(it->second, it->second.rotation_matrix(), points[p], k);
      const double e = pr.valid ? (pr.pixel - o.pixel).norm() : std::numeric_limits<double>::infinity();
      sum += e;
      worst = std::max(worst, e);
      ++count;
    }
  }
  return {count ? sum / count : 0.0, worst};
}

double robust_cost(const SfmReconstruction& recon, const CameraIntrinsics& k, double huber_px) {
  std::map<int, Mat3> rotations;
  for (const auto& [img, pose] : recon.poses) rotations[img] = pose.rotation_matrix();
  double cost = 0.0;
  for (std::size_t p = 0; p < recon.points.size(); ++p) {
    for (const auto& o : recon.tracks[p]) {
      const auto it = recon.poses.find(o.image);
      if (it == recon.poses.end()) continue;
      const Projection pr = project_point(it->second, rotations[o.image], recon.points[p], k);
      if (!pr.valid) return std::numeric_limits<double>::infinity();
      cost += huber((pr.pixel - o.pixel).norm(), huber_px);
    }
  }
  return cost;
}

SfmReconstruction bundle_adjust(const SfmReconstruction& input, const CameraIntrinsics& k,
                                const BundleAdjustOptions& options, BundleAdjustReport* report) {
  if (input.poses.size() < 2) {
    throw Error(ErrorKind::kInsufficientData, "bundle adjustment needs >= 2 registered views");
  }
  if (input.tracks.size() != input.points.size()) {
    throw Error(ErrorKind::kInvalidArgument, "track count does not match point count");
  }
  const int reference = options.reference_image >= 0 ? options.reference_image : input.reference_image;
  if (!input.poses.count(reference)) {
    throw Error(ErrorKind::kInvalidArgument, "reference image is not registered");
  }
  int scale_image = options.scale_image;
  if (scale_image < 0) {
    for (const auto& [img, pose] : input.poses) {
      if (img != reference) {
        scale_image = img;
        break;
      }
    }
  }

  std::vector<CameraBlock> cameras;
  std::map<int, int> camera_of;  // image -> index into cameras
  int cam_params = 0;
  for (const auto& [img, pose] : input.poses) {
    if (img == reference) continue;
    CameraBlock b;
    b.image = img;
    b.offset = cam_params;
    b.dim = (img == scale_image && pose.translation.norm() > 1e-12) ? 5 : 6;
    camera_of[img] = static_cast<int>(cameras.size());
    cameras.push_back(b);
    cam_params += b.dim;
  }

  SfmReconstruction recon = input;
  BundleAdjustReport rep;
  double cost = robust_cost(recon, k, options.huber_px);
  if (!std::isfinite(cost)) {
    throw Error(ErrorKind::kInvalidArgument, "reconstruction has points behind a camera");
  }
  rep.initial_cost = cost;
  rep.cost_trace.push_back(cost);
  double lambda = options.initial_damping;

  const std::size_t n_points = recon.points.size();
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    ++rep.iterations;
    std::map<int, Mat3> rotations;
    std::map<int, Eigen::Matrix<double, 3, 2>> bases;
    for (const auto& [img, pose] : recon.poses) rotations[img] = pose.rotation_matrix();
    for (const auto& c : cameras) {
      if (c.dim == 5) bases[c.image] = tangent_basis(recon.poses[c.image].translation.normalized());
    }

    Eigen::MatrixXd hcc = Eigen::MatrixXd::Zero(cam_params, cam_params);
    Eigen::VectorXd gc = Eigen::VectorXd::Zero(cam_params);
    std::vector<Mat3> hpp(n_points, Mat3::Zero());
    std::vector<Vec3> gp(n_points, Vec3::Zero());
    std::vector<Eigen::MatrixXd> hcp(n_points);

    for (std::size_t p = 0; p < n_points; ++p) {
      hcp[p] = Eigen::MatrixXd::Zero(cam_params, 3);
      for (const auto& o : recon.tracks[p]) {
        const auto pit = recon.poses.find(o.image);
        if (pit == recon.poses.end()) continue;
        const CameraPose& pose = pit->second;
        const Mat3& r = rotations[o.image];
        const Projection pr = project_point(pose, r, recon.points[p], k);
        const Vec2 res = o.pixel - pr.pixel;
        const double norm = res.norm();
        const double w = norm <= options.huber_px ? 1.0 : options.huber_px / norm;

        const Vec3& pc = pr.camera_point;
        const double iz = 1.0 / pc.z();
        Mat23 dproj;
        dproj << k.fx * iz, 0, -k.fx * pc.x() * iz * iz, 0, k.fy * iz, -k.fy * pc.y() * iz * iz;
        const Mat23 jp = dproj * r;
        hpp[p] += w * jp.transpose() * jp;
        gp[p] += w * jp.transpose() * res;

        const auto cit = camera_of.find(o.image);
        if (cit == camera_of.end()) continue;
        const CameraBlock& cb = cameras[cit->second];
        const Mat26 full = geometry::projection_jacobian(recon.points[p], pose, k);
        Eigen::MatrixXd jc(2, cb.dim);
        if (cb.dim == 6) {
          jc = full;
        } else {
          jc.leftCols(3) = full.leftCols(3);
          jc.rightCols(2) = full.rightCols(3) * bases[o.image];
        }
        hcc.block(cb.offset, cb.offset, cb.dim, cb.dim) += w * jc.transpose() * jc;
        gc.segment(cb.offset, cb.dim) += w * jc.transpose() * res;
        hcp[p].middleRows(cb.offset, cb.dim) += w * jc.transpose() * jp;
      }
    }

    bool accepted = false;
    int attempts = 0, solve_failures = 0;
    for (; attempts < 12 && !accepted; ++attempts) {
      // Schur complement on the point blocks.
      Eigen::MatrixXd s = hcc;
      for (int i = 0; i < cam_params; ++i) s(i, i) += lambda * std::max(hcc(i, i), 1e-12);
      Eigen::VectorXd rhs = gc;
      std::vector<Mat3> vinv(n_points);
      bool ok = true;
      for (std::size_t p = 0; p < n_points && ok; ++p) {
        Mat3 v = hpp[p];
        for (int i = 0; i < 3; ++i) v(i, i) += lambda * std::max(hpp[p](i, i), 1e-12);
        const Eigen::LDLT<Mat3> ldlt(v);
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 0.0)) {
          ok = hpp[p].isZero(0.0);  // unobserved point: leave it alone
          vinv[p] = Mat3::Zero();
          continue;
        }
        vinv[p] = ldlt.solve(Mat3::Identity());
        if (cam_params > 0) {
          const Eigen::MatrixXd wv = hcp[p] * vinv[p];
          s.noalias() -= wv * hcp[p].transpose();
          rhs.noalias() -= wv * gp[p];
        }
      }
      Eigen::VectorXd dc = Eigen::VectorXd::Zero(cam_params);
      if (ok && cam_params > 0) {
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
        ok = ldlt.info() == Eigen::Success && ldlt.vectorD().minCoeff() > 0.0;
        if (ok) dc = ldlt.solve(rhs);
        ok = ok && dc.allFinite();
      }
      if (!ok) {
        ++solve_failures;
        lambda = std::max(lambda * 10.0, 1e-6);
        continue;
      }

      SfmReconstruction candidate = recon;
      for (const auto& c : cameras) {
        CameraPose& pose = candidate.poses[c.image];
        const Eigen::VectorXd d = dc.segment(c.offset, c.dim);
        if (c.dim == 6) {
          pose = geometry::apply_increment(pose, Vec6(d));
        } else {
          const double norm = pose.translation.norm();
          Vec6 rot_only = Vec6::Zero();
          rot_only.head<3>() = d.head<3>();
          const Vec3 t = pose.translation + bases[c.image] * d.tail<2>();
          pose = geometry::apply_increment(pose, rot_only);
          pose.translation = norm * t.normalized();
        }
      }
      double step_norm = dc.squaredNorm();
      for (std::size_t p = 0; p < n_points; ++p) {
        const Vec3 dp = vinv[p] * (gp[p] - (cam_params > 0 ? Vec3(hcp[p].transpose() * dc) : Vec3::Zero()));
        candidate.points[p] += dp;
        step_norm += dp.squaredNorm();
      }
      const double new_cost = robust_cost(candidate, k, options.huber_px);
      if (new_cost <= cost) {
        const double decrease = cost - new_cost;
        recon = std::move(candidate);
        cost = new_cost;
        rep.cost_trace.push_back(cost);
        ++rep.accepted_steps;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (decrease <= options.function_tolerance * std::max(cost, 1e-12) || std::sqrt(step_norm) < 1e-12) {
          iter = options.max_iterations;  // converged
        }
      } else {
        lambda = std::max(lambda * 10.0, 1e-6);
      }
    }
    if (!accepted) {
      if (solve_failures < attempts) break;  // no further descent available
      throw Error(ErrorKind::kRankDeficient,
                  "bundle adjustment normal equations could not be solved (damping " +
                      std::to_string(lambda) + ")");
    }
  }
  rep.final_cost = cost;
  if (report) *report = rep;
  return recon;
}

}  // namespace jogs::sfm
