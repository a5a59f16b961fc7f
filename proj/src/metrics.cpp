#include "jogs/metrics.hpp"

#include <cmath>
#include <numbers>
#include <set>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "jogs/error.hpp"

namespace jogs::metrics {
namespace {

std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> k{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Valid-mode separable filter: out is (w-10) x (h-10).
std::vector<double> filter_valid(const std::vector<double>& in, int w, int h) {
  const auto k = ssim_kernel();
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) s += k[i] * in[y * w + x + i];
      tmp[y * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < kSsimWindow; ++i) s += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  }
  return out;
}

// Adjoint of filter_valid: spreads an (w-10) x (h-10) map back to w x h.
std::vector<double> scatter_full(const std::vector<double>& in, int w, int h) {
  const auto k = ssim_kernel();
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const double v = in[y * ow + x];
      for (int i = 0; i < kSsimWindow; ++i) tmp[(y + i) * ow + x] += k[i] * v;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      const double v = tmp[y * ow + x];
      for (int i = 0; i < kSsimWindow; ++i) out[y * w + x + i] += k[i] * v;
    }
  }
  return out;
}

std::vector<double> channel(const ImageBuffer& img, int c) {
  std::vector<double> out(static_cast<std::size_t>(img.width()) * img.height());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = img.data()[3 * p + c];
  return out;
}

Eigen::Isometry3d camera_to_world(const CameraPose& pose) {
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  const Mat3 r = pose.rotation_matrix();
  t.linear() = r.transpose();
  t.translation() = -(r.transpose() * pose.translation);
  return t;
}

}  // namespace

double compute_psnr(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b) || a.empty()) {
    throw Error(ErrorKind::kInvalidArgument, "PSNR needs two non-empty images of equal shape");
  }
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrInfinity;
  return -10.0 * std::log10(mse);
}

double compute_ssim(const ImageBuffer& a, const ImageBuffer& b) {
  return compute_ssim(a, b, nullptr);
}

double compute_ssim(const ImageBuffer& a, const ImageBuffer& b, ImageBuffer* grad_a) {
  if (!a.same_shape(b)) {
    throw Error(ErrorKind::kInvalidArgument, "SSIM needs images of equal shape");
  }
  const int w = a.width(), h = a.height();
  if (w < kSsimWindow || h < kSsimWindow) {
    throw Error(ErrorKind::kInvalidArgument, "SSIM needs images of at least 11x11");
  }
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
  const double norm = 1.0 / (3.0 * ow * oh);
  if (grad_a) *grad_a = ImageBuffer(w, h, 0.0);

  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    const auto x = channel(a, c);
    const auto y = channel(b, c);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, w, h);
    const auto my = filter_valid(y, w, h);
    const auto sxx = filter_valid(xx, w, h);
    const auto syy = filter_valid(yy, w, h);
    const auto sxy = filter_valid(xy, w, h);

    std::vector<double> coef_const, coef_x, coef_y;
    if (grad_a) {
      coef_const.resize(mx.size());
      coef_x.resize(mx.size());
      coef_y.resize(mx.size());
    }
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double var_x = sxx[i] - mx[i] * mx[i];
      const double var_y = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      const double a1 = 2.0 * mx[i] * my[i] + kSsimC1;
      const double a2 = 2.0 * cov + kSsimC2;
      const double b1 = mx[i] * mx[i] + my[i] * my[i] + kSsimC1;
      const double b2 = var_x + var_y + kSsimC2;
      const double s = a1 * a2 / (b1 * b2);
      total += s;
      if (grad_a) {
        const double d_mu = 2.0 * my[i] * a2 / (b1 * b2) - s * 2.0 * mx[i] / b1;
        const double d_var = -s / b2;
        const double d_cov = 2.0 * a1 / (b1 * b2);
        coef_const[i] = (d_mu - 2.0 * mx[i] * d_var - my[i] * d_cov) * norm;
        coef_x[i] = 2.0 * d_var * norm;
        coef_y[i] = d_cov * norm;
      }
    }
    if (grad_a) {
      const auto g0 = scatter_full(coef_const, w, h);
      const auto gx = scatter_full(coef_x, w, h);
      const auto gy = scatter_full(coef_y, w, h);
      auto& out = grad_a->data();
      for (std::size_t p = 0; p < x.size(); ++p) {
        out[3 * p + c] = g0[p] + gx[p] * x[p] + gy[p] * y[p];
      }
    }
  }
  return total * norm;
}

void Trajectory::validate() const {
  if (!ids.empty()) {
    if (ids.size() != poses.size()) {
      throw Error(ErrorKind::kInvalidArgument, "trajectory id count does not match pose count");
    }
    std::set<std::string> seen(ids.begin(), ids.end());
    if (seen.size() != ids.size()) {
      throw Error(ErrorKind::kInvalidArgument, "trajectory ids must be unique");
    }
  }
}

AlignmentResult umeyama_points(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.size() != dst.size()) {
    throw Error(ErrorKind::kInvalidArgument, "alignment needs equally sized point sets");
  }
  const std::size_t n = src.size();
  if (n < 3) {
    throw Error(ErrorKind::kInsufficientData, "alignment needs at least 3 points");
  }
  Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mu_s += src[i];
    mu_d += dst[i];
  }
  mu_s /= static_cast<double>(n);
  mu_d /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  Mat3 src_scatter = Mat3::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 ds = src[i] - mu_s;
    cov += (dst[i] - mu_d) * ds.transpose();
    src_scatter += ds * ds.transpose();
    var_s += ds.squaredNorm();
  }
  cov /= static_cast<double>(n);
  var_s /= static_cast<double>(n);

  const Eigen::SelfAdjointEigenSolver<Mat3> scatter_eig(src_scatter);
  const Vec3 ev = scatter_eig.eigenvalues();  // ascending
  if (!(ev[2] > 0.0) || ev[1] <= 1e-12 * ev[2]) {
    throw Error(ErrorKind::kDegenerate, "camera centers are collinear or coincident");
  }

  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;
  AlignmentResult out;
  out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  out.scale = (svd.singularValues().asDiagonal() * s).trace() / var_s;
  out.translation = mu_d - out.scale * out.rotation * mu_s;
  return out;
}

AlignmentResult umeyama_align(const Trajectory& estimated, const Trajectory& reference) {
  if (estimated.size() != reference.size()) {
    throw Error(ErrorKind::kInvalidArgument, "trajectories differ in length");
  }
  std::vector<Vec3> src, dst;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    src.push_back(estimated.poses[i].center());
    dst.push_back(reference.poses[i].center());
  }
  return umeyama_points(src, dst);
}

Trajectory transform_trajectory(const Trajectory& t, const AlignmentResult& sim) {
  Trajectory out = t;
  for (auto& pose : out.poses) {
    const Vec3 c = sim.apply(pose.center());
    const Mat3 r = pose.rotation_matrix() * sim.rotation.transpose();
    pose = geometry::pose_from_rt(r, -(r * c));
  }
  return out;
}

double compute_ate(const Trajectory& estimated, const Trajectory& reference) {
  const AlignmentResult sim = umeyama_align(estimated, reference);
  double sum = 0.0;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    sum += (sim.apply(estimated.poses[i].center()) - reference.poses[i].center()).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(estimated.size()));
}

RpeResult compute_rpe(const Trajectory& estimated, const Trajectory& reference, int delta) {
  if (estimated.size() != reference.size()) {
    throw Error(ErrorKind::kInvalidArgument, "trajectories differ in length");
  }
  if (delta < 1 || estimated.size() <= static_cast<std::size_t>(delta)) {
    throw Error(ErrorKind::kInsufficientData, "trajectory too short for the requested RPE step");
  }
  double sum_t = 0.0, sum_r = 0.0;
  const std::size_t pairs = estimated.size() - delta;
  for (std::size_t i = 0; i < pairs; ++i) {
    const Eigen::Isometry3d est_rel =
        camera_to_world(estimated.poses[i]).inverse() * camera_to_world(estimated.poses[i + delta]);
    const Eigen::Isometry3d ref_rel =
        camera_to_world(reference.poses[i]).inverse() * camera_to_world(reference.poses[i + delta]);
    const Eigen::Isometry3d err = ref_rel.inverse() * est_rel;
    sum_t += err.translation().squaredNorm();
    const double angle =
        geometry::rotation_angle_between(Mat3::Identity(), err.linear()) * 180.0 / std::numbers::pi;
    sum_r += angle * angle;
  }
  return {std::sqrt(sum_t / pairs), std::sqrt(sum_r / pairs)};
}

}  // namespace jogs::metrics
