#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "jogs/error.hpp"
#include "jogs/splat.hpp"

namespace jogs::splat {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

Mat3 quaternion_to_rotation(const Vec4& q_raw) {
  const Vec4 q = q_raw.normalized();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

double GaussianPrimitive::opacity() const { return sigmoid(opacity_logit); }

Mat3 GaussianPrimitive::covariance() const {
  const Mat3 r = quaternion_to_rotation(rotation);
  const Vec3 s2 = (2.0 * log_scale).array().exp();
  return r * s2.asDiagonal() * r.transpose();
}

namespace {

struct Projection {
  Vec3 pc = Vec3::Zero();
  Eigen::Matrix<double, 2, 3> jacobian = Eigen::Matrix<double, 2, 3>::Zero();
  ProjectedGaussian screen;
  Mat2 conic = Mat2::Zero();
};

Projection project_full(const GaussianPrimitive& g, const Mat3& world_to_cam, const Vec3& t,
                        const CameraIntrinsics& k) {
  Projection p;
  p.pc = world_to_cam * g.position + t;
  p.screen.depth = p.pc.z();
  if (!(p.pc.z() > kNearPlane)) return p;
  const double z = p.pc.z();
  const double inv_z = 1.0 / z;
  p.jacobian << k.fx * inv_z, 0.0, -k.fx * p.pc.x() * inv_z * inv_z,
                0.0, k.fy * inv_z, -k.fy * p.pc.y() * inv_z * inv_z;
  const Eigen::Matrix<double, 2, 3> jw = p.jacobian * world_to_cam;
  p.screen.cov = jw * g.covariance() * jw.transpose() + kCovarianceDilation * Mat2::Identity();
  p.screen.mean = {k.fx * p.pc.x() * inv_z + k.cx, k.fy * p.pc.y() * inv_z + k.cy};
  p.screen.culled = false;
  p.conic = p.screen.cov.inverse();
  return p;
}

// One (Gaussian, pixel) blend event, recorded in compositing order.
struct Contribution {
  int gaussian;
  int pixel;
  double transmittance;  // before this Gaussian
  double falloff;        // G(p)
};

struct ForwardState {
  std::vector<Projection> projections;
  std::vector<int> order;  // front-to-back
  std::vector<Contribution> contributions;
  RenderOutput output;
};

// Sorted front-to-back; stable_sort keeps input order for equal depths.
std::vector<int> depth_order(const std::vector<Projection>& projections) {
  std::vector<int> order;
  order.reserve(projections.size());
  for (int i = 0; i < static_cast<int>(projections.size()); ++i) {
    if (!projections[i].screen.culled) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return projections[a].screen.depth < projections[b].screen.depth;
  });
  return order;
}

ForwardState forward(const GaussianCloud& cloud, const CameraPose& pose,
                     const CameraIntrinsics& k, bool record) {
  k.validate();
  ForwardState st;
  const Mat3 w = pose.rotation_matrix();
  const int n = static_cast<int>(cloud.size());
  st.projections.reserve(n);
  for (const auto& g : cloud.gaussians) {
    st.projections.push_back(project_full(g, w, pose.translation, k));
  }
  st.order = depth_order(st.projections);

  const int width = k.width, height = k.height;
  RenderOutput& out = st.output;
  out.image = ImageBuffer(width, height, 0.0);
  out.per_pixel_alpha.assign(static_cast<std::size_t>(width) * height, 0.0);
  out.visibility.assign(n, 0.0);
  out.radius.assign(n, 0.0);
  std::vector<double> transmittance(static_cast<std::size_t>(width) * height, 1.0);
  auto& img = out.image.data();
  constexpr double cutoff = kTruncationSigma * kTruncationSigma;

  for (int gi : st.order) {
    const Projection& p = st.projections[gi];
    const Vec2& mu = p.screen.mean;
    const double rx = kTruncationSigma * std::sqrt(p.screen.cov(0, 0));
    const double ry = kTruncationSigma * std::sqrt(p.screen.cov(1, 1));
    out.radius[gi] = kTruncationSigma * std::sqrt(p.screen.cov.eigenvalues().real().maxCoeff());
    const int x0 = std::max(0, static_cast<int>(std::ceil(mu.x() - rx)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(mu.x() + rx)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(mu.y() - ry)));
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(mu.y() + ry)));
    if (x0 > x1 || y0 > y1) continue;
    const auto& g = cloud.gaussians[gi];
    const double alpha = g.opacity();
    const double a = p.conic(0, 0), b = p.conic(0, 1), c = p.conic(1, 1);
    for (int y = y0; y <= y1; ++y) {
      const double dy = y - mu.y();
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - mu.x();
        const double m2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
        if (m2 > cutoff) continue;
        const double falloff = std::exp(-0.5 * m2);
        const double weight = alpha * falloff;
        const int pix = y * width + x;
        const double t = transmittance[pix];
        const double blend = weight * t;
        img[3 * pix] += g.color[0] * blend;
        img[3 * pix + 1] += g.color[1] * blend;
        img[3 * pix + 2] += g.color[2] * blend;
        out.visibility[gi] = std::max(out.visibility[gi], blend);
        transmittance[pix] = t * (1.0 - weight);
        if (record) st.contributions.push_back({gi, pix, t, falloff});
      }
    }
  }
  for (std::size_t pix = 0; pix < transmittance.size(); ++pix) {
    out.per_pixel_alpha[pix] = 1.0 - transmittance[pix];
  }
  return st;
}

// d R(q) / d q for the normalized quaternion, contracted with dL/dR.
Vec4 rotation_grad_to_quaternion(const Vec4& q_raw, const Mat3& g) {
  const double norm = q_raw.norm();
  const Vec4 q = q_raw / norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Vec4 dq;
  dq[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  dq[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
               z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
  dq[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
               w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
  dq[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
               y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  // Through q / |q|.
  return (dq - q * q.dot(dq)) / norm;
}

}  // namespace

ProjectedGaussian project_gaussian(const GaussianPrimitive& g, const CameraPose& pose,
                                   const CameraIntrinsics& intrinsics) {
  return project_full(g, pose.rotation_matrix(), pose.translation, intrinsics).screen;
}

RenderOutput render(const GaussianCloud& cloud, const CameraPose& pose,
                    const CameraIntrinsics& intrinsics) {
  return forward(cloud, pose, intrinsics, false).output;
}

std::vector<GaussianGradient> render_backward(const GaussianCloud& cloud, const CameraPose& pose,
                                              const CameraIntrinsics& k,
                                              const ImageBuffer& d_image) {
  if (d_image.width() != k.width || d_image.height() != k.height) {
    throw Error(ErrorKind::kInvalidArgument, "gradient image size does not match intrinsics");
  }
  const ForwardState st = forward(cloud, pose, k, true);
  const std::size_t n = cloud.size();
  std::vector<GaussianGradient> grads(n);
  std::vector<Mat2> d_conic(n, Mat2::Zero());
  std::vector<double> d_alpha(n, 0.0);

  const auto& dimg = d_image.data();
  std::vector<double> behind(static_cast<std::size_t>(k.width) * k.height * 3, 0.0);
  for (auto it = st.contributions.rbegin(); it != st.contributions.rend(); ++it) {
    const int gi = it->gaussian;
    const int pix = it->pixel;
    const auto& g = cloud.gaussians[gi];
    const Projection& p = st.projections[gi];
    const double alpha = g.opacity();
    const double weight = alpha * it->falloff;
    const double t = it->transmittance;
    double d_weight = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double up = dimg[3 * pix + c];
      double& b = behind[3 * pix + c];
      grads[gi].color[c] += weight * t * up;
      d_weight += t * (g.color[c] - b) * up;
      b = g.color[c] * weight + (1.0 - weight) * b;
    }
    if (d_weight == 0.0) continue;
    d_alpha[gi] += it->falloff * d_weight;
    const double d_power = alpha * d_weight * it->falloff;
    const Vec2 d{pix % k.width - p.screen.mean.x(), pix / k.width - p.screen.mean.y()};
    grads[gi].mean2d += d_power * (p.conic * d);
    d_conic[gi] += -0.5 * d_power * (d * d.transpose());
  }

  const Mat3 w = pose.rotation_matrix();
  for (std::size_t gi = 0; gi < n; ++gi) {
    const Projection& p = st.projections[gi];
    if (p.screen.culled) continue;
    const auto& g = cloud.gaussians[gi];
    GaussianGradient& out = grads[gi];
    const double alpha = g.opacity();
    out.opacity_logit = d_alpha[gi] * alpha * (1.0 - alpha);

    const Mat2 d_cov = -p.conic * d_conic[gi] * p.conic;
    const Eigen::Matrix<double, 2, 3> jw = p.jacobian * w;
    const Mat3 sigma = g.covariance();
    Mat3 d_sigma = jw.transpose() * d_cov * jw;
    d_sigma = 0.5 * (d_sigma + d_sigma.transpose());
    const Eigen::Matrix<double, 2, 3> d_jw = 2.0 * d_cov * jw * sigma;
    const Eigen::Matrix<double, 2, 3> d_j = d_jw * w.transpose();

    const double x = p.pc.x(), y = p.pc.y(), z = p.pc.z();
    const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;
    Vec3 d_pc = p.jacobian.transpose() * out.mean2d;
    d_pc.x() += d_j(0, 2) * (-k.fx * iz2);
    d_pc.y() += d_j(1, 2) * (-k.fy * iz2);
    d_pc.z() += d_j(0, 0) * (-k.fx * iz2) + d_j(0, 2) * (2.0 * k.fx * x * iz3) +
                d_j(1, 1) * (-k.fy * iz2) + d_j(1, 2) * (2.0 * k.fy * y * iz3);
    out.position = w.transpose() * d_pc;

    const Mat3 rq = quaternion_to_rotation(g.rotation);
    const Vec3 s = g.log_scale.array().exp();
    const Mat3 m = rq * s.asDiagonal();
    const Mat3 d_m = 2.0 * d_sigma * m;
    Mat3 d_rq;
    for (int j = 0; j < 3; ++j) {
      d_rq.col(j) = d_m.col(j) * s[j];
      out.log_scale[j] = rq.col(j).dot(d_m.col(j)) * s[j];
    }
    out.rotation = rotation_grad_to_quaternion(g.rotation, d_rq);
  }
  return grads;
}

}  // namespace jogs::splat
