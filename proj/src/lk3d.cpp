#include "jogs/lk3d.hpp"

#include <cmath>
#include <thread>

#include <Eigen/Dense>

#include "jogs/error.hpp"

namespace jogs::lk3d {

void LkConfig::validate() const {
  if (max_iterations < 1) throw Error(ErrorKind::kConfig, "LK max_iterations must be >= 1");
  if (!(step_scale > 0.0)) throw Error(ErrorKind::kConfig, "LK step_scale must be > 0");
  if (!(damping >= 0.0)) throw Error(ErrorKind::kConfig, "LK damping must be >= 0");
  if (!(convergence_tol >= 0.0)) throw Error(ErrorKind::kConfig, "LK convergence_tol must be >= 0");
}

ImageGradient image_gradient(const ImageBuffer& image) {
  const int w = image.width(), h = image.height();
  if (w < 3 || h < 3) {
    throw Error(ErrorKind::kInvalidArgument, "image gradient needs at least 3x3 pixels");
  }
  ImageGradient g{ImageBuffer(w, h), ImageBuffer(w, h)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double du;
        if (x == 0) {
          du = image.at(1, y, c) - image.at(0, y, c);
        } else if (x == w - 1) {
          du = image.at(w - 1, y, c) - image.at(w - 2, y, c);
        } else {
          du = 0.5 * (image.at(x + 1, y, c) - image.at(x - 1, y, c));
        }
        double dv;
        if (y == 0) {
          dv = image.at(x, 1, c) - image.at(x, 0, c);
        } else if (y == h - 1) {
          dv = image.at(x, h - 1, c) - image.at(x, h - 2, c);
        } else {
          dv = 0.5 * (image.at(x, y + 1, c) - image.at(x, y - 1, c));
        }
        g.du.at(x, y, c) = du;
        g.dv.at(x, y, c) = dv;
      }
    }
  }
  return g;
}

std::optional<Rgb> sample_bilinear(const ImageBuffer& image, const Vec2& pixel) {
  const int w = image.width(), h = image.height();
  const double x = pixel.x(), y = pixel.y();
  if (!(x >= 0.0 && y >= 0.0 && x <= w - 1 && y <= h - 1) || w < 2 || h < 2) {
    return std::nullopt;
  }
  const int x0 = std::min(static_cast<int>(x), w - 2);
  const int y0 = std::min(static_cast<int>(y), h - 2);
  const double fx = x - x0, fy = y - y0;
  Rgb out{};
  for (int c = 0; c < 3; ++c) {
    out[c] = (1 - fx) * (1 - fy) * image.at(x0, y0, c) + fx * (1 - fy) * image.at(x0 + 1, y0, c) +
             (1 - fx) * fy * image.at(x0, y0 + 1, c) + fx * fy * image.at(x0 + 1, y0 + 1, c);
  }
  return out;
}

namespace {

struct Sample {
  Vec2 pixel;
  Rgb color;
};

// Projection + lookup shared by residual construction and cost evaluation.
std::optional<Sample> sample_gaussian(const splat::GaussianPrimitive& g, const Mat3& r,
                                      const CameraPose& pose, const CameraIntrinsics& k,
                                      const ImageBuffer& image) {
  const Vec3 pc = r * g.position + pose.translation;
  if (!(pc.z() > geometry::kDepthEpsilon)) return std::nullopt;
  const Vec2 pixel{k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy};
  auto color = sample_bilinear(image, pixel);
  if (!color) return std::nullopt;
  return Sample{pixel, *color};
}

bool gated(std::span<const double> visibility, std::size_t i, double threshold) {
  return i < visibility.size() && visibility[i] >= threshold;
}

}  // namespace

ResidualSet build_residuals(const splat::GaussianCloud& cloud, const CameraPose& pose,
                            const CameraIntrinsics& k, const ImageBuffer& image,
                            const ImageGradient& gradients, const LkConfig& config,
                            std::span<const double> visibility) {
  if (!gradients.du.same_shape(image) || !gradients.dv.same_shape(image)) {
    throw Error(ErrorKind::kInvalidArgument, "gradient maps do not match the image");
  }
  const Mat3 r = pose.rotation_matrix();
  ResidualSet out;
  out.residuals.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    LkResidual& res = out.residuals[i];
    res.gaussian_index = static_cast<int>(i);
    if (!gated(visibility, i, config.visibility_threshold)) continue;
    const auto& g = cloud.gaussians[i];
    const auto sample = sample_gaussian(g, r, pose, k, image);
    if (!sample) continue;
    const auto du = sample_bilinear(gradients.du, sample->pixel);
    const auto dv = sample_bilinear(gradients.dv, sample->pixel);
    const Mat26 j = geometry::projection_jacobian(g.position, pose, k);
    for (int c = 0; c < 3; ++c) {
      res.residual[c] = g.color[c] - sample->color[c];
      res.steepest.row(c) = (*du)[c] * j.row(0) + (*dv)[c] * j.row(1);
    }
    res.weight = 1.0;
    ++out.active;
  }
  return out;
}

ResidualSet build_residuals(const splat::GaussianCloud& cloud, const CameraPose& pose,
                            const CameraIntrinsics& intrinsics, const ImageBuffer& image,
                            const ImageGradient& gradients, const LkConfig& config) {
  const auto rendered = splat::render(cloud, pose, intrinsics);
  return build_residuals(cloud, pose, intrinsics, image, gradients, config, rendered.visibility);
}

NormalEquations assemble_normal_equations(std::span<const LkResidual> residuals) {
  NormalEquations ne;
  bool any = false;
  for (const auto& r : residuals) {
    if (r.weight <= 0.0) continue;
    any = true;
    ne.hessian.noalias() += r.weight * (r.steepest.transpose() * r.steepest);
    ne.rhs.noalias() += r.weight * (r.steepest.transpose() * r.residual);
  }
  if (!any) throw Error(ErrorKind::kNoConstraint, "every residual has zero weight");
  return ne;
}

Vec6 solve_increment(const Mat6& hessian, const Vec6& rhs, double damping) {
  double lambda = damping;
  for (int attempt = 0; attempt <= 4; ++attempt, lambda *= 10.0) {
    Mat6 a = hessian;
    a.diagonal() += lambda * hessian.diagonal();
    const Eigen::LDLT<Mat6> ldlt(a);
    if (ldlt.info() != Eigen::Success) continue;
    const Vec6 d = ldlt.vectorD();
    const double d_max = d.cwiseAbs().maxCoeff();
    if (!(d_max > 0.0) || d.minCoeff() <= 1e-12 * d_max) continue;
    const Vec6 x = ldlt.solve(rhs);
    if (x.allFinite()) return x;
  }
  throw Error(ErrorKind::kRankDeficient, "normal equations are singular");
}

double photometric_cost(const splat::GaussianCloud& cloud, const CameraPose& pose,
                        const CameraIntrinsics& k, const ImageBuffer& image,
                        std::span<const double> visibility, double visibility_threshold) {
  const Mat3 r = pose.rotation_matrix();
  double cost = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!gated(visibility, i, visibility_threshold)) continue;
    const auto& g = cloud.gaussians[i];
    const auto sample = sample_gaussian(g, r, pose, k, image);
    if (!sample) continue;
    for (int c = 0; c < 3; ++c) {
      const double l = g.color[c] - sample->color[c];
      cost += l * l;
    }
  }
  return cost;
}

LkResult refine_pose(const splat::GaussianCloud& cloud, const CameraPose& initial,
                     const CameraIntrinsics& k, const ImageBuffer& image, const LkConfig& config) {
  config.validate();
  if (image.width() != k.width || image.height() != k.height) {
    throw Error(ErrorKind::kInvalidArgument, "image size does not match intrinsics");
  }
  LkResult result{initial, {}};
  LkDiagnostics& diag = result.diagnostics;
  if (cloud.empty()) {
    diag.warnings.push_back("empty cloud; pose unchanged");
    return result;
  }
  // Occlusion gate is fixed for the whole call so the cost stays comparable.
  const auto visibility = splat::render(cloud, initial, k).visibility;
  const ImageGradient gradients = image_gradient(image);

  CameraPose pose = initial;
  double cost = photometric_cost(cloud, pose, k, image, visibility, config.visibility_threshold);
  diag.cost_trace.push_back(cost);
  double lambda = config.damping;

  for (int it = 0; it < config.max_iterations; ++it) {
    const ResidualSet rs = build_residuals(cloud, pose, k, image, gradients, config, visibility);
    if (rs.all_excluded()) {
      diag.warnings.push_back("no visible Gaussians; pose unchanged");
      break;
    }
    const NormalEquations ne = assemble_normal_equations(rs.residuals);
    Vec6 delta;
    try {
      delta = solve_increment(ne.hessian, ne.rhs, lambda);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kRankDeficient) throw;
      diag.warnings.push_back("normal equations singular (textureless or degenerate view)");
      break;
    }
    ++diag.iterations;
    const bool small = delta.norm() < config.convergence_tol;
    CameraPose candidate = geometry::apply_increment(pose, delta, config.step_scale);
    candidate.rotation = geometry::canonicalize(candidate.rotation);
    const double candidate_cost =
        photometric_cost(cloud, candidate, k, image, visibility, config.visibility_threshold);
    if (candidate_cost <= cost) {
      pose = candidate;
      cost = candidate_cost;
      diag.cost_trace.push_back(cost);
      ++diag.accepted_steps;
      lambda *= 0.1;
    } else {
      ++diag.rejected_steps;
      lambda = lambda > 0.0 ? lambda * 10.0 : 1e-4;
    }
    if (small) {
      diag.converged = true;
      break;
    }
    if (lambda > 1e12) {
      diag.converged = true;  // no descent direction left at this damping
      break;
    }
  }
  result.pose = pose;
  return result;
}

MultiPoseResult refine_all_poses(const splat::GaussianCloud& cloud,
                                 std::span<const CameraPose> poses, const CameraIntrinsics& k,
                                 std::span<const ImageBuffer> images, const LkConfig& config,
                                 int threads) {
  if (poses.size() != images.size()) {
    throw Error(ErrorKind::kInvalidArgument, "need exactly one image per pose");
  }
  const std::size_t n = poses.size();
  std::vector<LkResult> results(n);
  std::vector<std::exception_ptr> errors(n);
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n; i += stride) {
      try {
        results[i] = refine_pose(cloud, poses[i], k, images[i], config);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(work, t, workers);
  }
  MultiPoseResult out;
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.poses.push_back(results[i].pose);
    for (const auto& w : results[i].diagnostics.warnings) {
      out.warnings.push_back("pose " + std::to_string(i) + ": " + w);
    }
    out.diagnostics.push_back(std::move(results[i].diagnostics));
  }
  return out;
}

}  // namespace jogs::lk3d
