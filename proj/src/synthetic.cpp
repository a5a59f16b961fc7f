#include "jogs/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Geometry>

#include "jogs/error.hpp"

namespace jogs::synthetic {

void SyntheticSceneSpec::validate() const {
  if (gaussian_count < 1) throw Error(ErrorKind::kConfig, "gaussian_count must be >= 1");
  if (width < 3 || height < 3) throw Error(ErrorKind::kConfig, "image must be at least 3x3");
  if (view_count < 1) throw Error(ErrorKind::kConfig, "view_count must be >= 1");
  if (!(fov_deg > 0.0 && fov_deg < 170.0)) throw Error(ErrorKind::kConfig, "fov_deg out of range");
  if (!(orbit_radius > scene_radius)) {
    throw Error(ErrorKind::kConfig, "orbit_radius must exceed scene_radius");
  }
  if (!(scene_radius > 0.0) || !(gaussian_scale > 0.0)) {
    throw Error(ErrorKind::kConfig, "scene_radius and gaussian_scale must be positive");
  }
  if (!(opacity > 0.0 && opacity < 1.0)) throw Error(ErrorKind::kConfig, "opacity must be in (0,1)");
  if (!(noise_level >= 0.0)) throw Error(ErrorKind::kConfig, "noise_level must be >= 0");
  if (layout != "volume" && layout != "surface") {
    throw Error(ErrorKind::kConfig, "layout must be 'volume' or 'surface'");
  }
  if (!(relief >= 0.0)) throw Error(ErrorKind::kConfig, "relief must be >= 0");
  if (!(color_jitter >= 0.0)) throw Error(ErrorKind::kConfig, "color_jitter must be >= 0");
}

SyntheticSceneSpec SyntheticSceneSpec::from_map(const std::map<std::string, std::string>& kv) {
  SyntheticSceneSpec s;
  for (const auto& [key, value] : kv) {
    try {
      if (key == "gaussian_count") s.gaussian_count = std::stoi(value);
      else if (key == "width") s.width = std::stoi(value);
      else if (key == "height") s.height = std::stoi(value);
      else if (key == "view_count") s.view_count = std::stoi(value);
      else if (key == "fov_deg") s.fov_deg = std::stod(value);
      else if (key == "orbit_radius") s.orbit_radius = std::stod(value);
      else if (key == "orbit_arc_deg") s.orbit_arc_deg = std::stod(value);
      else if (key == "elevation_deg") s.elevation_deg = std::stod(value);
      else if (key == "scene_radius") s.scene_radius = std::stod(value);
      else if (key == "texture_frequency") s.texture_frequency = std::stod(value);
      else if (key == "gaussian_scale") s.gaussian_scale = std::stod(value);
      else if (key == "opacity") s.opacity = std::stod(value);
      else if (key == "noise_level") s.noise_level = std::stod(value);
      else if (key == "seed") s.seed = std::stoull(value);
      else if (key == "layout") s.layout = value;
      else if (key == "relief") s.relief = std::stod(value);
      else if (key == "color_jitter") s.color_jitter = std::stod(value);
      else throw Error(ErrorKind::kConfig, "unknown synthetic scene key '" + key + "'");
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::kConfig, "bad value for '" + key + "': " + value);
    }
  }
  s.validate();
  return s;
}

CameraIntrinsics intrinsics_for(int width, int height, double fov_deg) {
  const double f = 0.5 * width / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
  return {f, f, 0.5 * (width - 1), 0.5 * (height - 1), width, height};
}

CameraPose look_at(const Vec3& center, const Vec3& target) {
  const Vec3 forward = (target - center).normalized();
  Vec3 down{0.0, 1.0, 0.0};
  if (std::abs(forward.dot(down)) > 0.999) down = {0.0, 0.0, 1.0};
  const Vec3 right = down.cross(forward).normalized();
  const Vec3 cam_down = forward.cross(right);
  Mat3 c2w;
  c2w.col(0) = right;
  c2w.col(1) = cam_down;
  c2w.col(2) = forward;
  const Mat3 w2c = c2w.transpose();
  return geometry::pose_from_rt(w2c, -(w2c * center));
}

SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  SyntheticScene scene;
  scene.intrinsics = intrinsics_for(spec.width, spec.height, spec.fov_deg);

  // Smooth color field: three plane waves per channel with random directions.
  struct Wave {
    Vec3 direction;
    double phase;
  };
  std::array<std::array<Wave, 2>, 3> waves;
  for (auto& channel : waves) {
    for (auto& wave : channel) {
      wave.direction = Vec3{normal(rng), normal(rng), normal(rng)}.normalized();
      wave.phase = 2.0 * std::numbers::pi * unit(rng);
    }
  }
  const double omega = 2.0 * std::numbers::pi * spec.texture_frequency / spec.scene_radius;
  auto texture = [&](const Vec3& p) {
    Vec3 c;
    for (int ch = 0; ch < 3; ++ch) {
      double v = 0.0;
      for (int k = 0; k < 2; ++k) {
        const double f = omega * (k == 0 ? 1.0 : 1.7);
        v += std::sin(f * waves[ch][k].direction.dot(p) + waves[ch][k].phase);
      }
      const double jitter = spec.color_jitter > 0.0 ? spec.color_jitter * normal(rng) : 0.0;
      c[ch] = std::clamp(0.5 + 0.22 * v + jitter, 0.02, 0.98);
    }
    return c;
  };

  const double r = spec.scene_radius;
  if (spec.layout == "surface") {
    const int side = std::max(1, static_cast<int>(std::lround(std::sqrt(spec.gaussian_count))));
    const double spacing = 2.0 * r / side;
    const double sigma = 0.6 * spacing * spec.gaussian_scale;
    const double amp = spec.relief * r;
    const double k = std::numbers::pi / r;
    auto height = [&](double x, double y) {
      return amp * (std::sin(1.3 * k * x + 0.4) + std::cos(1.1 * k * y - 0.3)) / 2.0;
    };
    for (int i = 0; i < side * side; ++i) {
      const double x = -r + spacing * ((i % side) + 0.5 + 0.5 * uniform(rng));
      const double y = -r + spacing * ((i / side) + 0.5 + 0.5 * uniform(rng));
      splat::GaussianPrimitive g;
      g.position = {x, y, height(x, y)};
      constexpr double h = 1e-5;
      const Vec3 tx{1.0, 0.0, (height(x + h, y) - height(x - h, y)) / (2.0 * h)};
      const Vec3 ty{0.0, 1.0, (height(x, y + h) - height(x, y - h)) / (2.0 * h)};
      const Eigen::Quaterniond q =
          Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), tx.cross(ty).normalized());
      g.rotation = {q.w(), q.x(), q.y(), q.z()};
      g.log_scale = {std::log(sigma), std::log(sigma), std::log(0.1 * sigma)};
      g.opacity_logit = splat::logit(spec.opacity);
      g.color = texture(g.position);
      scene.cloud.gaussians.push_back(g);
    }
  } else {
    const double spacing = std::cbrt(4.0 / 3.0 * std::numbers::pi * r * r * r / spec.gaussian_count);
    const double base_sigma = 0.5 * spacing * spec.gaussian_scale;
    scene.cloud.gaussians.reserve(spec.gaussian_count);
    while (static_cast<int>(scene.cloud.size()) < spec.gaussian_count) {
      const Vec3 p{r * uniform(rng), r * uniform(rng), r * uniform(rng)};
      if (p.norm() > r) continue;
      splat::GaussianPrimitive g;
      g.position = p;
      for (int k = 0; k < 3; ++k) g.log_scale[k] = std::log(base_sigma * (0.7 + 0.6 * unit(rng)));
      g.rotation = Eigen::Vector4d{normal(rng), normal(rng), normal(rng), normal(rng)}.normalized();
      if (g.rotation[0] < 0.0) g.rotation = -g.rotation;
      g.opacity_logit = splat::logit(spec.opacity);
      g.color = texture(p);
      scene.cloud.gaussians.push_back(g);
    }
  }

  Vec3 centroid = Vec3::Zero();
  for (const auto& g : scene.cloud.gaussians) centroid += g.position;
  centroid /= static_cast<double>(scene.cloud.size());
  double max_dist = 0.0;
  for (const auto& g : scene.cloud.gaussians) {
    max_dist = std::max(max_dist, (g.position - centroid).norm());
  }
  scene.extent = 2.0 * max_dist;

  const double elevation = spec.elevation_deg * std::numbers::pi / 180.0;
  const double arc = spec.orbit_arc_deg * std::numbers::pi / 180.0;
  for (int i = 0; i < spec.view_count; ++i) {
    const double t = spec.view_count == 1 ? 0.5 : static_cast<double>(i) / (spec.view_count - 1);
    const double azimuth = -0.5 * arc + t * arc;
    const Vec3 center = centroid + spec.orbit_radius * Vec3{std::cos(elevation) * std::sin(azimuth),
                                                            -std::sin(elevation),
                                                            -std::cos(elevation) * std::cos(azimuth)};
    scene.trajectory.poses.push_back(look_at(center, centroid));
    scene.trajectory.ids.push_back(std::to_string(i));
  }

  for (const auto& pose : scene.trajectory.poses) {
    ImageBuffer img = splat::render(scene.cloud, pose, scene.intrinsics).image;
    if (spec.noise_level > 0.0) {
      for (auto& v : img.data()) v = std::clamp(v + spec.noise_level * normal(rng), 0.0, 1.0);
    }
    scene.images.push_back(std::move(img));
  }
  return scene;
}

sfm::FeatureGraph exact_feature_graph(const splat::GaussianCloud& cloud,
                                      const std::vector<CameraPose>& poses,
                                      const CameraIntrinsics& k) {
  const std::size_t n = poses.size();
  sfm::FeatureGraph graph;
  graph.keypoints.resize(n);
  // keypoint_of[v][g] is the keypoint index of Gaussian g in view v, or -1.
  std::vector<std::vector<int>> keypoint_of(n, std::vector<int>(cloud.size(), -1));
  for (std::size_t v = 0; v < n; ++v) {
    const Mat3 r = poses[v].rotation_matrix();
    for (std::size_t g = 0; g < cloud.size(); ++g) {
      const Vec3 pc = r * cloud.gaussians[g].position + poses[v].translation;
      if (!(pc.z() > splat::kNearPlane)) continue;
      const Vec2 px{k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy};
      if (px.x() < 0.0 || px.y() < 0.0 ||
          px.x() > k.width - 1 || px.y() > k.height - 1) {
        continue;
      }
      keypoint_of[v][g] = static_cast<int>(graph.keypoints[v].size());
      graph.keypoints[v].push_back(px);
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      sfm::MatchPair m;
      m.image_a = static_cast<int>(a);
      m.image_b = static_cast<int>(b);
      for (std::size_t g = 0; g < cloud.size(); ++g) {
        if (keypoint_of[a][g] >= 0 && keypoint_of[b][g] >= 0) {
          m.correspondences.emplace_back(keypoint_of[a][g], keypoint_of[b][g]);
        }
      }
      m.inlier_mask.assign(m.correspondences.size(), true);
      graph.matches.push_back(std::move(m));
    }
  }
  return graph;
}

}  // namespace jogs::synthetic
