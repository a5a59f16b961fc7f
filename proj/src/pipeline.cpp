#include "jogs/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "jogs/error.hpp"
#include "jogs/io.hpp"
#include "jogs/lk3d.hpp"
#include "jogs/parallel.hpp"
#include "jogs/plot.hpp"

namespace jogs::pipeline {
namespace fs = std::filesystem;
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v == 0.0 ? 0.0 : v);
  return buf;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

CameraIntrinsics read_intrinsics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kData, "missing intrinsics file '" + path.string() + "'");
  CameraIntrinsics k;
  if (!(in >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) {
    throw Error(ErrorKind::kData, "intrinsics file '" + path.string() + "' must hold fx fy cx cy width height");
  }
  try {
    k.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::kData, "intrinsics in '" + path.string() + "' are invalid (" + e.what() + ")");
  }
  return k;
}

// Runs `fn`, tagging any library error with the pipeline stage.
template <class Fn>
auto stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error::with_context(e, "stage " + name);
  }
}

metrics::Trajectory subset(const metrics::Trajectory& t, const std::vector<int>& idx) {
  metrics::Trajectory out;
  for (int i : idx) {
    out.poses.push_back(t.poses[i]);
    if (!t.ids.empty()) out.ids.push_back(t.ids[i]);
  }
  return out;
}

struct TrajectoryErrors {
  double ate = std::numeric_limits<double>::quiet_NaN();
  double rpe_trans = std::numeric_limits<double>::quiet_NaN();
  double rpe_rot = std::numeric_limits<double>::quiet_NaN();
};

TrajectoryErrors trajectory_errors(const metrics::Trajectory& est, const metrics::Trajectory& ref,
                                   int delta, std::vector<std::string>* warnings) {
  TrajectoryErrors out;
  try {
    out.ate = metrics::compute_ate(est, ref);
  } catch (const Error& e) {
    if (warnings) warnings->push_back(std::string("ATE unavailable: ") + e.what());
  }
  try {
    // Relative translations are only comparable once the similarity gauge
    // (notably the arbitrary reconstruction scale) is removed.
    const auto aligned = metrics::transform_trajectory(est, metrics::umeyama_align(est, ref));
    const auto rpe = metrics::compute_rpe(aligned, ref, delta);
    out.rpe_trans = rpe.translation;
    out.rpe_rot = rpe.rotation_deg;
  } catch (const Error& e) {
    if (warnings) warnings->push_back(std::string("RPE unavailable: ") + e.what());
  }
  return out;
}

void write_evaluation(const fs::path& out, const Dataset& dataset, const Evaluation& eval,
                      bool write_images) {
  plot::write_text_file(out / "metrics.csv", metrics_csv({eval.metrics}));
  io::export_trajectory(eval.trajectory, out / "trajectory.txt");
  if (write_images) {
    fs::create_directories(out / "renders");
    for (std::size_t i = 0; i < eval.renders.size(); ++i) {
      io::write_image(eval.renders[i], out / "renders" / (dataset.ids[eval.evaluated_views[i]] + ".png"));
    }
  }
}

void write_warnings(const fs::path& out, const std::vector<std::string>& warnings) {
  std::string text;
  for (const auto& w : warnings) text += w + "\n";
  plot::write_text_file(out / "warnings.txt", text);
}

}  // namespace

Split split_views(int count, int holdout_every) {
  Split s;
  for (int i = 0; i < count; ++i) {
    if (holdout_every > 0 && i % holdout_every == holdout_every - 1) s.test.push_back(i);
    else s.train.push_back(i);
  }
  return s;
}

Dataset load_dataset(const fs::path& root, int holdout_every) {
  if (!fs::is_directory(root)) throw Error(ErrorKind::kData, "dataset directory '" + root.string() + "' not found");
  Dataset d;
  d.name = root.filename().empty() ? root.parent_path().filename().string() : root.filename().string();
  d.intrinsics = read_intrinsics(root / "intrinsics.txt");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = lower(entry.path().extension().string());
    if (ext == ".png" || ext == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  for (const auto& f : files) {
    ImageBuffer img = io::read_image(f);
    if (img.width() != d.intrinsics.width || img.height() != d.intrinsics.height) {
      throw Error(ErrorKind::kData, "image '" + f.string() + "' is " + std::to_string(img.width()) + "x" +
                                        std::to_string(img.height()) + ", intrinsics say " +
                                        std::to_string(d.intrinsics.width) + "x" +
                                        std::to_string(d.intrinsics.height));
    }
    d.ids.push_back(f.stem().string());
    d.images.push_back(std::move(img));
  }
  if (std::set<std::string>(d.ids.begin(), d.ids.end()).size() != d.ids.size()) {
    throw Error(ErrorKind::kData, "image file stems must be unique");
  }
  d.split = split_views(static_cast<int>(d.images.size()), holdout_every);
  if (d.split.train.size() < 2) {
    throw Error(ErrorKind::kData, "dataset '" + root.string() + "' has fewer than 2 training images");
  }
  if (d.split.test.empty()) d.warnings.push_back("no test images held out; metrics use training views");

  const fs::path ref_path = root / "reference.txt";
  if (fs::exists(ref_path)) {
    const auto ref = io::import_trajectory(ref_path);
    metrics::Trajectory ordered;
    for (const auto& id : d.ids) {
      const auto it = std::find(ref.ids.begin(), ref.ids.end(), id);
      if (it == ref.ids.end()) throw Error(ErrorKind::kData, "reference.txt has no pose for '" + id + "'");
      ordered.ids.push_back(id);
      ordered.poses.push_back(ref.poses[it - ref.ids.begin()]);
    }
    d.reference = std::move(ordered);
  }
  return d;
}

Dataset synthetic_dataset(const synthetic::SyntheticSceneSpec& spec, int holdout_every) {
  auto scene = synthetic::generate_synthetic_scene(spec);
  Dataset d;
  d.name = "synthetic";
  for (int i = 0; i < spec.view_count; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", i);
    d.ids.push_back(buf);
  }
  d.images = std::move(scene.images);
  d.intrinsics = scene.intrinsics;
  d.split = split_views(spec.view_count, holdout_every);
  if (d.split.test.empty()) d.warnings.push_back("no test views held out; metrics use training views");
  scene.trajectory.ids = d.ids;
  d.reference = std::move(scene.trajectory);
  d.ground_truth_cloud = std::move(scene.cloud);
  return d;
}

CameraPose perturb_pose(const CameraPose& pose, double rotation_deg, double translation,
                        std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> normal(0.0, 1.0);
  CameraPose out = pose;
  const double r = rotation_deg * kDegToRad;
  out.rotation.alpha += coin(rng) ? r : -r;
  out.rotation.beta += coin(rng) ? r : -r;
  out.rotation.gamma += coin(rng) ? r : -r;
  Vec3 dir{normal(rng), normal(rng), normal(rng)};
  dir.normalize();
  out.translation += translation * dir;
  return out;
}

double cloud_extent(const splat::GaussianCloud& cloud) {
  if (cloud.empty()) return 0.0;
  Vec3 c = Vec3::Zero();
  for (const auto& g : cloud.gaussians) c += g.position;
  c /= static_cast<double>(cloud.size());
  double r = 0.0;
  for (const auto& g : cloud.gaussians) r = std::max(r, (g.position - c).norm());
  return 2.0 * r;
}

Initialization initialize(const Dataset& dataset, const config::PipelineConfig& config) {
  Initialization init;
  if (config.feature_source == "exact") {
    if (!dataset.ground_truth_cloud || !dataset.reference) {
      throw Error(ErrorKind::kConfig, "feature_source = exact needs a synthetic scene");
    }
    const auto graph = synthetic::exact_feature_graph(*dataset.ground_truth_cloud, dataset.reference->poses,
                                                      dataset.intrinsics);
    init.reconstruction = sfm::reconstruct(graph, dataset.intrinsics, config.sfm, &dataset.images);
  } else {
    init.reconstruction = sfm::run_initialization(dataset.images, dataset.intrinsics, config.sfm);
  }
  for (int u : init.reconstruction.unregistered) {
    init.warnings.push_back("view " + dataset.ids[u] + " could not be registered");
  }
  init.cloud = sfm::seed_cloud(init.reconstruction);
  init.extent = cloud_extent(init.cloud);
  init.poses = init.reconstruction.poses;
  if (config.init_rotation_noise_deg > 0.0 || config.init_translation_noise > 0.0) {
    std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    for (auto& [index, pose] : init.poses) {
      pose = perturb_pose(pose, config.init_rotation_noise_deg, config.init_translation_noise * init.extent, rng);
    }
  }
  return init;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "scene,PSNR,SSIM,ATE,RPE_trans,RPE_rot\n";
  for (const auto& r : rows) {
    out += r.scene + "," + fmt(r.psnr) + "," + fmt(r.ssim) + "," + fmt(r.ate) + "," + fmt(r.rpe_trans) + "," +
           fmt(r.rpe_rot) + "\n";
  }
  return out;
}

Evaluation evaluate(const Dataset& dataset, const splat::GaussianCloud& cloud,
                    const std::map<int, CameraPose>& poses, const std::vector<int>& train_views,
                    const config::PipelineConfig& config) {
  Evaluation ev;
  ev.metrics.scene = dataset.name;
  bool scoring_test = true;
  for (int v : dataset.split.test) {
    if (poses.count(v)) ev.evaluated_views.push_back(v);
    else ev.warnings.push_back("test view " + dataset.ids[v] + " has no pose and is not scored");
  }
  if (ev.evaluated_views.empty()) {
    scoring_test = false;
    ev.evaluated_views = train_views;
    ev.warnings.push_back("no posed test views; image metrics are computed on training views");
  }

  const std::size_t n = ev.evaluated_views.size();
  ev.render_poses.resize(n);
  ev.renders.resize(n);
  std::vector<std::vector<std::string>> notes(n);
  parallel_for(n, config.threads, [&](std::size_t i) {
    const int v = ev.evaluated_views[i];
    CameraPose pose = poses.at(v);
    if (scoring_test && config.test_pose_refinement) {
      auto r = lk3d::refine_pose(cloud, pose, dataset.intrinsics, dataset.images[v], config.train.lk);
      pose = r.pose;
      for (auto& w : r.diagnostics.warnings) notes[i].push_back("test view " + dataset.ids[v] + ": " + w);
    }
    ev.render_poses[i] = pose;
    ev.renders[i] = splat::render(cloud, pose, dataset.intrinsics).image;
  });
  double psnr = 0.0, ssim = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& target = dataset.images[ev.evaluated_views[i]];
    psnr += metrics::compute_psnr(ev.renders[i], target);
    ssim += metrics::compute_ssim(ev.renders[i], target);
    for (auto& w : notes[i]) ev.warnings.push_back(std::move(w));
  }
  ev.metrics.psnr = n ? psnr / n : std::numeric_limits<double>::quiet_NaN();
  ev.metrics.ssim = n ? ssim / n : std::numeric_limits<double>::quiet_NaN();

  std::map<int, CameraPose> final_poses = poses;
  if (scoring_test) {
    for (std::size_t i = 0; i < n; ++i) final_poses[ev.evaluated_views[i]] = ev.render_poses[i];
  }
  for (const auto& [v, pose] : final_poses) {
    ev.trajectory.ids.push_back(dataset.ids[v]);
    ev.trajectory.poses.push_back(pose);
  }

  ev.metrics.ate = ev.metrics.rpe_trans = ev.metrics.rpe_rot = std::numeric_limits<double>::quiet_NaN();
  if (dataset.reference) {
    metrics::Trajectory est;
    for (int v : train_views) est.poses.push_back(poses.at(v));
    const auto errs = trajectory_errors(est, subset(*dataset.reference, train_views), config.rpe_delta, &ev.warnings);
    ev.metrics.ate = errs.ate;
    ev.metrics.rpe_trans = errs.rpe_trans;
    ev.metrics.rpe_rot = errs.rpe_rot;
  } else {
    ev.warnings.push_back("no reference trajectory; ATE and RPE are not available");
  }
  return ev;
}

void save_checkpoint(const Checkpoint& cp, const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  io::export_cloud_ply(cp.cloud, dir / "cloud.ply", 17);
  metrics::Trajectory t;
  for (const auto& [v, pose] : cp.poses) {
    t.ids.push_back(dataset.ids.at(v));
    t.poses.push_back(pose);
  }
  io::export_trajectory(t, dir / "poses.txt");
  std::string views;
  for (int v : cp.train_views) views += dataset.ids.at(v) + "\n";
  plot::write_text_file(dir / "train_views.txt", views);
  plot::write_text_file(dir / "config.txt", cp.config_text);
  plot::write_text_file(dir / "state.txt", "iteration = " + std::to_string(cp.iteration) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir, const Dataset& dataset) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::kData, "checkpoint '" + dir.string() + "' not found");
  Checkpoint cp;
  cp.cloud = io::import_cloud_ply(dir / "cloud.ply");
  auto index_of = [&](const std::string& id) {
    const auto it = std::find(dataset.ids.begin(), dataset.ids.end(), id);
    if (it == dataset.ids.end()) {
      throw Error(ErrorKind::kData, "checkpoint view '" + id + "' is not in the dataset");
    }
    return static_cast<int>(it - dataset.ids.begin());
  };
  const auto t = io::import_trajectory(dir / "poses.txt");
  for (std::size_t i = 0; i < t.size(); ++i) cp.poses[index_of(t.ids[i])] = t.poses[i];
  std::ifstream views(dir / "train_views.txt");
  if (!views) throw Error(ErrorKind::kData, "checkpoint is missing train_views.txt");
  for (std::string id; std::getline(views, id);) {
    if (!id.empty()) cp.train_views.push_back(index_of(id));
  }
  std::ifstream cfg(dir / "config.txt");
  std::stringstream ss;
  ss << cfg.rdbuf();
  cp.config_text = ss.str();
  try {
    const auto state = config::load_key_values(dir / "state.txt");
    cp.iteration = std::stoi(state.at("iteration"));
  } catch (const std::exception&) {
    throw Error(ErrorKind::kData, "checkpoint state.txt is unreadable");
  }
  return cp;
}

Evaluation evaluate_checkpoint(const Dataset& dataset, const Checkpoint& checkpoint,
                               const config::PipelineConfig& config, const fs::path& out_dir) {
  config.validate();
  Evaluation ev = stage("evaluate", [&] {
    return evaluate(dataset, checkpoint.cloud, checkpoint.poses, checkpoint.train_views, config);
  });
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_evaluation(out_dir, dataset, ev, config.write_images);
    write_warnings(out_dir, ev.warnings);
  }
  return ev;
}

RunResult run_pipeline(const Dataset& dataset, const config::PipelineConfig& config, const fs::path& out_dir) {
  stage("config", [&] {
    config.validate();
    return 0;
  });
  RunResult run;
  run.warnings = dataset.warnings;
  run.init = stage("sfm-init", [&] { return initialize(dataset, config); });
  run.warnings.insert(run.warnings.end(), run.init.warnings.begin(), run.init.warnings.end());

  for (int v : dataset.split.train) {
    if (run.init.poses.count(v)) run.train_views.push_back(v);
  }
  if (run.train_views.size() < 2) {
    throw Error(ErrorKind::kInsufficientData, "stage sfm-init: fewer than 2 training views were registered");
  }
  std::vector<ImageBuffer> images;
  std::vector<CameraPose> poses;
  for (int v : run.train_views) {
    images.push_back(dataset.images[v]);
    poses.push_back(run.init.poses.at(v));
  }
  run.state = stage("train", [&] {
    return train::train(images, dataset.intrinsics, run.init.cloud, poses, config.train);
  });
  run.warnings.insert(run.warnings.end(), run.state.warnings.begin(), run.state.warnings.end());

  std::map<int, CameraPose> all_poses = run.init.poses;
  for (std::size_t i = 0; i < run.train_views.size(); ++i) all_poses[run.train_views[i]] = run.state.poses[i];
  run.evaluation = stage("evaluate", [&] {
    return evaluate(dataset, run.state.cloud, all_poses, run.train_views, config);
  });
  run.warnings.insert(run.warnings.end(), run.evaluation.warnings.begin(), run.evaluation.warnings.end());

  if (out_dir.empty()) return run;
  stage("export", [&] {
    fs::create_directories(out_dir);
    io::export_cloud_ply(run.state.cloud, out_dir / "cloud.ply");
    write_evaluation(out_dir, dataset, run.evaluation, config.write_images);
    plot::write_text_file(out_dir / "config.txt", config.to_text());

    std::string loss_csv = "iteration,loss\n";
    plot::Series loss{"loss", {}, {}};
    for (const auto& [it, l] : run.state.loss_history) {
      loss_csv += std::to_string(it) + "," + fmt(l) + "\n";
      loss.x.push_back(it);
      loss.y.push_back(l);
    }
    plot::write_text_file(out_dir / "loss.csv", loss_csv);
    plot::write_text_file(out_dir / "loss.svg", plot::line_chart_svg("Training loss", "iteration", "loss", {loss}, true));

    std::string trace = "iteration,ATE,RPE_trans,RPE_rot\n";
    plot::Series ate{"ATE", {}, {}}, rot{"RPE_rot (deg)", {}, {}};
    for (const auto& [it, snapshot] : run.state.pose_history) {
      TrajectoryErrors e;
      if (dataset.reference) {
        metrics::Trajectory est;
        est.poses = snapshot;
        e = trajectory_errors(est, subset(*dataset.reference, run.train_views), config.rpe_delta, nullptr);
      }
      trace += std::to_string(it) + "," + fmt(e.ate) + "," + fmt(e.rpe_trans) + "," + fmt(e.rpe_rot) + "\n";
      ate.x.push_back(it);
      ate.y.push_back(e.ate);
      rot.x.push_back(it);
      rot.y.push_back(e.rpe_rot);
    }
    plot::write_text_file(out_dir / "pose_trace.csv", trace);
    plot::write_text_file(out_dir / "pose_error.svg",
                          plot::line_chart_svg("Pose error during training", "iteration", "error", {ate, rot}));

    Checkpoint cp;
    cp.cloud = run.state.cloud;
    cp.poses = all_poses;
    cp.train_views = run.train_views;
    cp.config_text = config.to_text();
    cp.iteration = run.state.iteration;
    save_checkpoint(cp, dataset, out_dir / "checkpoint");
    write_warnings(out_dir, run.warnings);
    return 0;
  });
  return run;
}

}  // namespace jogs::pipeline
