#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "jogs/config.hpp"
#include "jogs/image.hpp"
#include "jogs/metrics.hpp"
#include "jogs/sfm.hpp"
#include "jogs/splat.hpp"
#include "jogs/synthetic.hpp"
#include "jogs/train.hpp"

namespace jogs::pipeline {

struct Split {
  std::vector<int> train;
  std::vector<int> test;
};

/// Holds out indices i with i mod n == n - 1, so floor(count / n) test views.
/// n = 0 keeps every view for training.
Split split_views(int count, int holdout_every);

struct Dataset {
  std::string name;
  std::vector<std::string> ids;  // one per image (file stem or view number)
  std::vector<ImageBuffer> images;
  CameraIntrinsics intrinsics;
  Split split;
  std::optional<metrics::Trajectory> reference;  // ground truth for every image, same order
  std::optional<splat::GaussianCloud> ground_truth_cloud;
  std::vector<std::string> warnings;
};

/// Reads every .png/.ppm in `root` in lexicographic order plus `intrinsics.txt`
/// (fx fy cx cy width height) and an optional `reference.txt` trajectory whose
/// ids are the image file stems.
Dataset load_dataset(const std::filesystem::path& root, int holdout_every = 8);

Dataset synthetic_dataset(const synthetic::SyntheticSceneSpec& spec, int holdout_every = 8);

/// Offsets each Euler angle by +-`rotation_deg` (random sign) and the
/// translation vector by `translation` in a uniformly random direction.
CameraPose perturb_pose(const CameraPose& pose, double rotation_deg, double translation,
                        std::mt19937_64& rng);

/// Diameter of the bounding sphere of the cloud centers around their centroid.
double cloud_extent(const splat::GaussianCloud& cloud);

struct Initialization {
  sfm::SfmReconstruction reconstruction;
  std::map<int, CameraPose> poses;  // after optional deliberate perturbation
  splat::GaussianCloud cloud;
  double extent = 0.0;
  std::vector<std::string> warnings;
};

Initialization initialize(const Dataset& dataset, const config::PipelineConfig& config);

struct MetricsRow {
  std::string scene;
  double psnr = 0.0;
  double ssim = 0.0;
  double ate = 0.0;
  double rpe_trans = 0.0;
  double rpe_rot = 0.0;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct Evaluation {
  MetricsRow metrics;
  std::vector<int> evaluated_views;      // views whose renders were scored
  std::vector<CameraPose> render_poses;  // pose used for each evaluated view
  std::vector<ImageBuffer> renders;
  metrics::Trajectory trajectory;        // every posed view in dataset order
  std::vector<std::string> warnings;
};

/// Scores test views (training views when there are none) and the training
/// trajectory. `poses` maps dataset indices to poses; test poses are aligned
/// with LK3D first when the config asks for it.
Evaluation evaluate(const Dataset& dataset, const splat::GaussianCloud& cloud,
                    const std::map<int, CameraPose>& poses, const std::vector<int>& train_views,
                    const config::PipelineConfig& config);

struct RunResult {
  Initialization init;
  std::vector<int> train_views;  // registered training views, dataset order
  train::TrainState state;
  Evaluation evaluation;
  std::vector<std::string> warnings;
};

/// sfm-init, training, test rendering and metrics. When `out_dir` is non-empty
/// every artifact is written there. Failures are rethrown tagged with the stage.
RunResult run_pipeline(const Dataset& dataset, const config::PipelineConfig& config,
                       const std::filesystem::path& out_dir = {});

struct Checkpoint {
  splat::GaussianCloud cloud;
  std::map<int, CameraPose> poses;
  std::vector<int> train_views;
  std::string config_text;
  int iteration = 0;
};

void save_checkpoint(const Checkpoint& checkpoint, const Dataset& dataset,
                     const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir, const Dataset& dataset);

/// Re-scores a checkpoint against a dataset and writes the evaluation artifacts.
Evaluation evaluate_checkpoint(const Dataset& dataset, const Checkpoint& checkpoint,
                               const config::PipelineConfig& config,
                               const std::filesystem::path& out_dir = {});

}  // namespace jogs::pipeline
