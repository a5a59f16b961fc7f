// Batch driver: initialization, joint optimization, evaluation and export.
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "jogs/config.hpp"
#include "jogs/error.hpp"
#include "jogs/pipeline.hpp"

namespace fs = std::filesystem;
using namespace jogs;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return 1;
    case ErrorKind::kData:
    case ErrorKind::kIo:
    case ErrorKind::kInvalidArgument:
      return 2;
    default:
      return 3;
  }
}

// A synthetic spec is either a key=value file or an inline "k=v,k=v" list.
synthetic::SyntheticSceneSpec read_synthetic_spec(const std::string& arg) {
  if (fs::exists(arg)) return synthetic::SyntheticSceneSpec::from_map(config::load_key_values(arg));
  if (arg == "default") return {};
  std::string text = arg;
  for (char& c : text) {
    if (c == ',') c = '\n';
  }
  if (text.find('=') == std::string::npos) {
    throw Error(ErrorKind::kConfig, "synthetic spec '" + arg + "' is neither a file nor a key=value list");
  }
  return synthetic::SyntheticSceneSpec::from_map(config::parse_key_values(text, "--synthetic"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint Gaussian-splatting and camera-pose optimization"};
  std::string dataset_dir, config_path, out_dir, synthetic_arg, eval_checkpoint;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool init_only = false;
  std::vector<std::string> overrides;

  app.add_option("--dataset", dataset_dir, "Directory of images plus intrinsics.txt");
  app.add_option("--synthetic", synthetic_arg,
                 "Generate a synthetic scene from a key=value file, an inline 'k=v,k=v' list, or 'default'");
  app.add_option("--config", config_path, "Flat key = value configuration file");
  app.add_option("--out", out_dir, "Output directory")->required();
  app.add_option("--seed", seed, "Random seed for every stochastic stage");
  app.add_option("--threads", threads, "Worker threads");
  app.add_flag("--init-only", init_only, "Disable pose refinement (m = 0)");
  app.add_option("--eval-only", eval_checkpoint, "Evaluate a checkpoint directory instead of training");
  app.add_option("--set", overrides, "Config override key=value (repeatable)");
  app.callback([&] {
    if (dataset_dir.empty() == synthetic_arg.empty()) {
      throw CLI::ValidationError("exactly one of --dataset and --synthetic is required");
    }
  });
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    config::PipelineConfig cfg;
    if (!eval_checkpoint.empty() && config_path.empty()) {
      // Evaluation defaults to the configuration stored with the checkpoint.
      const fs::path stored = fs::path(eval_checkpoint) / "config.txt";
      if (fs::exists(stored)) cfg.apply(config::load_key_values(stored));
    }
    if (!config_path.empty()) cfg.apply(config::load_key_values(config_path));
    for (const auto& kv : overrides) cfg.apply(config::parse_key_values(kv, "--set"));
    if (seed) cfg.set_seed(*seed);
    if (threads) cfg.set_threads(*threads);
    if (init_only) cfg.train.pose_cutoff = 0;
    cfg.validate();

    pipeline::Dataset dataset = dataset_dir.empty()
                                    ? pipeline::synthetic_dataset(read_synthetic_spec(synthetic_arg), cfg.holdout_every)
                                    : pipeline::load_dataset(dataset_dir, cfg.holdout_every);
    for (const auto& w : dataset.warnings) std::cerr << "warning: " << w << '\n';

    if (!eval_checkpoint.empty()) {
      const auto cp = pipeline::load_checkpoint(eval_checkpoint, dataset);
      const auto ev = pipeline::evaluate_checkpoint(dataset, cp, cfg, out_dir);
      std::cout << pipeline::metrics_csv({ev.metrics});
      return 0;
    }
    const auto run = pipeline::run_pipeline(dataset, cfg, out_dir);
    for (const auto& w : run.warnings) std::cerr << "warning: " << w << '\n';
    std::cerr << "registered " << run.init.poses.size() << "/" << dataset.images.size() << " views, "
              << run.state.cloud.size() << " Gaussians after " << run.state.iteration << " iterations\n";
    std::cout << pipeline::metrics_csv({run.evaluation.metrics});
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
