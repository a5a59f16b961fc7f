#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "jogs/sfm.hpp"
#include "jogs/train.hpp"

namespace jogs::config {

using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// repeated keys and lines without `=` are config errors.
KeyValues parse_key_values(const std::string& text, const std::string& source = "<string>");
KeyValues load_key_values(const std::filesystem::path& path);

/// Everything a pipeline run needs besides the data.
struct PipelineConfig {
  train::TrainConfig train;
  sfm::SfmConfig sfm;

  int holdout_every = 8;  // every n-th image is a test view; 0 keeps all for training
  int rpe_delta = 1;
  // Test views start from their initialization poses; when enabled they are
  // aligned to the trained cloud with LK3D before rendering.
  bool test_pose_refinement = true;
  // "detected" runs feature detection; "exact" projects the ground-truth
  // cloud of a synthetic scene to get ideal correspondences.
  std::string feature_source = "detected";
  // Deliberate noise on the initialization: each Euler angle is offset by
  // +-deg and each camera moved by `translation` x scene extent.
  double init_rotation_noise_deg = 0.0;
  double init_translation_noise = 0.0;
  bool write_images = true;
  std::uint64_t seed = 0;
  int threads = 1;

  /// Applies overrides; unknown keys and unparsable values throw kConfig.
  void apply(const KeyValues& values);
  void set_seed(std::uint64_t value);
  void set_threads(int value);
  void validate() const;
  /// Every key with its current value, in a fixed order; parseable by apply().
  std::string to_text() const;
};

PipelineConfig load_pipeline_config(const std::filesystem::path& path);

}  // namespace jogs::config
