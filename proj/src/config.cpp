#include "jogs/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "jogs/error.hpp"

namespace jogs::config {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string show(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (!in || !(in >> std::ws).eof()) {
    throw Error(ErrorKind::kConfig, "bad value for '" + key + "': '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw Error(ErrorKind::kConfig, "bad boolean for '" + key + "': '" + value + "'");
}

struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <class T>
Field number(const std::string& key, T& target) {
  return {key, [&target, key](const std::string& v) { target = parse_number<T>(key, v); },
          [&target] {
            if constexpr (std::is_floating_point_v<T>) return show(target);
            else return std::to_string(target);
          }};
}

Field flag(const std::string& key, bool& target) {
  return {key, [&target, key](const std::string& v) { target = parse_bool(key, v); },
          [&target] { return std::string(target ? "true" : "false"); }};
}

// One table drives parsing, validation messages and serialization.
std::vector<Field> fields(PipelineConfig& c) {
  auto& t = c.train;
  auto& s = c.sfm;
  std::vector<Field> f = {
      number("total_iterations", t.total_iterations),
      number("pose_interval", t.pose_interval),
      number("pose_cutoff", t.pose_cutoff),
      number("lambda", t.lambda),
      number("lr_position", t.lr_position),
      number("lr_position_final", t.lr_position_final),
      number("lr_color", t.lr_color),
      number("lr_opacity", t.lr_opacity),
      number("lr_scale", t.lr_scale),
      number("lr_rotation", t.lr_rotation),
      number("densify_interval", t.densify_interval),
      number("densify_from", t.densify_from),
      number("densify_until", t.densify_until),
      number("densify_grad_threshold", t.densify_grad_threshold),
      number("percent_dense", t.percent_dense),
      number("min_opacity", t.min_opacity),
      number("max_world_scale", t.max_world_scale),
      number("max_gaussians", t.max_gaussians),
      number("lk_max_iterations", t.lk.max_iterations),
      number("lk_step_scale", t.lk.step_scale),
      number("lk_damping", t.lk.damping),
      number("lk_convergence_tol", t.lk.convergence_tol),
      number("lk_visibility_threshold", t.lk.visibility_threshold),
      number("sift_scales_per_octave", s.features.scales_per_octave),
      number("sift_base_sigma", s.features.base_sigma),
      number("sift_contrast_threshold", s.features.contrast_threshold),
      number("sift_edge_ratio", s.features.edge_ratio),
      flag("sift_upsample", s.features.upsample),
      number("sift_max_keypoints", s.features.max_keypoints),
      number("match_ratio", s.match_ratio),
      number("ransac_max_iterations", s.ransac.max_iterations),
      number("ransac_threshold_px", s.ransac.threshold_px),
      number("ransac_confidence", s.ransac.confidence),
      number("min_pair_inliers", s.min_pair_inliers),
      number("min_pnp_inliers", s.min_pnp_inliers),
      number("pnp_threshold_px", s.pnp_threshold_px),
      number("max_reprojection_px", s.max_reprojection_px),
      number("bundle_iterations", s.bundle_iterations),
      number("huber_px", s.huber_px),
      number("holdout_every", c.holdout_every),
      number("rpe_delta", c.rpe_delta),
      flag("test_pose_refinement", c.test_pose_refinement),
      {"feature_source", [&c](const std::string& v) { c.feature_source = v; },
       [&c] { return c.feature_source; }},
      number("init_rotation_noise_deg", c.init_rotation_noise_deg),
      number("init_translation_noise", c.init_translation_noise),
      flag("write_images", c.write_images),
  };
  f.push_back({"seed", [&c](const std::string& v) { c.set_seed(parse_number<std::uint64_t>("seed", v)); },
               [&c] { return std::to_string(c.seed); }});
  f.push_back({"threads", [&c](const std::string& v) { c.set_threads(parse_number<int>("threads", v)); },
               [&c] { return std::to_string(c.threads); }});
  return f;
}

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& source) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::kConfig, source + ":" + std::to_string(n) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(ErrorKind::kConfig, source + ":" + std::to_string(n) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw Error(ErrorKind::kConfig, source + ":" + std::to_string(n) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfig, "cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

void PipelineConfig::set_seed(std::uint64_t value) {
  seed = value;
  train.random_seed = value;
  sfm.ransac.seed = value;
}

void PipelineConfig::set_threads(int value) {
  threads = value;
  train.threads = value;
  sfm.threads = value;
}

void PipelineConfig::apply(const KeyValues& values) {
  auto table = fields(*this);
  for (const auto& [key, value] : values) {
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
    if (it == table.end()) throw Error(ErrorKind::kConfig, "unknown config key '" + key + "'");
    it->set(value);
  }
}

void PipelineConfig::validate() const {
  train.validate();
  if (holdout_every < 0 || holdout_every == 1) {
    throw Error(ErrorKind::kConfig, "holdout_every must be 0 or >= 2");
  }
  if (rpe_delta < 1) throw Error(ErrorKind::kConfig, "rpe_delta must be >= 1");
  if (feature_source != "detected" && feature_source != "exact") {
    throw Error(ErrorKind::kConfig, "feature_source must be 'detected' or 'exact'");
  }
  if (!(init_rotation_noise_deg >= 0.0) || !(init_translation_noise >= 0.0)) {
    throw Error(ErrorKind::kConfig, "initialization noise must be >= 0");
  }
  if (threads < 1) throw Error(ErrorKind::kConfig, "threads must be >= 1");
  if (!(sfm.match_ratio > 0.0 && sfm.match_ratio <= 1.0)) {
    throw Error(ErrorKind::kConfig, "match_ratio must lie in (0, 1]");
  }
  if (sfm.ransac.max_iterations < 1 || !(sfm.ransac.threshold_px > 0.0)) {
    throw Error(ErrorKind::kConfig, "RANSAC needs >= 1 iteration and a positive threshold");
  }
}

std::string PipelineConfig::to_text() const {
  PipelineConfig copy = *this;
  std::string out;
  for (const auto& f : fields(copy)) out += f.key + " = " + f.get() + "\n";
  return out;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  PipelineConfig c;
  c.apply(load_key_values(path));
  return c;
}

}  // namespace jogs::config
