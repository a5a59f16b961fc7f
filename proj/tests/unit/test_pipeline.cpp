#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "jogs/config.hpp"
#include "jogs/error.hpp"
#include "jogs/io.hpp"
#include "jogs/pipeline.hpp"

using namespace jogs;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("jogs_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST_CASE("split_views holds out every eighth view") {
  auto s = pipeline::split_views(16, 8);
  CHECK(s.train.size() == 14);
  CHECK(s.test == std::vector<int>{7, 15});
  s = pipeline::split_views(2, 8);
  CHECK(s.train.size() == 2);
  CHECK(s.test.empty());
  CHECK(pipeline::split_views(5, 0).train.size() == 5);
}

TEST_CASE("load_dataset: small folder, no test views, corrupted file") {
  const fs::path dir = scratch("dataset");
  for (int i = 0; i < 2; ++i) io::write_image(ImageBuffer(8, 6, 0.25 * (i + 1)), dir / ("img" + std::to_string(i) + ".png"));
  spit(dir / "intrinsics.txt", "10 10 3.5 2.5 8 6\n");
  const auto ds = pipeline::load_dataset(dir);
  CHECK(ds.images.size() == 2);
  CHECK(ds.ids == std::vector<std::string>{"img0", "img1"});
  CHECK(ds.split.test.empty());
  CHECK_FALSE(ds.warnings.empty());
  CHECK(ds.images[1].at(3, 3, 1) == doctest::Approx(0.5).epsilon(1e-2));

  spit(dir / "img2.png", "this is not an image");
  try {
    pipeline::load_dataset(dir);
    FAIL("expected a load error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("img2.png") != std::string::npos);
  }
}

TEST_CASE("image io round trip") {
  const fs::path dir = scratch("images");
  ImageBuffer img(5, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = ((x * 3 + y * 7 + c * 11) % 17) / 16.0;
  for (const char* name : {"a.png", "b.ppm"}) {
    io::write_image(img, dir / name);
    const auto back = io::read_image(dir / name);
    REQUIRE(back.width() == 5);
    for (std::size_t i = 0; i < img.data().size(); ++i) CHECK(std::abs(back.data()[i] - img.data()[i]) <= 0.5 / 255 + 1e-12);
  }
  CHECK_THROWS_AS(io::read_image(dir / "missing.png"), Error);
}

TEST_CASE("PLY export: one vertex, round trip, empty cloud") {
  const fs::path dir = scratch("ply");
  splat::GaussianCloud one;
  splat::GaussianPrimitive g;
  g.position = {0.1, -2.5, 3.25};
  g.log_scale = {-1, -2, -3};
  g.rotation = {0.5, 0.5, 0.5, 0.5};
  g.opacity_logit = 1.5;
  g.color = {0.2, 0.4, 0.6};
  one.gaussians.push_back(g);
  io::export_cloud_ply(one, dir / "one.ply");
  const std::string text = slurp(dir / "one.ply");
  CHECK(text.find("element vertex 1\n") != std::string::npos);
  const auto body = text.substr(text.find("end_header\n") + 11);
  std::istringstream line(body);
  int values = 0;
  double v;
  while (line >> v) ++values;
  CHECK(values == 14);

  const auto back = io::import_cloud_ply(dir / "one.ply");
  REQUIRE(back.size() == 1);
  CHECK((back.gaussians[0].position - g.position).norm() < 1e-8);
  io::export_cloud_ply(back, dir / "two.ply");
  CHECK(slurp(dir / "two.ply") == text);

  io::export_cloud_ply({}, dir / "empty.ply");
  CHECK(slurp(dir / "empty.ply").find("element vertex 0\n") != std::string::npos);
  CHECK(io::import_cloud_ply(dir / "empty.ply").empty());
}

TEST_CASE("trajectory file: identity line, quaternion oracle, round trip") {
  const fs::path dir = scratch("traj");
  metrics::Trajectory t;
  t.poses.push_back(CameraPose{});
  t.ids.push_back("0");
  io::export_trajectory(t, dir / "id.txt");
  const std::string text = slurp(dir / "id.txt");
  CHECK(text.find("0 0 0 0 0 0 0 1\n") != std::string::npos);

  const auto q = io::rotation_to_quaternion(geometry::rotation_z(std::numbers::pi / 2));
  const double h = std::sqrt(0.5);
  CHECK((q - Eigen::Vector4d{0, 0, h, h}).norm() < 1e-9);

  metrics::Trajectory many;
  for (int i = 0; i < 6; ++i) {
    many.poses.push_back({{0.3 * i - 0.7, 0.2 - 0.1 * i, 1.1 * i}, Vec3{0.5 * i, -1.0 / (i + 1), 2.0}});
    many.ids.push_back("view_" + std::to_string(i));
  }
  io::export_trajectory(many, dir / "many.txt");
  const auto back = io::import_trajectory(dir / "many.txt");
  REQUIRE(back.size() == 6);
  CHECK(back.ids == many.ids);
  for (int i = 0; i < 6; ++i) {
    CHECK(geometry::rotation_angle_between(back.poses[i].rotation_matrix(), many.poses[i].rotation_matrix()) < 1e-9);
    CHECK((back.poses[i].translation - many.poses[i].translation).norm() < 1e-9);
  }
}

TEST_CASE("pipeline config parsing and validation") {
  config::PipelineConfig c;
  c.apply(config::parse_key_values("# comment\ntotal_iterations = 400\npose_interval = 50\nseed = 9\n"));
  CHECK(c.train.total_iterations == 400);
  CHECK(c.train.pose_interval == 50);
  CHECK(c.train.random_seed == 9);
  CHECK_NOTHROW(c.validate());

  config::PipelineConfig round;
  round.apply(config::parse_key_values(c.to_text()));
  CHECK(round.to_text() == c.to_text());

  c.apply(config::parse_key_values("pose_interval = 200\n"));  // k > m = 100
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(c.apply(config::parse_key_values("no_such_key = 1\n")), Error);
  CHECK_THROWS_AS(c.apply(config::parse_key_values("lambda = abc\n")), Error);
  CHECK_THROWS_AS(config::parse_key_values("a = 1\na = 2\n"), Error);
}

TEST_CASE("k > m fails before any compute") {
  auto ds = pipeline::synthetic_dataset({});
  config::PipelineConfig c;
  c.train.pose_interval = 900;
  const fs::path out = scratch("bad_config");
  try {
    pipeline::run_pipeline(ds, c, out);
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfig);
  }
  CHECK_FALSE(fs::exists(out / "cloud.ply"));
}

TEST_CASE("synthetic scenes are deterministic and self-consistent") {
  synthetic::SyntheticSceneSpec spec;
  spec.view_count = 3;
  const auto a = synthetic::generate_synthetic_scene(spec), b = synthetic::generate_synthetic_scene(spec);
  CHECK(a.cloud == b.cloud);
  for (int i = 0; i < 3; ++i) {
    CHECK(a.images[i].data() == b.images[i].data());
    CHECK(splat::render(a.cloud, a.trajectory.poses[i], a.intrinsics).image.data() == a.images[i].data());
  }
  spec.view_count = 1;
  CHECK(synthetic::generate_synthetic_scene(spec).images.size() == 1);
}

TEST_CASE("end-to-end smoke run writes every artifact") {
  auto ds = pipeline::synthetic_dataset({});
  config::PipelineConfig c;
  c.train.total_iterations = 80;
  c.train.pose_interval = 20;
  c.train.pose_cutoff = 40;
  c.train.densify_from = 40;
  c.train.densify_interval = 20;
  const fs::path out = scratch("smoke");
  const auto result = pipeline::run_pipeline(ds, c, out);
  for (const char* f : {"cloud.ply", "trajectory.txt", "metrics.csv", "loss.csv", "loss.svg", "pose_trace.csv",
                        "pose_error.svg", "config.txt"}) {
    CHECK_MESSAGE(fs::exists(out / f), f);
  }
  CHECK(fs::exists(out / "renders"));
  CHECK(fs::exists(out / "checkpoint" / "cloud.ply"));
  CHECK(std::isfinite(result.evaluation.metrics.ate));
  CHECK(std::isfinite(result.evaluation.metrics.psnr));

  const std::string csv = slurp(out / "metrics.csv");
  CHECK(csv.rfind("scene,PSNR,SSIM,ATE,RPE_trans,RPE_rot\n", 0) == 0);
  std::istringstream rows(csv.substr(csv.find('\n') + 1));
  std::string cell;
  int cells = 0;
  while (std::getline(rows, cell, ',')) ++cells;
  CHECK(cells == 6);

  // Evaluating the saved checkpoint reproduces the run's metrics.
  const auto ck = pipeline::load_checkpoint(out / "checkpoint", ds);
  const auto ev = pipeline::evaluate_checkpoint(ds, ck, c);
  CHECK(ev.metrics.psnr == doctest::Approx(result.evaluation.metrics.psnr).epsilon(1e-9));
  CHECK(ev.metrics.ate == doctest::Approx(result.evaluation.metrics.ate).epsilon(1e-9));
}
