#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "jogs/error.hpp"
#include "jogs/io.hpp"

namespace jogs::io {
namespace {

constexpr const char* kProperties[] = {"x",     "y",     "z",     "scale_0", "scale_1",
                                       "scale_2", "rot_0", "rot_1", "rot_2",   "rot_3",
                                       "opacity", "red",   "green", "blue"};
constexpr int kPropertyCount = 14;

std::string format_digits(double v, int digits) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v == 0.0 ? 0.0 : v);
  return buf;
}

}  // namespace

void export_cloud_ply(const splat::GaussianCloud& cloud, const std::filesystem::path& path,
                      int significant_digits) {
  if (significant_digits < 1 || significant_digits > 17) {
    throw Error(ErrorKind::kInvalidArgument, "significant_digits must lie in [1, 17]");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << '\n';
  for (const char* p : kProperties) out << "property float " << p << '\n';
  out << "end_header\n";
  for (const auto& g : cloud.gaussians) {
    const double values[kPropertyCount] = {
        g.position.x(),  g.position.y(),  g.position.z(),  g.log_scale.x(), g.log_scale.y(),
        g.log_scale.z(), g.rotation[0],   g.rotation[1],   g.rotation[2],   g.rotation[3],
        g.opacity_logit, g.color.x(),     g.color.y(),     g.color.z()};
    for (int i = 0; i < kPropertyCount; ++i) out << (i ? " " : "") << format_digits(values[i], significant_digits);
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::kIo, "write to '" + path.string() + "' failed");
}

splat::GaussianCloud import_cloud_ply(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kData, "cannot open PLY '" + path.string() + "'");
  const auto fail = [&](const std::string& why) {
    return Error(ErrorKind::kData, "bad PLY '" + path.string() + "': " + why);
  };
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw fail("missing 'ply' magic");
  long count = -1;
  std::vector<std::string> props;
  bool ascii = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (word == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex") throw fail("unexpected element '" + name + "'");
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    } else if (word == "end_header") {
      break;
    }
  }
  if (!ascii) throw fail("only ASCII PLY is supported");
  if (count < 0) throw fail("missing vertex count");
  int index[kPropertyCount];
  for (int i = 0; i < kPropertyCount; ++i) {
    const auto it = std::find(props.begin(), props.end(), kProperties[i]);
    if (it == props.end()) throw fail(std::string("missing property ") + kProperties[i]);
    index[i] = static_cast<int>(it - props.begin());
  }
  splat::GaussianCloud cloud;
  cloud.gaussians.reserve(static_cast<std::size_t>(count));
  std::vector<double> row(props.size());
  for (long v = 0; v < count; ++v) {
    for (auto& x : row) {
      if (!(in >> x)) throw fail("truncated vertex data at record " + std::to_string(v));
    }
    double p[kPropertyCount];
    for (int i = 0; i < kPropertyCount; ++i) p[i] = row[index[i]];
    splat::GaussianPrimitive g;
    g.position = {p[0], p[1], p[2]};
    g.log_scale = {p[3], p[4], p[5]};
    g.rotation = {p[6], p[7], p[8], p[9]};
    g.opacity_logit = p[10];
    g.color = {p[11], p[12], p[13]};
    cloud.gaussians.push_back(g);
  }
  return cloud;
}

}  // namespace jogs::io
