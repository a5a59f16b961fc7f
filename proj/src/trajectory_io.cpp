#include <cstdio>
#include <fstream>
#include <sstream>

#include <Eigen/Geometry>

#include "jogs/error.hpp"
#include "jogs/io.hpp"

namespace jogs::io {

std::string format_exact(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value == 0.0 ? 0.0 : value);
  return buf;
}

Eigen::Vector4d rotation_to_quaternion(const Mat3& rotation) {
  Eigen::Quaterniond q(rotation);
  q.normalize();
  Eigen::Vector4d out{q.x(), q.y(), q.z(), q.w()};
  if (out[3] < 0.0) out = -out;
  return out;
}

Mat3 quaternion_to_rotation(const Eigen::Vector4d& xyzw) {
  const double n = xyzw.norm();
  if (!(n > 0.0)) throw Error(ErrorKind::kInvalidArgument, "zero quaternion");
  return Eigen::Quaterniond(xyzw[3] / n, xyzw[0] / n, xyzw[1] / n, xyzw[2] / n).toRotationMatrix();
}

void export_trajectory(const metrics::Trajectory& trajectory, const std::filesystem::path& path) {
  trajectory.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
  for (std::size_t i = 0; i < trajectory.size(); ++i) {
    const CameraPose& p = trajectory.poses[i];
    const Eigen::Vector4d q = rotation_to_quaternion(p.rotation_matrix());
    out << (trajectory.ids.empty() ? std::to_string(i) : trajectory.ids[i]);
    for (int k = 0; k < 3; ++k) out << ' ' << format_exact(p.translation[k]);
    for (int k = 0; k < 4; ++k) out << ' ' << format_exact(q[k]);
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::kIo, "write to '" + path.string() + "' failed");
}

metrics::Trajectory import_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kData, "cannot open trajectory '" + path.string() + "'");
  metrics::Trajectory t;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string id;
    double v[7];
    ls >> id;
    for (double& x : v) {
      if (!(ls >> x)) {
        throw Error(ErrorKind::kData,
                    "bad trajectory line " + std::to_string(line_no) + " in '" + path.string() + "'");
      }
    }
    const Mat3 r = quaternion_to_rotation({v[3], v[4], v[5], v[6]});
    t.ids.push_back(id);
    t.poses.push_back(geometry::pose_from_rt(r, Vec3{v[0], v[1], v[2]}));
  }
  t.validate();
  return t;
}

}  // namespace jogs::io
