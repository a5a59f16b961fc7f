#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Core>

#include "jogs/geometry.hpp"
#include "jogs/image.hpp"
#include "jogs/metrics.hpp"
#include "jogs/splat.hpp"

namespace jogs::io {

/// Reads an 8-bit RGB PNG or a binary/ASCII PPM, normalized to [0, 1]. The
/// format is chosen from the file's magic bytes, not its extension.
ImageBuffer read_image(const std::filesystem::path& path);

/// Writes 8-bit RGB; the format follows the extension (.png or .ppm).
void write_image(const ImageBuffer& image, const std::filesystem::path& path);

/// ASCII PLY with x y z scale_0..2 rot_0..3 opacity red green blue per vertex.
/// Scales are stored as logarithms and opacity as a logit, like 3DGS exports.
/// Values are printed with 9 significant digits unless asked otherwise
/// (checkpoints use 17 so that they restore bit-exactly).
void export_cloud_ply(const splat::GaussianCloud& cloud, const std::filesystem::path& path,
                      int significant_digits = 9);
splat::GaussianCloud import_cloud_ply(const std::filesystem::path& path);

/// Unit quaternion (x, y, z, w) with w >= 0.
Eigen::Vector4d rotation_to_quaternion(const Mat3& rotation);
Mat3 quaternion_to_rotation(const Eigen::Vector4d& xyzw);

/// One line per pose, `id tx ty tz qx qy qz qw`, holding the world-to-camera
/// rotation and translation. Poses without ids are numbered from 0.
void export_trajectory(const metrics::Trajectory& trajectory, const std::filesystem::path& path);
metrics::Trajectory import_trajectory(const std::filesystem::path& path);

/// Formats a double with 17 significant digits, printing negative zero as 0.
std::string format_exact(double value);

}  // namespace jogs::io
