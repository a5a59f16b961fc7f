#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace jogs {

using Rgb = std::array<double, 3>;

/// Row-major H x W x 3 image with values nominally in [0, 1]. Pixel (x, y)
/// is centered at integer coordinates.
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(int width, int height, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  double& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c) const { return data_[index(x, y, c)]; }
  Rgb pixel(int x, int y) const;
  void set_pixel(int x, int y, const Rgb& rgb);

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const ImageBuffer& other) const {
    return width_ == other.width_ && height_ == other.height_;
  }

  /// Luma (Rec. 601 weights), one value per pixel.
  std::vector<double> grayscale() const;

  bool operator==(const ImageBuffer&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

}  // namespace jogs
