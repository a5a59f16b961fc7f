#include "jogs/image.hpp"

#include "jogs/error.hpp"

namespace jogs {

ImageBuffer::ImageBuffer(int width, int height, double fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) {
    throw Error(ErrorKind::kInvalidArgument, "negative image size");
  }
  data_.assign(static_cast<std::size_t>(width) * height * 3, fill);
}

Rgb ImageBuffer::pixel(int x, int y) const {
  const std::size_t i = index(x, y, 0);
  return {data_[i], data_[i + 1], data_[i + 2]};
}

void ImageBuffer::set_pixel(int x, int y, const Rgb& rgb) {
  const std::size_t i = index(x, y, 0);
  data_[i] = rgb[0];
  data_[i + 1] = rgb[1];
  data_[i + 2] = rgb[2];
}

std::vector<double> ImageBuffer::grayscale() const {
  std::vector<double> out(static_cast<std::size_t>(width_) * height_);
  for (std::size_t p = 0; p < out.size(); ++p) {
    out[p] = 0.299 * data_[3 * p] + 0.587 * data_[3 * p + 1] + 0.114 * data_[3 * p + 2];
  }
  return out;
}

}  // namespace jogs
