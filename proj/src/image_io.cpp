#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <vector>

#include <png.h>

#include "jogs/error.hpp"
#include "jogs/io.hpp"

namespace jogs::io {
namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

ImageBuffer read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw Error(ErrorKind::kData, "cannot decode PNG '" + path.string() + "': " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw Error(ErrorKind::kData, "cannot decode PNG '" + path.string() + "': " + msg);
  }
  ImageBuffer img(static_cast<int>(png.width), static_cast<int>(png.height));
  for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = bytes[i] / 255.0;
  return img;
}

// Next whitespace-separated header token, skipping '#' comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

ImageBuffer read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  const auto fail = [&](const std::string& why) {
    return Error(ErrorKind::kData, "cannot decode PPM '" + path.string() + "': " + why);
  };
  const std::string magic = ppm_token(in);
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(ppm_token(in));
    h = std::stoi(ppm_token(in));
    maxval = std::stoi(ppm_token(in));
  } catch (const std::logic_error&) {
    throw fail("malformed header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw fail("bad dimensions or maxval");
  ImageBuffer img(w, h);
  auto& d = img.data();
  if (magic == "P6") {
    const int bytes_per = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> raw(d.size() * bytes_per);
    if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
      throw fail("truncated pixel data");
    }
    for (std::size_t i = 0; i < d.size(); ++i) {
      const int v = bytes_per == 1 ? raw[i] : (raw[2 * i] << 8) | raw[2 * i + 1];
      d[i] = static_cast<double>(v) / maxval;
    }
  } else if (magic == "P3") {
    for (auto& v : d) {
      int x;
      if (!(in >> x) || x < 0 || x > maxval) throw fail("bad ASCII sample");
      v = static_cast<double>(x) / maxval;
    }
  } else {
    throw fail("unsupported magic '" + magic + "'");
  }
  return img;
}

}  // namespace

ImageBuffer read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kData, "cannot open image '" + path.string() + "'");
  char magic[8] = {};
  in.read(magic, 8);
  in.close();
  static constexpr unsigned char kPngMagic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (std::equal(std::begin(kPngMagic), std::end(kPngMagic), reinterpret_cast<unsigned char*>(magic))) {
    return read_png(path);
  }
  if (magic[0] == 'P' && (magic[1] == '6' || magic[1] == '3')) return read_ppm(path);
  throw Error(ErrorKind::kData, "unrecognized image format '" + path.string() + "'");
}

void write_image(const ImageBuffer& image, const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes(image.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(image.data()[i]);
  const std::string ext = path.extension().string();
  if (ext == ".png") {
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = static_cast<png_uint_32>(image.width());
    png.height = static_cast<png_uint_32>(image.height());
    png.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr)) {
      throw Error(ErrorKind::kIo, "cannot write '" + path.string() + "': " + png.message);
    }
    return;
  }
  if (ext != ".ppm") throw Error(ErrorKind::kInvalidArgument, "image extension must be .png or .ppm");
  std::ofstream out(path, std::ios::binary);
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + path.string() + "'");
}

}  // namespace jogs::io
