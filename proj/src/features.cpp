#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "jogs/error.hpp"
#include "jogs/sfm.hpp"

namespace jogs::sfm {
namespace {

constexpr double kInputBlur = 0.5;
constexpr int kBorder = 5;
constexpr int kOrientationBins = 36;
constexpr double kOrientationPeakRatio = 0.8;
constexpr int kDescriptorWidth = 4;
constexpr int kDescriptorBins = 8;
constexpr double kDescriptorClamp = 0.2;

struct Plane {
  int w = 0;
  int h = 0;
  std::vector<double> v;

  Plane() = default;
  Plane(int width, int height) : w(width), h(height), v(static_cast<std::size_t>(width) * height) {}
  double operator()(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }
  double& operator()(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
};

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

Plane blur(const Plane& in, double sigma) {
  if (sigma <= 0.0) return in;
  const int radius = std::max(1, static_cast<int>(std::ceil(4.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (auto& x : k) x /= sum;
  Plane tmp(in.w, in.h), out(in.w, in.h);
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < in.w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * in(reflect(x + i, in.w), y);
      tmp(x, y) = s;
    }
  }
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < in.w; ++x) {
      double s = 0.0;
      for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp(x, reflect(y + i, in.h));
      out(x, y) = s;
    }
  }
  return out;
}

// Pixel i of the output sits at i / 2 in the input.
Plane upsample(const Plane& in) {
  Plane out(2 * in.w - 1, 2 * in.h - 1);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      const int x0 = x / 2, y0 = y / 2;
      const int x1 = std::min(x0 + (x & 1), in.w - 1), y1 = std::min(y0 + (y & 1), in.h - 1);
      out(x, y) = 0.25 * (in(x0, y0) + in(x1, y0) + in(x0, y1) + in(x1, y1));
    }
  }
  return out;
}

Plane downsample(const Plane& in) {
  Plane out((in.w + 1) / 2, (in.h + 1) / 2);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) out(x, y) = in(2 * x, 2 * y);
  }
  return out;
}

struct Octave {
  std::vector<Plane> gauss;
  std::vector<Plane> dog;
  double step = 1.0;  // octave pixel size in working-image pixels
};

std::vector<Octave> build_pyramid(const Plane& base_in, const FeatureConfig& cfg, double in_blur) {
  const int s = cfg.scales_per_octave;
  const double k = std::pow(2.0, 1.0 / s);
  std::vector<double> increments(s + 3, 0.0);
  for (int i = 1; i < s + 3; ++i) {
    const double prev = cfg.base_sigma * std::pow(k, i - 1);
    increments[i] = prev * std::sqrt(k * k - 1.0);
  }
  Plane base = blur(base_in, std::sqrt(std::max(0.01, cfg.base_sigma * cfg.base_sigma - in_blur * in_blur)));

  std::vector<Octave> pyramid;
  double step = 1.0;
  while (std::min(base.w, base.h) >= 2 * kBorder + 6) {
    Octave oct;
    oct.step = step;
    oct.gauss.push_back(base);
    for (int i = 1; i < s + 3; ++i) oct.gauss.push_back(blur(oct.gauss.back(), increments[i]));
    for (int i = 0; i + 1 < s + 3; ++i) {
      Plane d(base.w, base.h);
      for (std::size_t p = 0; p < d.v.size(); ++p) d.v[p] = oct.gauss[i + 1].v[p] - oct.gauss[i].v[p];
      oct.dog.push_back(std::move(d));
    }
    base = downsample(oct.gauss[s]);
    pyramid.push_back(std::move(oct));
    step *= 2.0;
  }
  return pyramid;
}

struct Extremum {
  int octave = 0;
  int layer = 0;
  double x = 0.0, y = 0.0;  // octave pixels, refined
  double layer_offset = 0.0;
  double response = 0.0;
};

bool is_extremum(const Octave& o, int layer, int x, int y, double threshold) {
  const double v = o.dog[layer](x, y);
  if (std::abs(v) <= threshold) return false;
  const bool is_max = v > 0.0;
  for (int dl = -1; dl <= 1; ++dl) {
    const Plane& p = o.dog[layer + dl];
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dl == 0 && dx == 0 && dy == 0) continue;
        const double n = p(x + dx, y + dy);
        if (is_max ? n >= v : n <= v) return false;
      }
    }
  }
  return true;
}

// Quadratic refinement in (x, y, layer). Returns false when the point drifts
// out, has low contrast, or lies on an edge.
bool refine_extremum(const Octave& o, const FeatureConfig& cfg, int layer, int x, int y,
                     Extremum& out) {
  const int s = cfg.scales_per_octave;
  const int w = o.dog[0].w, h = o.dog[0].h;
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  Eigen::Vector3d g;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= 5) return false;
    const Plane& c = o.dog[layer];
    const Plane& prev = o.dog[layer - 1];
    const Plane& next = o.dog[layer + 1];
    const double v = c(x, y);
    g = {0.5 * (c(x + 1, y) - c(x - 1, y)), 0.5 * (c(x, y + 1) - c(x, y - 1)),
         0.5 * (next(x, y) - prev(x, y))};
    Eigen::Matrix3d hs;
    hs(0, 0) = c(x + 1, y) + c(x - 1, y) - 2 * v;
    hs(1, 1) = c(x, y + 1) + c(x, y - 1) - 2 * v;
    hs(2, 2) = next(x, y) + prev(x, y) - 2 * v;
    hs(0, 1) = hs(1, 0) = 0.25 * (c(x + 1, y + 1) - c(x - 1, y + 1) - c(x + 1, y - 1) + c(x - 1, y - 1));
    hs(0, 2) = hs(2, 0) = 0.25 * (next(x + 1, y) - next(x - 1, y) - prev(x + 1, y) + prev(x - 1, y));
    hs(1, 2) = hs(2, 1) = 0.25 * (next(x, y + 1) - next(x, y - 1) - prev(x, y + 1) + prev(x, y - 1));
    const Eigen::FullPivLU<Eigen::Matrix3d> lu(hs);
    if (!lu.isInvertible()) return false;
    offset = -lu.solve(g);
    if (offset.cwiseAbs().maxCoeff() < 0.5) {
      const double contrast = v + 0.5 * g.dot(offset);
      if (std::abs(contrast) * s < cfg.contrast_threshold) return false;
      const double tr = hs(0, 0) + hs(1, 1);
      const double det = hs(0, 0) * hs(1, 1) - hs(0, 1) * hs(0, 1);
      const double r = cfg.edge_ratio;
      if (det <= 0.0 || tr * tr * r >= (r + 1) * (r + 1) * det) return false;
      out.layer = layer;
      out.x = x + offset.x();
      out.y = y + offset.y();
      out.layer_offset = offset.z();
      out.response = contrast;
      return true;
    }
    if (!offset.allFinite() || offset.cwiseAbs().maxCoeff() > 1e6) return false;
    x += static_cast<int>(std::lround(offset.x()));
    y += static_cast<int>(std::lround(offset.y()));
    layer += static_cast<int>(std::lround(offset.z()));
    if (layer < 1 || layer > s || x < kBorder || x >= w - kBorder || y < kBorder || y >= h - kBorder) {
      return false;
    }
  }
}

bool gradient_at(const Plane& p, int x, int y, double& mag, double& angle) {
  if (x < 1 || y < 1 || x >= p.w - 1 || y >= p.h - 1) return false;
  const double dx = p(x + 1, y) - p(x - 1, y);
  const double dy = p(x, y + 1) - p(x, y - 1);
  mag = std::hypot(dx, dy);
  angle = std::atan2(dy, dx);
  return true;
}

std::vector<double> dominant_orientations(const Plane& img, double x, double y, double sigma) {
  const double weight_sigma = 1.5 * sigma;
  const int radius = static_cast<int>(std::lround(3.0 * weight_sigma));
  std::array<double, kOrientationBins> hist{};
  const int cx = static_cast<int>(std::lround(x)), cy = static_cast<int>(std::lround(y));
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      double mag, angle;
      if (!gradient_at(img, cx + dx, cy + dy, mag, angle)) continue;
      const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * weight_sigma * weight_sigma));
      int bin = static_cast<int>(std::lround(kOrientationBins * angle / (2.0 * std::numbers::pi)));
      bin = ((bin % kOrientationBins) + kOrientationBins) % kOrientationBins;
      hist[bin] += w * mag;
    }
  }
  for (int pass = 0; pass < 2; ++pass) {
    std::array<double, kOrientationBins> smooth{};
    for (int i = 0; i < kOrientationBins; ++i) {
      auto at = [&](int j) { return hist[(j + kOrientationBins) % kOrientationBins]; };
      smooth[i] = (at(i - 2) + at(i + 2)) / 16.0 + 4.0 * (at(i - 1) + at(i + 1)) / 16.0 + 6.0 * at(i) / 16.0;
    }
    hist = smooth;
  }
  const double peak = *std::max_element(hist.begin(), hist.end());
  std::vector<double> out;
  if (!(peak > 0.0)) return out;
  for (int i = 0; i < kOrientationBins; ++i) {
    const double l = hist[(i + kOrientationBins - 1) % kOrientationBins];
    const double r = hist[(i + 1) % kOrientationBins];
    const double c = hist[i];
    if (c > l && c > r && c >= kOrientationPeakRatio * peak) {
      const double bin = i + 0.5 * (l - r) / (l - 2.0 * c + r);
      double angle = 2.0 * std::numbers::pi * bin / kOrientationBins;
      angle = std::remainder(angle, 2.0 * std::numbers::pi);
      out.push_back(angle);
    }
  }
  return out;
}

std::optional<Descriptor> describe(const Plane& img, double x, double y, double sigma, double angle) {
  constexpr int d = kDescriptorWidth;
  constexpr int n = kDescriptorBins;
  const double hist_width = 3.0 * sigma;
  const int radius = static_cast<int>(std::lround(hist_width * std::numbers::sqrt2 * (d + 1) * 0.5));
  const double cos_t = std::cos(angle), sin_t = std::sin(angle);
  std::array<double, (d + 2) * (d + 2) * (n + 2)> hist{};
  auto idx = [](int r, int c, int o) { return (r * (d + 2) + c) * (n + 2) + o; };
  const int cx = static_cast<int>(std::lround(x)), cy = static_cast<int>(std::lround(y));

  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const double xr = (cos_t * dx + sin_t * dy) / hist_width;
      const double yr = (-sin_t * dx + cos_t * dy) / hist_width;
      const double rbin = yr + 0.5 * d - 0.5;
      const double cbin = xr + 0.5 * d - 0.5;
      if (rbin <= -1.0 || rbin >= d || cbin <= -1.0 || cbin >= d) continue;
      double mag, grad_angle;
      if (!gradient_at(img, cx + dx, cy + dy, mag, grad_angle)) continue;
      const double w = std::exp(-(xr * xr + yr * yr) / (2.0 * 0.25 * d * d));
      double obin = (grad_angle - angle) * n / (2.0 * std::numbers::pi);
      obin = std::fmod(obin, static_cast<double>(n));
      if (obin < 0.0) obin += n;
      const int r0 = static_cast<int>(std::floor(rbin));
      const int c0 = static_cast<int>(std::floor(cbin));
      const int o0 = static_cast<int>(std::floor(obin));
      const double fr = rbin - r0, fc = cbin - c0, fo = obin - o0;
      const double v = w * mag;
      for (int ir = 0; ir <= 1; ++ir) {
        const double vr = v * (ir ? fr : 1.0 - fr);
        for (int ic = 0; ic <= 1; ++ic) {
          const double vc = vr * (ic ? fc : 1.0 - fc);
          for (int io = 0; io <= 1; ++io) {
            hist[idx(r0 + 1 + ir, c0 + 1 + ic, (o0 + io) % n)] += vc * (io ? fo : 1.0 - fo);
          }
        }
      }
    }
  }
  Descriptor desc;
  int k = 0;
  for (int r = 1; r <= d; ++r) {
    for (int c = 1; c <= d; ++c) {
      for (int o = 0; o < n; ++o) desc[k++] = hist[idx(r, c, o)];
    }
  }
  double norm = desc.norm();
  if (!(norm > 1e-12)) return std::nullopt;
  desc = (desc / norm).cwiseMin(kDescriptorClamp);
  norm = desc.norm();
  if (!(norm > 1e-12)) return std::nullopt;
  return desc / norm;
}

}  // namespace

std::vector<Keypoint> detect_features(const ImageBuffer& image, const FeatureConfig& config) {
  if (image.width() < 32 || image.height() < 32) {
    throw Error(ErrorKind::kInvalidArgument, "feature detection needs an image of at least 32x32");
  }
  if (config.scales_per_octave < 1 || !(config.base_sigma > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "invalid feature configuration");
  }
  Plane gray(image.width(), image.height());
  gray.v = image.grayscale();
  double in_blur = kInputBlur;
  double to_image = 1.0;
  if (config.upsample) {
    gray = upsample(gray);
    in_blur *= 2.0;
    to_image = 0.5;
  }
  const auto pyramid = build_pyramid(gray, config, in_blur);
  const int s = config.scales_per_octave;
  const double threshold = 0.5 * config.contrast_threshold / s;

  struct Candidate {
    Keypoint kp;
    double response;
  };
  std::vector<Candidate> found;
  for (int oi = 0; oi < static_cast<int>(pyramid.size()); ++oi) {
    const Octave& o = pyramid[oi];
    const int w = o.dog[0].w, h = o.dog[0].h;
    for (int layer = 1; layer <= s; ++layer) {
      for (int y = kBorder; y < h - kBorder; ++y) {
        for (int x = kBorder; x < w - kBorder; ++x) {
          if (!is_extremum(o, layer, x, y, threshold)) continue;
          Extremum e;
          if (!refine_extremum(o, config, layer, x, y, e)) continue;
          const double sigma_oct = config.base_sigma * std::pow(2.0, (e.layer + e.layer_offset) / s);
          const Plane& g = o.gauss[e.layer];
          for (double angle : dominant_orientations(g, e.x, e.y, sigma_oct)) {
            auto desc = describe(g, e.x, e.y, sigma_oct, angle);
            if (!desc) continue;
            Keypoint kp;
            kp.position = Vec2{e.x, e.y} * o.step * to_image;
            kp.scale = sigma_oct * o.step * to_image;
            kp.orientation = angle;
            kp.descriptor = *desc;
            if (kp.position.x() < 0.0 || kp.position.y() < 0.0 ||
                kp.position.x() > image.width() - 1 || kp.position.y() > image.height() - 1) {
              continue;
            }
            found.push_back({kp, std::abs(e.response)});
          }
        }
      }
    }
  }
  std::stable_sort(found.begin(), found.end(),
                   [](const Candidate& a, const Candidate& b) { return a.response > b.response; });
  if (static_cast<int>(found.size()) > config.max_keypoints) found.resize(config.max_keypoints);
  std::vector<Keypoint> out;
  out.reserve(found.size());
  for (auto& c : found) out.push_back(std::move(c.kp));
  return out;
}

int MatchPair::inlier_count() const {
  return static_cast<int>(std::count(inlier_mask.begin(), inlier_mask.end(), true));
}

MatchPair match_features(const std::vector<Keypoint>& a, const std::vector<Keypoint>& b,
                         double ratio) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "ratio must lie in (0, 1)");
  }
  MatchPair out;
  if (a.empty() || b.empty()) return out;
  Eigen::MatrixXd da(kDescriptorSize, a.size()), db(kDescriptorSize, b.size());
  for (std::size_t i = 0; i < a.size(); ++i) da.col(i) = a[i].descriptor;
  for (std::size_t j = 0; j < b.size(); ++j) db.col(j) = b[j].descriptor;
  // |x - y|^2 = |x|^2 + |y|^2 - 2 x.y
  const Eigen::MatrixXd dot = da.transpose() * db;
  Eigen::MatrixXd dist(a.size(), b.size());
  for (Eigen::Index i = 0; i < dist.rows(); ++i) {
    for (Eigen::Index j = 0; j < dist.cols(); ++j) {
      dist(i, j) = std::sqrt(std::max(0.0, da.col(i).squaredNorm() + db.col(j).squaredNorm() - 2.0 * dot(i, j)));
    }
  }
  std::vector<Eigen::Index> best_in_a(b.size());
  for (Eigen::Index j = 0; j < dist.cols(); ++j) dist.col(j).minCoeff(&best_in_a[j]);
  for (Eigen::Index i = 0; i < dist.rows(); ++i) {
    double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
    Eigen::Index j1 = -1;
    for (Eigen::Index j = 0; j < dist.cols(); ++j) {
      const double d = dist(i, j);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        j1 = j;
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (j1 < 0 || best_in_a[j1] != i) continue;
    if (dist.cols() > 1 && !(d1 < ratio * d2)) continue;
    out.correspondences.emplace_back(static_cast<int>(i), static_cast<int>(j1));
  }
  out.inlier_mask.assign(out.correspondences.size(), true);
  return out;
}

}  // namespace jogs::sfm
