#include "crowd/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "crowd/errors.hpp"
#include "crowd/rng.hpp"

namespace crowd {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kBaseGray = 0.35;

void check_size(int image_size) {
  if (image_size <= 0 || image_size % 32 != 0)
    throw BadSize("image size must be a positive multiple of 32, got " +
                  std::to_string(image_size));
}

// Bright disc with a soft skirt: full strength inside r/2, Gaussian falloff
// over the next half radius (e^-2 at distance r).
double disc(double d, double r) {
  double core = 0.5 * r;
  if (d <= core) return 1.0;
  double t = (d - core) / core;
  return std::exp(-2.0 * t * t);
}

void splat(std::vector<double>& img, int size, double cx, double cy, double r,
           double amp) {
  int reach = static_cast<int>(std::ceil(2.0 * r));
  int r0 = std::max(0, static_cast<int>(std::floor(cy)) - reach);
  int r1 = std::min(size - 1, static_cast<int>(std::floor(cy)) + reach);
  int c0 = std::max(0, static_cast<int>(std::floor(cx)) - reach);
  int c1 = std::min(size - 1, static_cast<int>(std::floor(cx)) + reach);
  for (int row = r0; row <= r1; ++row)
    for (int col = c0; col <= c1; ++col) {
      double d = std::hypot(col + 0.5 - cx, row + 0.5 - cy);
      img[static_cast<std::size_t>(row * size + col)] += amp * disc(d, r);
    }
}

}  // namespace

std::pair<int, int> band_count_range(DensityBand band, int image_size) {
  check_size(image_size);
  double scale =
      static_cast<double>(image_size) * image_size / (128.0 * 128.0);
  int low_hi = std::max(0L, std::lround(10.0 * scale));
  int med_hi = std::max<long>(low_hi + 1, std::lround(60.0 * scale));
  int high_hi = std::max<long>(med_hi + 1, std::lround(200.0 * scale));
  switch (band) {
    case DensityBand::low:
      return {0, low_hi};
    case DensityBand::medium:
      return {low_hi + 1, med_hi};
    case DensityBand::high:
      return {med_hi + 1, high_hi};
  }
  throw ConfigError("unknown density band");
}

Sample gen_scene(const SceneConfig& cfg) {
  check_size(cfg.image_size);
  int lo, hi;
  if (cfg.count_min >= 0 || cfg.count_max >= 0) {
    if (cfg.count_min < 0 || cfg.count_max < cfg.count_min)
      throw ConfigError(
          "count override requires 0 <= count_min <= count_max, got " +
          std::to_string(cfg.count_min) + ".." + std::to_string(cfg.count_max));
    lo = cfg.count_min;
    hi = cfg.count_max;
  } else {
    std::tie(lo, hi) = band_count_range(cfg.band, cfg.image_size);
  }
  if (cfg.radius_min < 1.0 || cfg.radius_max < cfg.radius_min)
    throw ConfigError("radii must satisfy 1 <= radius_min <= radius_max");
  if (cfg.background_amplitude < 0.0 || cfg.background_amplitude > 0.5)
    throw ConfigError("background_amplitude must lie in [0, 0.5]");
  if (cfg.clutter_count < 0) throw ConfigError("clutter_count must be >= 0");
  if (cfg.min_spacing < 0.0) throw ConfigError("min_spacing must be >= 0");

  const int size = cfg.image_size;
  Rng rng(mix_seed(cfg.seed, 0xD47Aull));
  int n = rng.uniform_int(lo, hi);

  // Low-frequency background: three weighted separable waves around a
  // mid-gray base. Integer frequencies keep the image mean at the base.
  struct Wave {
    double fx, fy, px, py, w;
  };
  Wave waves[3];
  double wsum = 0.0;
  for (Wave& wv : waves) {
    wv.fx = rng.uniform_int(1, 3);
    wv.fy = rng.uniform_int(1, 3);
    wv.px = rng.uniform(0.0, 2.0 * kPi);
    wv.py = rng.uniform(0.0, 2.0 * kPi);
    wv.w = rng.uniform(0.5, 1.0);
    wsum += wv.w;
  }
  std::vector<double> img(static_cast<std::size_t>(size) * size);
  for (int row = 0; row < size; ++row)
    for (int col = 0; col < size; ++col) {
      double tex = 0.0;
      for (const Wave& wv : waves)
        tex += wv.w *
               std::sin(2.0 * kPi * wv.fx * (col + 0.5) / size + wv.px) *
               std::sin(2.0 * kPi * wv.fy * (row + 0.5) / size + wv.py);
      img[static_cast<std::size_t>(row * size + col)] =
          kBaseGray + cfg.background_amplitude * tex / wsum;
    }

  // Unannotated clutter: darker and wider than any head bump.
  for (int k = 0; k < cfg.clutter_count; ++k) {
    double cx = rng.uniform(1.0, size - 1.0);
    double cy = rng.uniform(1.0, size - 1.0);
    double r = cfg.radius_max * rng.uniform(1.5, 2.5);
    double depth = rng.uniform(0.2, 0.35);
    splat(img, size, cx, cy, r, -depth);
  }

  // Heads: dart-throwing placement with a minimum pairwise spacing, then a
  // bright bump per head.
  const double margin = std::max(1.0, cfg.radius_max);
  PointList points;
  points.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      double x = rng.uniform(margin, size - margin);
      double y = rng.uniform(margin, size - margin);
      bool ok = true;
      for (const Point& p : points)
        if (std::hypot(p.x - x, p.y - y) < cfg.min_spacing) {
          ok = false;
          break;
        }
      if (!ok) continue;
      points.push_back({x, y});
      placed = true;
    }
    if (!placed)
      throw ConfigError("cannot place " + std::to_string(n) +
                        " heads at spacing " + std::to_string(cfg.min_spacing) +
                        " in a " + std::to_string(size) + "px image");
    double r = rng.uniform(cfg.radius_min, cfg.radius_max);
    double amp = rng.uniform(0.55, 0.85);
    splat(img, size, points.back().x, points.back().y, r, amp);
  }

  // Clamp to [0,1] and snap to the 8-bit lattice so the stored image equals
  // its on-disk form exactly.
  for (double& v : img) {
    v = std::clamp(v, 0.0, 1.0);
    v = std::lround(v * 255.0) / 255.0;
  }

  Sample out;
  out.image = Tensor::from_data({1, size, size}, std::move(img));
  out.points = std::move(points);
  return out;
}

Sample crop_sample(const Sample& s, int top, int left, int height, int width) {
  if (!s.image.defined() || s.image.ndim() != 3 || s.image.dim(0) != 1)
    throw ShapeMismatch("crop_sample: image must be 1xHxW");
  const int h = s.image.dim(1), w = s.image.dim(2);
  if (height <= 0 || width <= 0 || top < 0 || left < 0 || top + height > h ||
      left + width > w)
    throw BadSize("crop window [" + std::to_string(top) + "," +
                  std::to_string(left) + "," + std::to_string(height) + "," +
                  std::to_string(width) + "] does not fit " +
                  std::to_string(h) + "x" + std::to_string(w));
  std::vector<double> v(static_cast<std::size_t>(height) * width);
  const double* src = s.image.data();
  for (int row = 0; row < height; ++row)
    std::copy_n(src + static_cast<std::size_t>(row + top) * w + left, width,
                v.begin() + static_cast<std::size_t>(row) * width);
  Sample out;
  out.image = Tensor::from_data({1, height, width}, std::move(v));
  for (const Point& p : s.points)
    if (p.x >= left && p.x < left + width && p.y >= top && p.y < top + height)
      out.points.push_back({p.x - left, p.y - top});
  return out;
}

}  // namespace crowd
