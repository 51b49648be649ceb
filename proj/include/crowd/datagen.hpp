#pragma once

#include <cstdint>
#include <utility>

#include "crowd/points.hpp"
#include "crowd/tensor.hpp"

namespace crowd {

// Crowd-density regime of a generated scene. Count ranges are defined at the
// 128x128 reference size and scale with image area; see band_count_range.
enum class DensityBand { low, medium, high };

struct SceneConfig {
  int image_size = 64;  // square; must be a positive multiple of 32
  DensityBand band = DensityBand::low;
  int count_min = -1;  // set both >= 0 to override the band range
  int count_max = -1;
  double radius_min = 1.5;  // head-bump radius range, pixels
  double radius_max = 3.0;
  double background_amplitude = 0.15;  // low-frequency texture strength
  int clutter_count = 3;               // unannotated distractor blobs
  double min_spacing = 4.0;  // minimum distance between head centers, pixels
  std::uint64_t seed = 0;
};

struct Sample {
  Tensor image;      // {1, h, w}, values in [0, 1] on the 8-bit lattice k/255
  PointList points;  // head centers, strictly inside the image
};

// Inclusive head-count range for a band at the given image size. The three
// bands are disjoint and stack to cover [0, high.second] at every size.
std::pair<int, int> band_count_range(DensityBand band, int image_size);

// Renders a deterministic synthetic scene: bright radial bumps at the
// annotated head centers, a low-frequency background texture, and darker,
// larger clutter blobs that carry no annotation.
Sample gen_scene(const SceneConfig& cfg);

// Extracts the [top, top+height) x [left, left+width) window. Pixel values
// are copied verbatim; points inside the window shift into the crop frame,
// points outside are dropped.
Sample crop_sample(const Sample& s, int top, int left, int height, int width);

}  // namespace crowd
