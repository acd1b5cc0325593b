#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include <opencv2/core.hpp>

#include "compose/geometry.hpp"

namespace compose {

/// Category ids used by the synthetic scenes (COCO numbering).
inline constexpr int kPersonCategory = 1;
inline constexpr int kCarCategory = 3;
inline constexpr int kBenchCategory = 15;

struct SynthObject {
  int category = 0;
  PixelBox box;
  cv::Mat mask;  // full-image CV_8UC1, 0/255
};

struct SynthScene {
  cv::Mat image;  // BGR
  int theme = 0;
  double ground_y = 0.0;
  std::vector<SynthObject> objects;
};

struct SynthOptions {
  int images = 100;
  int width = 320;
  int height = 240;
  bool with_person = true;
  std::uint64_t seed = 0;
};

/// A street-like scene: sky over ground split at a horizon line, a bench standing on the line, and
/// optionally a person standing on the same line just right of the bench with a height twice the
/// bench's. Horizon height and person placement follow peaked distributions, so both the position
/// and the size histograms of the people are concentrated.
SynthScene generate_scene(std::mt19937_64& rng, const SynthOptions& options);

/// Writes <dir>/images/*.png and <dir>/annotations.json (COCO format, polygon segmentations).
void write_synthetic_coco(const std::filesystem::path& dir, const SynthOptions& options);

}  // namespace compose
