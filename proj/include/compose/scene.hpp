#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>
#include <opencv2/core.hpp>

#include "compose/geometry.hpp"
#include "compose/nn/tensor.hpp"

namespace compose {

using Rgb = std::array<std::uint8_t, 3>;

struct Detection {
  int category = 0;
  PixelBox box;
  double score = 1.0;
};

void to_json(nlohmann::json& j, const Detection& d);
void from_json(const nlohmann::json& j, Detection& d);

/// Category -> color map drawn from a seeded generator. Colors are distinct and never black, so they
/// cannot be confused with the layout background.
class Palette {
 public:
  Palette() = default;
  Palette(std::uint64_t seed, std::vector<int> categories);

  static Palette from_colors(std::map<int, Rgb> colors, std::uint64_t seed = 0);

  Rgb rgb(int category) const;
  bool contains(int category) const { return colors_.count(category) != 0; }
  const std::map<int, Rgb>& colors() const { return colors_; }
  std::uint64_t seed() const { return seed_; }

  friend bool operator==(const Palette&, const Palette&) = default;

 private:
  std::uint64_t seed_ = 0;
  std::map<int, Rgb> colors_;
};

void to_json(nlohmann::json& j, const Palette& p);
void from_json(const nlohmann::json& j, Palette& p);

/// Filled detector boxes on black. Pixels covered by several boxes get the per-channel mean of their
/// colors, rounded half up. Detections below min_score and categories absent from the palette are
/// skipped; boxes are clipped to the canvas.
cv::Mat render_layout(std::span<const Detection> detections, const Palette& palette, cv::Size size,
                      double min_score = 0.7);

class Inpainter {
 public:
  virtual ~Inpainter() = default;
  /// Fill the nonzero mask pixels of a BGR image from their surroundings.
  virtual cv::Mat inpaint(const cv::Mat& image, const cv::Mat& mask) const = 0;
};

/// Fast-marching diffusion inpainting (Telea).
class FastMarchingInpainter : public Inpainter {
 public:
  explicit FastMarchingInpainter(double radius = 5.0) : radius_(radius) {}
  cv::Mat inpaint(const cv::Mat& image, const cv::Mat& mask) const override;

 private:
  double radius_;
};

/// Laplace (membrane) diffusion: masked pixels solve the discrete harmonic equation with the unmasked
/// pixels as boundary values, so constant fields and linear ramps are reproduced exactly. Solved by
/// successive over-relaxation starting from the fast-marching fill.
class HarmonicInpainter : public Inpainter {
 public:
  explicit HarmonicInpainter(double tolerance = 1e-3, int max_iterations = 20000)
      : tolerance_(tolerance), max_iterations_(max_iterations) {}
  cv::Mat inpaint(const cv::Mat& image, const cv::Mat& mask) const override;

 private:
  double tolerance_;
  int max_iterations_;
};

struct EraseOptions {
  int dilation_radius = 7;
  double max_mask_fraction = 0.9;
};

/// Remove the masked object: dilate the mask, blank the pixels under it and inpaint. Throws
/// InvalidArgument for a mismatched mask or one covering more than max_mask_fraction of the image.
cv::Mat erase_person(const cv::Mat& image, const cv::Mat& mask, const Inpainter& inpainter,
                     const EraseOptions& options = {});

struct SceneOptions {
  int input_resolution = 480;
  double blur_sigma = 3.2;
  double min_detection_score = 0.7;
  std::array<double, 3> pad_rgb = kImageNetMeanRgb;
};

void to_json(nlohmann::json& j, const SceneOptions& s);
void from_json(const nlohmann::json& j, SceneOptions& s);

/// Network input pair: blurred background and detector layout, both square at input resolution.
struct SceneInput {
  cv::Mat blurred;  // I_B, CV_8UC3
  cv::Mat layout;   // I_L, CV_8UC3
  SquareFrame frame;
};

/// Blur at native resolution, render the layout at native resolution, pad both to a square (mean
/// color for the image, black for the layout) and resize to the input resolution.
SceneInput make_scene_input(const cv::Mat& background, std::span<const Detection> detections, const Palette& palette,
                            const SceneOptions& options);

/// 6 x R x R tensor: the blurred image's three channels then the layout's, scaled to [-0.5, 0.5].
nn::Tensor scene_to_tensor(const SceneInput& scene);
nn::Tensor scene_to_tensor(const cv::Mat& blurred, const cv::Mat& layout);

}  // namespace compose
