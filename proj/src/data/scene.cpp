#include "compose/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <opencv2/imgproc.hpp>
#include <opencv2/photo.hpp>

#include "compose/errors.hpp"
#include "compose/image_ops.hpp"

namespace compose {

void to_json(nlohmann::json& j, const Detection& d) {
  j = {{"category", d.category},
       {"box", {d.box.x_min, d.box.y_min, d.box.width(), d.box.height()}},
       {"score", d.score}};
}

void from_json(const nlohmann::json& j, Detection& d) {
  d.category = j.at("category").get<int>();
  const auto& b = j.at("box");
  d.box = PixelBox::from_xywh(b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                              b.at(3).get<double>());
  d.score = j.value("score", 1.0);
}

Palette::Palette(std::uint64_t seed, std::vector<int> categories) : seed_(seed) {
  std::sort(categories.begin(), categories.end());
  categories.erase(std::unique(categories.begin(), categories.end()), categories.end());
  std::set<Rgb> used;
  for (int cat : categories) {
    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(cat + 1)));
    std::uniform_int_distribution<int> channel(0, 255);
    Rgb c{};
    do {
      c = {static_cast<std::uint8_t>(channel(rng)), static_cast<std::uint8_t>(channel(rng)),
           static_cast<std::uint8_t>(channel(rng))};
    } while (c[0] + c[1] + c[2] < 96 || used.count(c));
    used.insert(c);
    colors_[cat] = c;
  }
}

Palette Palette::from_colors(std::map<int, Rgb> colors, std::uint64_t seed) {
  Palette p;
  p.seed_ = seed;
  p.colors_ = std::move(colors);
  return p;
}

Rgb Palette::rgb(int category) const {
  const auto it = colors_.find(category);
  if (it == colors_.end()) throw InvalidArgument("palette has no color for category " + std::to_string(category));
  return it->second;
}

void to_json(nlohmann::json& j, const Palette& p) {
  nlohmann::json colors = nlohmann::json::object();
  for (const auto& [cat, c] : p.colors()) colors[std::to_string(cat)] = {c[0], c[1], c[2]};
  j = {{"seed", p.seed()}, {"colors", colors}};
}

void from_json(const nlohmann::json& j, Palette& p) {
  std::map<int, Rgb> colors;
  for (const auto& [key, c] : j.at("colors").items()) {
    colors[std::stoi(key)] = {c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()};
  }
  p = Palette::from_colors(std::move(colors), j.value("seed", std::uint64_t{0}));
}

cv::Mat render_layout(std::span<const Detection> detections, const Palette& palette, cv::Size size,
                      double min_score) {
  const std::size_t pixels = static_cast<std::size_t>(size.width) * size.height;
  std::vector<std::uint32_t> sums(pixels * 3, 0);
  std::vector<std::uint32_t> counts(pixels, 0);
  for (const auto& d : detections) {
    if (d.score < min_score || !palette.contains(d.category)) continue;
    // A pixel is covered when its center lies inside the box.
    const int x0 = std::max(0, static_cast<int>(std::ceil(d.box.x_min - 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(d.box.y_min - 0.5)));
    const int x1 = std::min(size.width, static_cast<int>(std::ceil(d.box.x_max - 0.5)));
    const int y1 = std::min(size.height, static_cast<int>(std::ceil(d.box.y_max - 0.5)));
    const Rgb c = palette.rgb(d.category);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * size.width + x;
        ++counts[p];
        for (int k = 0; k < 3; ++k) sums[p * 3 + k] += c[static_cast<std::size_t>(k)];
      }
    }
  }
  cv::Mat out(size, CV_8UC3, cv::Scalar(0, 0, 0));
  for (int y = 0; y < size.height; ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < size.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * size.width + x;
      const std::uint32_t n = counts[p];
      if (n == 0) continue;
      for (int k = 0; k < 3; ++k) {
        // round half up: floor((2 s + n) / 2n)
        const auto v = static_cast<std::uint8_t>((2 * sums[p * 3 + k] + n) / (2 * n));
        row[x][2 - k] = v;  // RGB -> BGR
      }
    }
  }
  return out;
}

cv::Mat FastMarchingInpainter::inpaint(const cv::Mat& image, const cv::Mat& mask) const {
  cv::Mat out;
  cv::inpaint(image, mask, out, radius_, cv::INPAINT_TELEA);
  return out;
}

cv::Mat HarmonicInpainter::inpaint(const cv::Mat& image, const cv::Mat& mask) const {
  const cv::Mat seeded = FastMarchingInpainter().inpaint(image, mask);
  const int rows = image.rows, cols = image.cols, ch = image.channels();
  std::vector<cv::Point> unknown;
  cv::findNonZero(mask, unknown);
  if (unknown.empty()) return image.clone();

  cv::Mat u;
  seeded.convertTo(u, CV_MAKETYPE(CV_64F, ch));
  // Near-optimal relaxation factor for a region of this extent.
  const cv::Rect extent = cv::boundingRect(unknown);
  const double span = std::max(extent.width, extent.height) + 2.0;
  const double omega = 2.0 / (1.0 + std::sin(std::numbers::pi / span));
  const int dx[4] = {-1, 1, 0, 0}, dy[4] = {0, 0, -1, 1};
  for (int it = 0; it < max_iterations_; ++it) {
    double worst = 0.0;
    for (const auto& p : unknown) {
      double* up = u.ptr<double>(p.y) + p.x * ch;
      for (int c = 0; c < ch; ++c) {
        double sum = 0.0;
        int n = 0;
        for (int k = 0; k < 4; ++k) {
          const int x = p.x + dx[k], y = p.y + dy[k];
          if (x < 0 || y < 0 || x >= cols || y >= rows) continue;  // reflecting image border
          sum += u.ptr<double>(y)[x * ch + c];
          ++n;
        }
        const double delta = omega * (sum / n - up[c]);
        up[c] += delta;
        worst = std::max(worst, std::abs(delta));
      }
    }
    if (worst < tolerance_) break;
  }
  cv::Mat out;
  u.convertTo(out, image.type());
  return out;
}

cv::Mat erase_person(const cv::Mat& image, const cv::Mat& mask, const Inpainter& inpainter,
                     const EraseOptions& options) {
  if (mask.size() != image.size() || mask.type() != CV_8UC1) {
    throw InvalidArgument("erase_person: mask must be single-channel 8-bit with the image's dimensions");
  }
  const double covered = static_cast<double>(cv::countNonZero(mask)) / static_cast<double>(mask.total());
  if (covered > options.max_mask_fraction) {
    throw InvalidArgument("erase_person: mask covers " + std::to_string(covered * 100.0) + "% of the image");
  }
  if (covered == 0.0) return image.clone();
  cv::Mat dilated = mask != 0;
  if (options.dilation_radius > 0) {
    const int k = 2 * options.dilation_radius + 1;
    cv::dilate(dilated, dilated, cv::getStructuringElement(cv::MORPH_ELLIPSE, cv::Size(k, k)));
  }
  cv::Mat blanked = image.clone();
  blanked.setTo(cv::Scalar::all(0), dilated);
  cv::Mat filled = inpainter.inpaint(blanked, dilated);
  // Only the masked region may change.
  cv::Mat out = image.clone();
  filled.copyTo(out, dilated);
  return out;
}

void to_json(nlohmann::json& j, const SceneOptions& s) {
  j = {{"input_resolution", s.input_resolution},
       {"blur_sigma", s.blur_sigma},
       {"min_detection_score", s.min_detection_score},
       {"pad_rgb", s.pad_rgb}};
}

void from_json(const nlohmann::json& j, SceneOptions& s) {
  const SceneOptions d;
  s.input_resolution = j.value("input_resolution", d.input_resolution);
  s.blur_sigma = j.value("blur_sigma", d.blur_sigma);
  s.min_detection_score = j.value("min_detection_score", d.min_detection_score);
  s.pad_rgb = j.value("pad_rgb", d.pad_rgb);
}

SceneInput make_scene_input(const cv::Mat& background, std::span<const Detection> detections, const Palette& palette,
                            const SceneOptions& options) {
  if (background.empty() || background.type() != CV_8UC3) {
    throw InvalidArgument("make_scene_input: expected an 8-bit BGR image");
  }
  const SquareFrame frame = pad_to_square(background.cols, background.rows);
  const cv::Mat blurred = gaussian_blur(background, options.blur_sigma);
  const cv::Mat layout = render_layout(detections, palette, background.size(), options.min_detection_score);
  const cv::Size target(options.input_resolution, options.input_resolution);
  SceneInput scene;
  scene.frame = frame;
  cv::resize(pad_image_to_square(blurred, frame, options.pad_rgb), scene.blurred, target, 0, 0, cv::INTER_AREA);
  cv::resize(pad_image_to_square(layout, frame, {0.0, 0.0, 0.0}), scene.layout, target, 0, 0, cv::INTER_AREA);
  return scene;
}

nn::Tensor scene_to_tensor(const cv::Mat& blurred, const cv::Mat& layout) {
  if (blurred.size() != layout.size() || blurred.type() != CV_8UC3 || layout.type() != CV_8UC3 ||
      blurred.rows != blurred.cols) {
    throw InvalidArgument("scene_to_tensor: expected two square 8-bit BGR images of equal size");
  }
  const int r = blurred.rows;
  nn::Tensor t({6, r, r});
  for (int y = 0; y < r; ++y) {
    const auto* b = blurred.ptr<cv::Vec3b>(y);
    const auto* l = layout.ptr<cv::Vec3b>(y);
    for (int x = 0; x < r; ++x) {
      for (int c = 0; c < 3; ++c) {
        t.at(c, y, x) = b[x][c] / 255.0 - 0.5;
        t.at(3 + c, y, x) = l[x][c] / 255.0 - 0.5;
      }
    }
  }
  return t;
}

nn::Tensor scene_to_tensor(const SceneInput& scene) { return scene_to_tensor(scene.blurred, scene.layout); }

}  // namespace compose
