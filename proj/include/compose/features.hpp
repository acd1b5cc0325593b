#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include "compose/geometry.hpp"

namespace compose {

using Descriptor = std::vector<float>;

/// Maps a BGR image to a fixed-length descriptor. Implementations must be deterministic.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string id() const = 0;
  virtual int dimension() const = 0;
  /// Raw (unnormalized) activation of length dimension().
  virtual std::vector<double> activation(const cv::Mat& bgr) const = 0;
};

/// Deterministic stand-in backbone: joint color histogram, hue histogram and a coarse spatial color
/// layout of a 64x64 downsample, zero-padded to the requested dimension.
class ColorHistogramExtractor : public FeatureExtractor {
 public:
  explicit ColorHistogramExtractor(int dimension = 2048);
  std::string id() const override;
  int dimension() const override { return dimension_; }
  std::vector<double> activation(const cv::Mat& bgr) const override;
  static constexpr int kFeatureLength = 64 + 16 + 48;

 private:
  int dimension_;
};

/// ONNX classification backbone run through OpenCV's dnn module. The input is resized to the given
/// resolution, converted to RGB and normalized with ImageNet mean/std; a spatial output is averaged
/// over its spatial extent.
class OnnxExtractor : public FeatureExtractor {
 public:
  explicit OnnxExtractor(const std::filesystem::path& model, int input_size = 224);
  std::string id() const override;
  int dimension() const override { return dimension_; }
  std::vector<double> activation(const cv::Mat& bgr) const override;

 private:
  std::filesystem::path model_path_;
  int input_size_;
  mutable std::mutex mutex_;  // cv::dnn::Net::forward is not reentrant
  mutable cv::dnn::Net net_;
  int dimension_ = 0;
};

/// "histogram", "histogram:<dim>" or "onnx:<path>".
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec);

/// Backbone activation scaled to unit L2 norm. Throws InvalidArgument for an empty image and
/// StateError (with context) for a zero or mis-sized activation.
Descriptor extract_global(const cv::Mat& image, const FeatureExtractor& extractor);

/// Same-center patch twice the box's width and height, clipped to the image (integer pixel grid,
/// outward rounding). Throws InvalidArgument when the clipped patch is smaller than 8x8.
cv::Rect local_patch(const PixelBox& box, int image_width, int image_height);

Descriptor extract_local(const cv::Mat& image, const PixelBox& box, const FeatureExtractor& extractor);

}  // namespace compose
