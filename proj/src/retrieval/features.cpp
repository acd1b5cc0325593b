#include "compose/features.hpp"

#include <cmath>

#include <opencv2/imgproc.hpp>

#include "compose/errors.hpp"

namespace compose {

ColorHistogramExtractor::ColorHistogramExtractor(int dimension) : dimension_(dimension) {
  if (dimension < kFeatureLength) {
    throw InvalidArgument("histogram extractor needs at least " + std::to_string(kFeatureLength) + " dimensions");
  }
}

std::string ColorHistogramExtractor::id() const { return "histogram:" + std::to_string(dimension_); }

std::vector<double> ColorHistogramExtractor::activation(const cv::Mat& bgr) const {
  cv::Mat small;
  cv::resize(bgr, small, {64, 64}, 0, 0, cv::INTER_AREA);
  cv::Mat hsv;
  cv::cvtColor(small, hsv, cv::COLOR_BGR2HSV);
  std::vector<double> f(static_cast<std::size_t>(dimension_), 0.0);
  constexpr double kPixels = 64.0 * 64.0;
  for (int y = 0; y < 64; ++y) {
    const auto* row = small.ptr<cv::Vec3b>(y);
    const auto* hrow = hsv.ptr<cv::Vec3b>(y);
    for (int x = 0; x < 64; ++x) {
      const cv::Vec3b p = row[x];
      f[static_cast<std::size_t>((p[0] / 64) * 16 + (p[1] / 64) * 4 + p[2] / 64)] += 1.0 / kPixels;
      // hue in [0, 180); weight by saturation so grays do not vote
      f[64 + static_cast<std::size_t>(hrow[x][0] * 16 / 180)] += hrow[x][1] / 255.0 / kPixels;
      const std::size_t cell = static_cast<std::size_t>((y / 16) * 4 + x / 16);
      for (int c = 0; c < 3; ++c) f[80 + cell * 3 + static_cast<std::size_t>(c)] += p[c] / 255.0 / 256.0;
    }
  }
  return f;
}

OnnxExtractor::OnnxExtractor(const std::filesystem::path& model, int input_size)
    : model_path_(model), input_size_(input_size) {
  try {
    net_ = cv::dnn::readNetFromONNX(model.string());
  } catch (const cv::Exception& e) {
    throw IoError("cannot load ONNX backbone " + model.string() + ": " + e.what());
  }
  if (net_.empty()) throw IoError("cannot load ONNX backbone " + model.string());
  dimension_ = static_cast<int>(activation(cv::Mat(input_size, input_size, CV_8UC3, cv::Scalar::all(128))).size());
}

std::string OnnxExtractor::id() const { return "onnx:" + model_path_.string(); }

std::vector<double> OnnxExtractor::activation(const cv::Mat& bgr) const {
  cv::Mat resized, rgb;
  cv::resize(bgr, resized, {input_size_, input_size_}, 0, 0, cv::INTER_AREA);
  cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
  cv::subtract(rgb, cv::Scalar(0.485, 0.456, 0.406), rgb);
  cv::divide(rgb, cv::Scalar(0.229, 0.224, 0.225), rgb);
  cv::Mat out;
  {
    const std::lock_guard lock(mutex_);
    net_.setInput(cv::dnn::blobFromImage(rgb));
    out = net_.forward().clone();
  }
  // N x C [x H x W]: average any spatial extent away
  const int channels = out.size[1];
  const std::size_t spatial = out.total() / static_cast<std::size_t>(channels);
  std::vector<double> f(static_cast<std::size_t>(channels), 0.0);
  const float* data = out.ptr<float>();
  for (int c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) acc += data[static_cast<std::size_t>(c) * spatial + i];
    f[static_cast<std::size_t>(c)] = acc / static_cast<double>(spatial);
  }
  return f;
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& spec) {
  if (spec == "histogram") return std::make_unique<ColorHistogramExtractor>();
  if (spec.rfind("histogram:", 0) == 0) return std::make_unique<ColorHistogramExtractor>(std::stoi(spec.substr(10)));
  if (spec.rfind("onnx:", 0) == 0) return std::make_unique<OnnxExtractor>(spec.substr(5));
  throw InvalidArgument("unknown feature extractor '" + spec + "'");
}

Descriptor extract_global(const cv::Mat& image, const FeatureExtractor& extractor) {
  if (image.empty() || image.type() != CV_8UC3) throw InvalidArgument("descriptor input must be an 8-bit BGR image");
  std::vector<double> a;
  try {
    a = extractor.activation(image);
  } catch (const cv::Exception& e) {
    throw StateError(extractor.id() + " failed: " + e.what());
  }
  if (static_cast<int>(a.size()) != extractor.dimension()) {
    throw StateError(extractor.id() + " produced " + std::to_string(a.size()) + " values, declared " +
                     std::to_string(extractor.dimension()));
  }
  double norm = 0.0;
  for (double v : a) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw StateError(extractor.id() + " produced a zero or non-finite activation");
  Descriptor d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = static_cast<float>(a[i] / norm);
  return d;
}

cv::Rect local_patch(const PixelBox& box, int image_width, int image_height) {
  const double cx = (box.x_min + box.x_max) / 2.0, cy = (box.y_min + box.y_max) / 2.0;
  const double w = box.width(), h = box.height();
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - w)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - h)));
  const int x1 = std::min(image_width, static_cast<int>(std::ceil(cx + w)));
  const int y1 = std::min(image_height, static_cast<int>(std::ceil(cy + h)));
  if (x1 - x0 < 8 || y1 - y0 < 8) {
    throw InvalidArgument("context patch is smaller than 8x8 after clipping");
  }
  return {x0, y0, x1 - x0, y1 - y0};
}

Descriptor extract_local(const cv::Mat& image, const PixelBox& box, const FeatureExtractor& extractor) {
  return extract_global(image(local_patch(box, image.cols, image.rows)), extractor);
}

}  // namespace compose
