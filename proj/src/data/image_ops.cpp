#include "compose/image_ops.hpp"

#include <cmath>

#include <opencv2/imgcodecs.hpp>

#include "compose/errors.hpp"

namespace compose {

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("gaussian_kernel: sigma must be positive");
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

cv::Mat gaussian_blur(const cv::Mat& image, double sigma) {
  if (image.empty()) return image.clone();
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int channels = image.channels();
  const int rows = image.rows, cols = image.cols;

  cv::Mat src;
  image.convertTo(src, CV_MAKETYPE(CV_64F, channels));
  cv::Mat tmp(rows, cols, src.type());
  cv::Mat dst(rows, cols, src.type());

  for (int y = 0; y < rows; ++y) {
    const double* in = src.ptr<double>(y);
    double* out = tmp.ptr<double>(y);
    for (int x = 0; x < cols; ++x) {
      for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          acc += kernel[static_cast<std::size_t>(t + radius)] * in[reflect_index(x + t, cols) * channels + c];
        }
        out[x * channels + c] = acc;
      }
    }
  }
  const std::size_t row_len = static_cast<std::size_t>(cols) * channels;
  for (int y = 0; y < rows; ++y) {
    double* out = dst.ptr<double>(y);
    std::fill(out, out + row_len, 0.0);
    for (int t = -radius; t <= radius; ++t) {
      const double w = kernel[static_cast<std::size_t>(t + radius)];
      const double* in = tmp.ptr<double>(reflect_index(y + t, rows));
      for (std::size_t i = 0; i < row_len; ++i) out[i] += w * in[i];
    }
  }
  cv::Mat result;
  dst.convertTo(result, image.type());
  return result;
}

cv::Mat pad_image_to_square(const cv::Mat& image, const SquareFrame& frame, const std::array<double, 3>& fill_rgb) {
  if (image.cols != frame.width || image.rows != frame.height) {
    throw InvalidArgument("pad_image_to_square: image does not match frame");
  }
  const cv::Scalar fill(fill_rgb[2], fill_rgb[1], fill_rgb[0]);
  cv::Mat out(frame.side, frame.side, image.type(), fill);
  image.copyTo(out(cv::Rect(frame.offset_x, frame.offset_y, frame.width, frame.height)));
  return out;
}

cv::Mat read_color_image(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw IoError("cannot read image " + path.string());
  return img;
}

cv::Mat read_mask_image(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (img.empty()) throw IoError("cannot read mask " + path.string());
  return img;
}

void write_image(const std::filesystem::path& path, const cv::Mat& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), image)) throw IoError("cannot write image " + path.string());
}

cv::Mat decode_color_image(const std::vector<unsigned char>& bytes) {
  if (bytes.empty()) return {};
  try {
    return cv::imdecode(bytes, cv::IMREAD_COLOR);
  } catch (const cv::Exception&) {
    return {};
  }
}

std::vector<unsigned char> encode_png(const cv::Mat& image) {
  std::vector<unsigned char> out;
  if (!cv::imencode(".png", image, out)) throw IoError("PNG encoding failed");
  return out;
}

}  // namespace compose
