#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

#include "compose/geometry.hpp"

namespace compose {

/// Separable Gaussian blur, kernel truncated at ceil(4 sigma), mirror (reflect-101) borders.
/// Works on any depth/channel count; 8-bit results are rounded and saturated.
cv::Mat gaussian_blur(const cv::Mat& image, double sigma);

/// Normalized 1-D kernel used by gaussian_blur (length 2 * ceil(4 sigma) + 1).
std::vector<double> gaussian_kernel(double sigma);

/// Mirror an out-of-range index back into [0, n) without repeating the edge sample.
int reflect_index(int i, int n);

/// Copy a BGR image into the square frame, filling the padding with an RGB color.
cv::Mat pad_image_to_square(const cv::Mat& image, const SquareFrame& frame, const std::array<double, 3>& fill_rgb);

cv::Mat read_color_image(const std::filesystem::path& path);
cv::Mat read_mask_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const cv::Mat& image);

/// Decode an in-memory PNG/JPEG; returns an empty Mat when undecodable.
cv::Mat decode_color_image(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_png(const cv::Mat& image);

}  // namespace compose
