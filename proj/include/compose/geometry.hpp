#pragma once

#include <array>
#include <utility>

namespace compose {

inline constexpr int kGridSize = 15;
inline constexpr int kNumCells = kGridSize * kGridSize;

/// Axis-aligned box in pixel coordinates (origin top-left, y down).
struct PixelBox {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x_min + x_max); }
  double center_y() const { return 0.5 * (y_min + y_max); }

  /// Finite, non-negative and strictly positive extent.
  bool valid() const;

  static PixelBox from_xywh(double x, double y, double w, double h) { return {x, y, x + w, y + h}; }

  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

/// Placement of a rectangular image inside the smallest enclosing square.
struct SquareFrame {
  int side = 0;
  int offset_x = 0;
  int offset_y = 0;
  int width = 0;
  int height = 0;

  friend bool operator==(const SquareFrame&, const SquareFrame&) = default;
};

/// Box expressed by its standing point (bottom center) and size, all relative to the square side.
struct NormalizedBox {
  double x_stand = 0.0;
  double y_stand = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool valid() const;

  friend bool operator==(const NormalizedBox&, const NormalizedBox&) = default;
};

/// One cell of the square classification grid. index = row * grid + col.
struct GridCell {
  int col = 0;
  int row = 0;
  int index = 0;

  static GridCell from_index(int index, int grid = kGridSize);
  static GridCell from_col_row(int col, int row, int grid = kGridSize);

  friend bool operator==(const GridCell&, const GridCell&) = default;
};

/// ImageNet channel means in 0-255, RGB order.
inline constexpr std::array<double, 3> kImageNetMeanRgb{123.675, 116.28, 103.53};

SquareFrame pad_to_square(int width, int height);

NormalizedBox normalize_box(const PixelBox& box, const SquareFrame& frame);
PixelBox denormalize_box(const NormalizedBox& nbox, const SquareFrame& frame);

GridCell encode_cell(double u, double v, int grid = kGridSize);
std::pair<double, double> decode_cell(const GridCell& cell, int grid = kGridSize);

double iou(const PixelBox& a, const PixelBox& b);

/// IoU of two boxes after moving them onto a common center; a pure size-compatibility score.
double center_aligned_iou(std::pair<double, double> size_a, std::pair<double, double> size_b);

/// Clamp a box to [0,width]x[0,height]. The result may be degenerate if the box lies outside.
PixelBox clip_box(const PixelBox& box, double width, double height);

}  // namespace compose
