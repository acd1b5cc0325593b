#include "compose/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "compose/errors.hpp"

namespace compose {

namespace {
constexpr double kNormTolerance = 1e-6;

bool in_unit(double v) { return v >= -kNormTolerance && v <= 1.0 + kNormTolerance; }
}  // namespace

bool PixelBox::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) && std::isfinite(y_max) &&
         x_min >= 0.0 && y_min >= 0.0 && x_min < x_max && y_min < y_max;
}

bool NormalizedBox::valid() const {
  return in_unit(x_stand) && in_unit(y_stand) && w > 0.0 && h > 0.0 && w <= 1.0 + kNormTolerance &&
         h <= 1.0 + kNormTolerance;
}

GridCell GridCell::from_index(int index, int grid) {
  if (grid <= 0 || index < 0 || index >= grid * grid) {
    throw InvalidArgument("grid index " + std::to_string(index) + " out of range");
  }
  return {index % grid, index / grid, index};
}

GridCell GridCell::from_col_row(int col, int row, int grid) {
  if (col < 0 || row < 0 || col >= grid || row >= grid) {
    throw InvalidArgument("grid cell (" + std::to_string(col) + "," + std::to_string(row) + ") out of range");
  }
  return {col, row, row * grid + col};
}

SquareFrame pad_to_square(int width, int height) {
  if (width <= 0 || height <= 0) {
    throw InvalidArgument("pad_to_square: dimensions must be positive");
  }
  const int side = std::max(width, height);
  // The odd leftover pixel goes to the right/bottom edge.
  return {side, (side - width) / 2, (side - height) / 2, width, height};
}

NormalizedBox normalize_box(const PixelBox& box, const SquareFrame& frame) {
  const double s = frame.side;
  const double x_min = box.x_min + frame.offset_x;
  const double x_max = box.x_max + frame.offset_x;
  const double y_max = box.y_max + frame.offset_y;
  return {(x_min + x_max) / (2.0 * s), y_max / s, box.width() / s, box.height() / s};
}

PixelBox denormalize_box(const NormalizedBox& nbox, const SquareFrame& frame) {
  const double s = frame.side;
  const double cx = nbox.x_stand * s;
  const double half_w = 0.5 * nbox.w * s;
  const double y_max = nbox.y_stand * s;
  return {cx - half_w - frame.offset_x, y_max - nbox.h * s - frame.offset_y, cx + half_w - frame.offset_x,
          y_max - frame.offset_y};
}

GridCell encode_cell(double u, double v, int grid) {
  if (!(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0)) {
    throw InvalidArgument("encode_cell: coordinates must lie in [0,1]");
  }
  const int col = std::min(static_cast<int>(std::floor(u * grid)), grid - 1);
  const int row = std::min(static_cast<int>(std::floor(v * grid)), grid - 1);
  return {col, row, row * grid + col};
}

std::pair<double, double> decode_cell(const GridCell& cell, int grid) {
  return {(cell.col + 0.5) / grid, (cell.row + 0.5) / grid};
}

double iou(const PixelBox& a, const PixelBox& b) {
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double center_aligned_iou(std::pair<double, double> size_a, std::pair<double, double> size_b) {
  const auto [wa, ha] = size_a;
  const auto [wb, hb] = size_b;
  if (!(wa > 0.0 && ha > 0.0 && wb > 0.0 && hb > 0.0)) {
    throw InvalidArgument("center_aligned_iou: sizes must be positive");
  }
  const double inter = std::min(wa, wb) * std::min(ha, hb);
  return inter / (wa * ha + wb * hb - inter);
}

PixelBox clip_box(const PixelBox& box, double width, double height) {
  return {std::clamp(box.x_min, 0.0, width), std::clamp(box.y_min, 0.0, height), std::clamp(box.x_max, 0.0, width),
          std::clamp(box.y_max, 0.0, height)};
}

}  // namespace compose
