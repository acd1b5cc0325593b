#pragma once

#include <array>
#include <vector>

#include "compose/geometry.hpp"
#include "compose/nn/tensor.hpp"

namespace compose::nn {

struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
};

/// Output extent of a convolution or pooling window along one axis; <= 0 means the window does not fit.
int window_output_size(int in, int kernel, int stride, int padding, int dilation = 1);

/// C = alpha * op(A) * op(B) + beta * C, row-major.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, const double* b,
          double beta, double* c);

// Convolution. weight: [out, in, k, k]; bias: [out].
Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec);
/// Accumulates into dweight/dbias; writes dx when non-null.
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, const ConvSpec& spec, Tensor* dx,
                     Tensor& dweight, Tensor& dbias);

void relu_inplace(Tensor& x);
/// dy *= (y > 0), in place.
void relu_backward_inplace(const Tensor& y, Tensor& dy);

/// Max pooling with implicit -inf padding. argmax receives flat input indices per output element.
Tensor maxpool_forward(const Tensor& x, int kernel, int stride, int padding, std::vector<int>& argmax);
Tensor maxpool_backward(const Tensor& dy, const std::vector<int>& argmax, const std::vector<int>& input_shape);

// Fully connected. weight: [out, in]; bias: [out]; x: any tensor flattened.
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor* dx, Tensor& dweight,
                     Tensor& dbias);

/// Source (row, col) for each of the 9 slice positions, row-major over the 3x3 window. The window's
/// bottom-center position is the cell; coordinates outside the map are clamped to the nearest edge.
std::array<std::pair<int, int>, 9> roi_window(const GridCell& cell, int height, int width);

/// C x H x W -> C x 3 x 3 window whose lowest-center element sits at the cell.
Tensor roi_slice(const Tensor& features, const GridCell& cell);
/// Scatter-add of a C x 3 x 3 gradient back onto a feature-map-shaped gradient.
void roi_slice_backward(const Tensor& dslice, const GridCell& cell, Tensor& dfeatures);

/// C x H x W -> C (max over space). argmax stores the flat spatial index per channel.
Tensor global_maxpool_forward(const Tensor& x, std::vector<int>& argmax);
Tensor global_maxpool_backward(const Tensor& dy, const std::vector<int>& argmax, const std::vector<int>& input_shape);

/// Numerically stable softmax over all elements.
std::vector<double> softmax(std::span<const double> logits);

/// Softmax cross-entropy; writes d(loss)/d(logits) into grad when non-null.
double softmax_cross_entropy(std::span<const double> logits, int target, std::vector<double>* grad);

/// Indices of the k largest values, descending; exact ties resolved toward the lower index.
std::vector<int> top_k_indices(std::span<const double> values, int k);

}  // namespace compose::nn
