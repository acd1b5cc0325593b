#include "compose/nn/layers.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "compose/errors.hpp"

namespace compose::nn {

int window_output_size(int in, int kernel, int stride, int padding, int dilation) {
  const int span = dilation * (kernel - 1) + 1;
  const int room = in + 2 * padding - span;
  if (room < 0 || stride <= 0) return 0;
  return room / stride + 1;
}

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha, const double* a, const double* b,
          double beta, double* c) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, a, trans_a ? m : k, b, trans_b ? k : n, beta, c, n);
}

namespace {

void check_conv_input(const Tensor& x, const ConvSpec& spec) {
  if (x.rank() != 3 || x.dim(0) != spec.in_channels) {
    throw InvalidArgument("conv2d: expected " + std::to_string(spec.in_channels) + " input channels, got shape " +
                          x.shape_string());
  }
}

bool is_pointwise(const ConvSpec& spec) { return spec.kernel == 1 && spec.stride == 1 && spec.padding == 0; }

// col: [in * k * k, out_h * out_w]
std::vector<double> im2col(const Tensor& x, const ConvSpec& spec, int out_h, int out_w) {
  const int channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  const int k = spec.kernel;
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  std::vector<double> col(static_cast<std::size_t>(channels) * k * k * plane, 0.0);
  const double* src = x.data();
  for (int c = 0; c < channels; ++c) {
    const double* channel = src + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
          if (iy < 0 || iy >= height) continue;
          const double* line = channel + static_cast<std::size_t>(iy) * width;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
            if (ix >= 0 && ix < width) dst[ox] = line[ix];
          }
        }
      }
    }
  }
  return col;
}

void col2im(const std::vector<double>& col, const ConvSpec& spec, int out_h, int out_w, Tensor& dx) {
  const int channels = dx.dim(0), height = dx.dim(1), width = dx.dim(2);
  const int k = spec.kernel;
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  double* dst = dx.data();
  for (int c = 0; c < channels; ++c) {
    double* channel = dst + static_cast<std::size_t>(c) * height * width;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * spec.stride - spec.padding + ky * spec.dilation;
          if (iy < 0 || iy >= height) continue;
          double* line = channel + static_cast<std::size_t>(iy) * width;
          const double* src = row + static_cast<std::size_t>(oy) * out_w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * spec.stride - spec.padding + kx * spec.dilation;
            if (ix >= 0 && ix < width) line[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
  check_conv_input(x, spec);
  const int out_h = window_output_size(x.dim(1), spec.kernel, spec.stride, spec.padding, spec.dilation);
  const int out_w = window_output_size(x.dim(2), spec.kernel, spec.stride, spec.padding, spec.dilation);
  if (out_h <= 0 || out_w <= 0) throw InvalidArgument("conv2d: kernel does not fit input " + x.shape_string());
  const int n = out_h * out_w;
  const int kdim = spec.in_channels * spec.kernel * spec.kernel;
  Tensor y({spec.out_channels, out_h, out_w});
  for (int o = 0; o < spec.out_channels; ++o) {
    std::fill_n(y.data() + static_cast<std::size_t>(o) * n, n, bias[o]);
  }
  if (is_pointwise(spec)) {
    gemm(false, false, spec.out_channels, n, kdim, 1.0, weight.data(), x.data(), 1.0, y.data());
  } else {
    const auto col = im2col(x, spec, out_h, out_w);
    gemm(false, false, spec.out_channels, n, kdim, 1.0, weight.data(), col.data(), 1.0, y.data());
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, const ConvSpec& spec, Tensor* dx,
                     Tensor& dweight, Tensor& dbias) {
  const int out_h = dy.dim(1), out_w = dy.dim(2);
  const int n = out_h * out_w;
  const int kdim = spec.in_channels * spec.kernel * spec.kernel;
  for (int o = 0; o < spec.out_channels; ++o) {
    const double* row = dy.data() + static_cast<std::size_t>(o) * n;
    dbias[o] += std::accumulate(row, row + n, 0.0);
  }
  if (is_pointwise(spec)) {
    gemm(false, true, spec.out_channels, kdim, n, 1.0, dy.data(), x.data(), 1.0, dweight.data());
    if (dx) {
      *dx = Tensor(x.shape());
      gemm(true, false, kdim, n, spec.out_channels, 1.0, weight.data(), dy.data(), 0.0, dx->data());
    }
    return;
  }
  const auto col = im2col(x, spec, out_h, out_w);
  gemm(false, true, spec.out_channels, kdim, n, 1.0, dy.data(), col.data(), 1.0, dweight.data());
  if (dx) {
    std::vector<double> dcol(static_cast<std::size_t>(kdim) * n);
    gemm(true, false, kdim, n, spec.out_channels, 1.0, weight.data(), dy.data(), 0.0, dcol.data());
    *dx = Tensor(x.shape());
    col2im(dcol, spec, out_h, out_w, *dx);
  }
}

void relu_inplace(Tensor& x) {
  for (double& v : x.values()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
}

void relu_backward_inplace(const Tensor& y, Tensor& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(y[i] > 0.0)) dy[i] = 0.0;
  }
}

Tensor maxpool_forward(const Tensor& x, int kernel, int stride, int padding, std::vector<int>& argmax) {
  const int channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  const int out_h = window_output_size(height, kernel, stride, padding);
  const int out_w = window_output_size(width, kernel, stride, padding);
  if (out_h <= 0 || out_w <= 0) throw InvalidArgument("maxpool: window does not fit input " + x.shape_string());
  Tensor y({channels, out_h, out_w});
  argmax.assign(y.size(), -1);
  std::size_t o = 0;
  for (int c = 0; c < channels; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * height * width;
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox, ++o) {
        double best = -std::numeric_limits<double>::infinity();
        int best_index = -1;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= height) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= width) continue;
            const std::size_t idx = base + static_cast<std::size_t>(iy) * width + ix;
            if (x[idx] > best) {
              best = x[idx];
              best_index = static_cast<int>(idx);
            }
          }
        }
        y[o] = best;
        argmax[o] = best_index;
      }
    }
  }
  return y;
}

Tensor maxpool_backward(const Tensor& dy, const std::vector<int>& argmax, const std::vector<int>& input_shape) {
  Tensor dx(input_shape);
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (argmax[i] >= 0) dx[static_cast<std::size_t>(argmax[i])] += dy[i];
  }
  return dx;
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const int out = weight.dim(0), in = weight.dim(1);
  if (static_cast<int>(x.size()) != in) {
    throw InvalidArgument("linear: expected " + std::to_string(in) + " inputs, got " + std::to_string(x.size()));
  }
  Tensor y({out});
  std::copy(bias.data(), bias.data() + out, y.data());
  cblas_dgemv(CblasRowMajor, CblasNoTrans, out, in, 1.0, weight.data(), in, x.data(), 1, 1.0, y.data(), 1);
  return y;
}

void linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor* dx, Tensor& dweight,
                     Tensor& dbias) {
  const int out = weight.dim(0), in = weight.dim(1);
  for (int o = 0; o < out; ++o) dbias[o] += dy[o];
  cblas_dger(CblasRowMajor, out, in, 1.0, dy.data(), 1, x.data(), 1, dweight.data(), in);
  if (dx) {
    *dx = Tensor(x.shape());
    cblas_dgemv(CblasRowMajor, CblasTrans, out, in, 1.0, weight.data(), in, dy.data(), 1, 0.0, dx->data(), 1);
  }
}

std::array<std::pair<int, int>, 9> roi_window(const GridCell& cell, int height, int width) {
  std::array<std::pair<int, int>, 9> window{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const int r = std::clamp(cell.row - 2 + i, 0, height - 1);
      const int c = std::clamp(cell.col - 1 + j, 0, width - 1);
      window[static_cast<std::size_t>(i * 3 + j)] = {r, c};
    }
  }
  return window;
}

Tensor roi_slice(const Tensor& features, const GridCell& cell) {
  const int channels = features.dim(0), height = features.dim(1), width = features.dim(2);
  if (cell.row < 0 || cell.row >= height || cell.col < 0 || cell.col >= width) {
    throw InvalidArgument("roi_slice: cell outside feature map");
  }
  const auto window = roi_window(cell, height, width);
  Tensor out({channels, 3, 3});
  for (int c = 0; c < channels; ++c) {
    for (int p = 0; p < 9; ++p) {
      out[static_cast<std::size_t>(c) * 9 + p] = features.at(c, window[p].first, window[p].second);
    }
  }
  return out;
}

void roi_slice_backward(const Tensor& dslice, const GridCell& cell, Tensor& dfeatures) {
  const int channels = dfeatures.dim(0), height = dfeatures.dim(1), width = dfeatures.dim(2);
  const auto window = roi_window(cell, height, width);
  for (int c = 0; c < channels; ++c) {
    for (int p = 0; p < 9; ++p) {
      dfeatures.at(c, window[p].first, window[p].second) += dslice[static_cast<std::size_t>(c) * 9 + p];
    }
  }
}

Tensor global_maxpool_forward(const Tensor& x, std::vector<int>& argmax) {
  const int channels = x.dim(0);
  const int plane = x.dim(1) * x.dim(2);
  Tensor y({channels});
  argmax.assign(static_cast<std::size_t>(channels), 0);
  for (int c = 0; c < channels; ++c) {
    const double* p = x.data() + static_cast<std::size_t>(c) * plane;
    const auto it = std::max_element(p, p + plane);
    y[c] = *it;
    argmax[c] = static_cast<int>(it - p);
  }
  return y;
}

Tensor global_maxpool_backward(const Tensor& dy, const std::vector<int>& argmax, const std::vector<int>& input_shape) {
  Tensor dx(input_shape);
  const int plane = input_shape[1] * input_shape[2];
  for (std::size_t c = 0; c < dy.size(); ++c) dx[c * plane + argmax[c]] += dy[c];
  return dx;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

double softmax_cross_entropy(std::span<const double> logits, int target, std::vector<double>* grad) {
  if (target < 0 || target >= static_cast<int>(logits.size())) {
    throw InvalidArgument("softmax_cross_entropy: target out of range");
  }
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - m);
  const double log_z = m + std::log(sum);
  if (grad) {
    grad->resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) (*grad)[i] = std::exp(logits[i] - log_z);
    (*grad)[static_cast<std::size_t>(target)] -= 1.0;
  }
  return log_z - logits[static_cast<std::size_t>(target)];
}

std::vector<int> top_k_indices(std::span<const double> values, int k) {
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::clamp(k, 0, static_cast<int>(values.size()));
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace compose::nn
