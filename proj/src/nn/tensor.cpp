#include "compose/nn/tensor.hpp"

#include "compose/errors.hpp"

namespace compose::nn {

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (element_count(shape) != data_.size()) {
    throw InvalidArgument("reshape: element count mismatch for " + shape_string());
  }
  Tensor out;
  out.shape_ = std::move(shape);
  out.data_ = data_;
  return out;
}

std::string Tensor::shape_string() const {
  std::string s;
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += " x ";
    s += std::to_string(shape_[i]);
  }
  return s;
}

}  // namespace compose::nn
