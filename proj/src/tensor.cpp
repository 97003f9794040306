#include "seqforge/tensor.hpp"

#include <cmath>

namespace seqforge {

namespace {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e < 0) throw ShapeError("negative tensor extent");
    n *= e;
  }
  return shape.empty() ? 0 : n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape, DType dtype)
    : shape_(std::move(shape)), dtype_(dtype) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0f);
}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data, DType dtype)
    : shape_(std::move(shape)), data_(std::move(data)), dtype_(dtype) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
    throw ShapeError("tensor data length does not match shape");
}

int Tensor::rows() const {
  if (shape_.empty()) return 0;
  int64_t r = 1;
  for (size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
  return static_cast<int>(r);
}

void Tensor::quantize_to_fp16_grid() {
  for (float& v : data_) v = quantize_fp16(v);
  dtype_ = DType::F16E;
}

bool Tensor::on_fp16_grid() const {
  for (float v : data_) {
    if (std::isnan(v)) continue;  // NaN is its own image on the grid
    if (quantize_fp16(v) != v) return false;
  }
  return true;
}

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace seqforge
