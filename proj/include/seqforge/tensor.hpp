#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seqforge/common.hpp"
#include "seqforge/fp16.hpp"

namespace seqforge {

enum class DType : uint8_t { F32, F16E };

// Dense row-major array of floats. F16E tensors store every element
// widened to float but always on the binary16 grid.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, DType dtype = DType::F32);
  Tensor(std::vector<int> shape, std::vector<float> data,
         DType dtype = DType::F32);

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  DType dtype() const { return dtype_; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> flat() { return {data_.data(), data_.size()}; }
  std::span<const float> flat() const { return {data_.data(), data_.size()}; }

  // 2-D accessors; rows() is the product of all leading extents.
  int rows() const;
  int cols() const { return shape_.empty() ? 0 : shape_.back(); }
  float& at(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
  float at(int r, int c) const {
    return data_[static_cast<size_t>(r) * cols() + c];
  }

  // Snap every element onto the binary16 grid.
  void quantize_to_fp16_grid();
  bool on_fp16_grid() const;

  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
  DType dtype_ = DType::F32;
};

// Strict left-to-right fold. Identical sequences give bitwise-identical
// results; permuting the input is allowed to change the value.
template <typename T>
T deterministic_sum(std::span<const T> values) {
  T acc = T(0);
  for (const T& v : values) acc += v;
  return acc;
}

template <typename T>
T deterministic_sum(const std::vector<T>& values) {
  return deterministic_sum(std::span<const T>(values.data(), values.size()));
}

}  // namespace seqforge
