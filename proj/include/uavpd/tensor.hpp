#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "uavpd/rng.hpp"

namespace uavpd {

// Dense row-major float tensor, always contiguous. Shapes are small
// (<= 4 dims in practice), so no stride machinery.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), 0.0f);
  }
  Tensor(std::vector<int> shape, float fill) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), fill);
  }
  Tensor(std::vector<int> shape, std::vector<float> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    assert(static_cast<int64_t>(data_.size()) == numel_of(shape_));
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, float v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(float v) { return Tensor({1}, v); }

  static Tensor uniform(std::vector<int> shape, Rng& rng, float lo = 0.0f, float hi = 1.0f) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
  }
  static Tensor randn(std::vector<int> shape, Rng& rng, float mean = 0.0f, float stddev = 1.0f) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = static_cast<float>(rng.normal(mean, stddev));
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // NCHW accessor.
  float& at4(int n, int c, int h, int w) {
    return data_[static_cast<size_t>(((int64_t(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  float at4(int n, int c, int h, int w) const {
    return data_[static_cast<size_t>(((int64_t(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  // HWC accessor.
  float& at3(int h, int w, int c) {
    return data_[static_cast<size_t>((int64_t(h) * shape_[1] + w) * shape_[2] + c)];
  }
  float at3(int h, int w, int c) const {
    return data_[static_cast<size_t>((int64_t(h) * shape_[1] + w) * shape_[2] + c)];
  }

  // Reinterpret shape without copying; element count must match.
  Tensor reshaped(std::vector<int> shape) const {
    assert(numel_of(shape) == numel());
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  float sum() const {
    double s = 0.0;
    for (float v : data_) s += v;
    return static_cast<float>(s);
  }
  float mean() const { return empty() ? 0.0f : sum() / static_cast<float>(numel()); }
  float min() const;
  float max() const;
  bool all_finite() const;

  std::string shape_str() const;

  static int64_t numel_of(const std::vector<int>& shape) {
    int64_t n = shape.empty() ? 0 : 1;
    for (int d : shape) n *= d;
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

}  // namespace uavpd
