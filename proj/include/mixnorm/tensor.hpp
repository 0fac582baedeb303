#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixnorm {

// Dense row-major array, rank 2 (N x C) or rank 4 (N x C x H x W) in the
// training pipeline. Axis 0 is the sample axis, axis 1 the channel axis;
// rank-2 tensors behave as if H = W = 1. Values are immutable by convention
// once a tensor leaves the function that built it.
template <typename T>
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count_of(shape_), T(0)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count_of(shape_)) {
      throw std::invalid_argument("Tensor: data length " +
                                  std::to_string(data_.size()) +
                                  " does not match shape product " +
                                  std::to_string(count_of(shape_)));
    }
  }

  // Checked construction: rejects NaN/Inf. Used at deserialization and
  // import boundaries.
  static Tensor checked(std::vector<std::size_t> shape, std::vector<T> data) {
    Tensor t(std::move(shape), std::move(data));
    for (std::size_t i = 0; i < t.data_.size(); ++i) {
      if (!std::isfinite(static_cast<double>(t.data_[i]))) {
        throw std::invalid_argument("Tensor: non-finite value at index " +
                                    std::to_string(i));
      }
    }
    return t;
  }

  static Tensor full(std::vector<std::size_t> shape, T value) {
    Tensor t(std::move(shape));
    for (auto& v : t.data_) v = value;
    return t;
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t extent(std::size_t axis) const {
    if (axis >= shape_.size()) throw std::out_of_range("Tensor: axis out of range");
    return shape_[axis];
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Sample/channel/spatial view shared by rank-2 and rank-4 tensors.
  std::size_t samples() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t channels() const { return shape_.size() < 2 ? 1 : shape_[1]; }
  std::size_t spatial() const {
    std::size_t s = 1;
    for (std::size_t a = 2; a < shape_.size(); ++a) s *= shape_[a];
    return s;
  }

  T& at(std::size_t n, std::size_t c, std::size_t s) {
    return data_[(n * channels() + c) * spatial() + s];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t s) const {
    return data_[(n * channels() + c) * spatial() + s];
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
  static std::size_t count_of(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
      if (e == 0) throw std::invalid_argument("Tensor: zero extent");
      n *= e;
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Whole-tensor reductions. Accumulation is double regardless of T so the
// 32-bit path stays within 1e-6 relative of a naive 64-bit loop.
template <typename T>
double sum(const Tensor<T>& t) {
  double acc = 0.0;
  for (const T& v : t.values()) acc += static_cast<double>(v);
  return acc;
}

template <typename T>
double mean(const Tensor<T>& t) {
  if (t.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return sum(t) / static_cast<double>(t.size());
}

// Biased (population) variance, matching the normalization formulas.
template <typename T>
double variance(const Tensor<T>& t) {
  const double m = mean(t);
  double acc = 0.0;
  for (const T& v : t.values()) {
    const double d = static_cast<double>(v) - m;
    acc += d * d;
  }
  return acc / static_cast<double>(t.size());
}

}  // namespace mixnorm
