#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "basilisk/numerics/memory.hpp"

namespace basilisk {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major tensor with tracked storage.
///
/// Most of the library works on rank-2 views: a rank-1 tensor of length n
/// behaves as a single row [1 x n] for rows()/cols().
template <class S>
class Tensor {
 public:
  using value_type = S;
  using Storage = std::vector<S, memory::TrackingAllocator<S>>;

  Tensor() = default;

  explicit Tensor(Shape shape, S fill = S{0}) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::initializer_list<S> values) : shape_(std::move(shape)), data_(values) {
    check_size();
  }

  Tensor(Shape shape, std::span<const S> values)
      : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    check_size();
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor filled(std::size_t rows, std::size_t cols, S v) { return Tensor({rows, cols}, v); }
  static Tensor scalar(S v) { return Tensor({1, 1}, v); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t rows() const noexcept {
    if (shape_.empty()) return 1;
    return shape_.size() == 1 ? 1 : shape_[0];
  }
  std::size_t cols() const noexcept {
    if (shape_.empty()) return 1;
    return shape_.size() == 1 ? shape_[0] : size() / shape_[0];
  }

  S* data() noexcept { return data_.data(); }
  const S* data() const noexcept { return data_.data(); }
  std::span<S> values() noexcept { return {data_.data(), data_.size()}; }
  std::span<const S> values() const noexcept { return {data_.data(), data_.size()}; }

  S& operator[](std::size_t i) noexcept { return data_[i]; }
  const S& operator[](std::size_t i) const noexcept { return data_[i]; }

  S& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  const S& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  S* row(std::size_t r) noexcept { return data_.data() + r * cols(); }
  const S* row(std::size_t r) const noexcept { return data_.data() + r * cols(); }

  S item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    Tensor out = *this;
    out.shape_ = std::move(shape);
    return out;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](S v) { return std::isfinite(v); });
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out(shape_);
    for (std::size_t i = 0; i < size(); ++i) out[i] = static_cast<T>(data_[i]);
    return out;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  void require_same_shape(const Tensor& o, const char* what) const {
    if (size() != o.size() || rows() != o.rows())
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(shape_) + " vs " +
                       shape_string(o.shape_));
  }

 private:
  void check_size() const {
    if (shape_numel(shape_) != data_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_string(shape_));
  }

  Shape shape_;
  Storage data_;
};

template <class S>
S max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
  a.require_same_shape(b, "max_abs_diff");
  S m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace basilisk
