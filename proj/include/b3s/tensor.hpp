#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace b3s {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& dims);

/// Thrown when operand shapes are incompatible with a kernel or layer.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major array. The trailing dimension is the column count; all
/// leading dimensions fold into rows, which is how every kernel views it.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape dims) : dims_(std::move(dims)), data_(count(dims_), T{}) {}

  BasicTensor(Shape dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != count(dims_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match dims " + shape_to_string(dims_));
    }
  }

  static BasicTensor matrix(std::size_t rows, std::size_t cols) { return BasicTensor({rows, cols}); }
  static BasicTensor row(std::vector<T> values) {
    const std::size_t n = values.size();
    return BasicTensor({1, n}, std::move(values));
  }

  const Shape& dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t cols() const noexcept { return dims_.empty() ? 1 : dims_.back(); }
  std::size_t rows() const noexcept {
    const std::size_t c = cols();
    return c == 0 ? 0 : data_.size() / c;
  }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }
  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

  void fill(T v) {
    for (auto& x : data_) x = v;
  }

  bool same_dims(const BasicTensor& other) const noexcept { return dims_ == other.dims_; }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return BasicTensor<U>(dims_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

  static std::size_t count(const Shape& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

 private:
  Shape dims_;
  std::vector<T> data_;
};

/// Storage type for weights, gradients and checkpoints.
using Tensor = BasicTensor<float>;
/// Working precision of the autodiff tape.
using Tensor64 = BasicTensor<double>;

}  // namespace b3s
