#pragma once

// Dense row-major n-dimensional array. This is the single value type the rest
// of the library operates on; the element type is chosen per tensor (float on
// compute paths, double on oracle/verification paths).

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vilong {

namespace detail {

inline std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace detail

template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), T(0));
  }

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_size(shape_) != data_.size()) {
      throw std::invalid_argument("Tensor: shape " + detail::shape_to_string(shape_) +
                                  " does not match buffer of " + std::to_string(data_.size()) +
                                  " elements");
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, T value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const {
    assert(i < shape_.size());
    return shape_[i];
  }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](std::size_t flat) {
    assert(flat < data_.size());
    return data_[flat];
  }
  const T& operator[](std::size_t flat) const {
    assert(flat < data_.size());
    return data_[flat];
  }

  T& operator()(std::size_t i) { return data_[flat_index(i)]; }
  const T& operator()(std::size_t i) const { return data_[flat_index(i)]; }
  T& operator()(std::size_t i, std::size_t j) { return data_[flat_index(i, j)]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[flat_index(i, j)]; }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) { return data_[flat_index(i, j, k)]; }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[flat_index(i, j, k)];
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[flat_index(i, j, k, l)];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[flat_index(i, j, k, l)];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  // Reinterprets the buffer with a new shape of identical element count.
  Tensor reshaped(std::vector<std::size_t> new_shape) const {
    if (checked_size(new_shape) != data_.size()) {
      throw std::invalid_argument("Tensor: cannot reshape " + detail::shape_to_string(shape_) +
                                  " to " + detail::shape_to_string(new_shape));
    }
    return Tensor(std::move(new_shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  static std::size_t checked_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) {
        throw std::invalid_argument("Tensor: zero-sized dimension in shape " +
                                    detail::shape_to_string(shape));
      }
      n *= d;
    }
    return n;
  }

  std::size_t flat_index(std::size_t i) const {
    assert(shape_.size() == 1);
    assert(i < shape_[0]);
    return i;
  }
  std::size_t flat_index(std::size_t i, std::size_t j) const {
    assert(shape_.size() == 2);
    assert(i < shape_[0] && j < shape_[1]);
    return i * shape_[1] + j;
  }
  std::size_t flat_index(std::size_t i, std::size_t j, std::size_t k) const {
    assert(shape_.size() == 3);
    assert(i < shape_[0] && j < shape_[1] && k < shape_[2]);
    return (i * shape_[1] + j) * shape_[2] + k;
  }
  std::size_t flat_index(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    assert(shape_.size() == 4);
    assert(i < shape_[0] && j < shape_[1] && k < shape_[2] && l < shape_[3]);
    return ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;
using TensorB = Tensor<std::uint8_t>;

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("max_abs_diff: shape mismatch " +
                                detail::shape_to_string(a.shape()) + " vs " +
                                detail::shape_to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    if (d > m) m = d;
  }
  return m;
}

}  // namespace vilong
