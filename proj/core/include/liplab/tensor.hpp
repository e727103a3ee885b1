// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace liplab {

// Dense n-dimensional array, row-major, value semantics.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), T(0)) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_)) {
      throw std::invalid_argument("Tensor: data length does not match shape");
    }
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (checked_numel(shape) != numel()) {
      throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    }
    return Tensor(std::move(shape), data_);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (const T& v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  static std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
  }

 private:
  static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw std::invalid_argument("Tensor: zero dimension");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw std::invalid_argument("Tensor::at: rank mismatch");
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[axis]) throw std::out_of_range("Tensor::at: index out of range");
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace liplab
