#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "vitloss/errors.hpp"

namespace vitloss {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

/// Dense row-major tensor with shared immutable storage.
///
/// Copies are cheap and share the buffer; `mutable_data()` detaches the
/// buffer first, so a Tensor behaves as a value. Every dimension is positive
/// and every element is finite: constructors reject NaN/Inf.
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(std::make_shared<std::vector<T>>()) {}

  /// Zero-filled tensor.
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape();
    data_ = std::make_shared<std::vector<T>>(shape_numel(shape_), T{0});
  }

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
    check_shape();
    if (values.size() != shape_numel(shape_)) {
      throw DimensionError("tensor of shape " + shape_str(shape_) + " needs " +
                           std::to_string(shape_numel(shape_)) + " values, got " +
                           std::to_string(values.size()));
    }
    data_ = std::make_shared<std::vector<T>>(std::move(values));
    check_finite("tensor construction");
  }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_->size(); }
  bool empty() const { return shape_.empty(); }

  std::span<const T> data() const { return *data_; }

  std::span<T> mutable_data() {
    if (data_.use_count() > 1) data_ = std::make_shared<std::vector<T>>(*data_);
    return *data_;
  }

  T operator[](std::size_t i) const { return (*data_)[i]; }

  /// 2-D element access (row, col).
  T at(std::size_t r, std::size_t c) const { return (*data_)[r * shape_[1] + c]; }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() on tensor of shape " + shape_str(shape_));
    }
    return (*data_)[0];
  }

  /// Same data, new shape with an equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  template <Real U>
  Tensor<U> cast() const {
    std::vector<U> out(data_->begin(), data_->end());
    return Tensor<U>(shape_, std::move(out));
  }

  void check_finite(const std::string& where) const {
    for (T v : *data_) {
      if (!std::isfinite(v)) throw NumericError("non-finite value in " + where);
    }
  }

  /// Bitwise equality of shape and contents.
  bool identical(const Tensor& other) const {
    return shape_ == other.shape_ &&
           std::equal(data_->begin(), data_->end(), other.data_->begin(), other.data_->end(),
                      [](T a, T b) { return std::memcmp(&a, &b, sizeof(T)) == 0; });
  }

 private:
  void check_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("zero-length dimension in shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
};

template <Real T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

template <Real T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

}  // namespace vitloss
