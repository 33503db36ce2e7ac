#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "attnlreg/numerics/errors.hpp"

namespace alr {

using Dims = std::vector<std::size_t>;

inline std::size_t dims_product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string dims_to_string(const Dims& dims);

// Dense row-major array. Rank 1 is allowed for bias/affine vectors; the
// model's activations are rank 2 (rows x features) or rank 3 (maps).
template <typename T>
class Array {
 public:
  using value_type = T;

  Array() = default;

  explicit Array(Dims dims, T fill = T{0}) : dims_(std::move(dims)) {
    check_dims();
    data_.assign(dims_product(dims_), fill);
  }

  Array(Dims dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != dims_product(dims_)) {
      throw InvalidArgument("array data length " + std::to_string(data_.size()) +
                            " does not match dims " + dims_to_string(dims_));
    }
  }

  static Array zeros_like(const Array& other) { return Array(other.dims_); }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * dims_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * dims_[1] + c]; }

  T& at(std::size_t i, std::size_t r, std::size_t c) noexcept {
    return data_[(i * dims_[1] + r) * dims_[2] + c];
  }
  const T& at(std::size_t i, std::size_t r, std::size_t c) const noexcept {
    return data_[(i * dims_[1] + r) * dims_[2] + c];
  }

  // Extent of the trailing axis and the number of such rows.
  std::size_t cols() const noexcept { return dims_.empty() ? 0 : dims_.back(); }
  std::size_t rows() const noexcept { return cols() == 0 ? 0 : data_.size() / cols(); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  Array reshaped(Dims dims) const {
    if (dims_product(dims) != data_.size()) {
      throw InvalidArgument("cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
    }
    return Array(std::move(dims), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Array& operator+=(const Array& other) {
    if (other.dims_ != dims_) {
      throw InvalidArgument("accumulate shape mismatch " + dims_to_string(dims_) + " vs " +
                            dims_to_string(other.dims_));
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  friend bool operator==(const Array& a, const Array& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    if (dims_.empty()) throw InvalidArgument("array must have rank >= 1");
    for (std::size_t d : dims_) {
      if (d == 0) throw InvalidArgument("array extents must be positive, got " + dims_to_string(dims_));
    }
  }

  Dims dims_;
  std::vector<T> data_;
};

template <typename To, typename From>
Array<To> cast(const Array<From>& in) {
  std::vector<To> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<To>(in[i]);
  return Array<To>(in.dims(), std::move(out));
}

template <typename T>
T max_abs_diff(const Array<T>& a, const Array<T>& b) {
  if (a.dims() != b.dims()) throw InvalidArgument("max_abs_diff shape mismatch");
  T worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace alr
