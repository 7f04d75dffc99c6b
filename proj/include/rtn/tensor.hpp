#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rtn/errors.hpp"

namespace rtn {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array with an explicit shape. Used for images, activations,
/// parameters and their gradients.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    for (auto d : shape_) RTN_REQUIRE(d > 0, "tensor dimensions must be positive");
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    RTN_REQUIRE(data_.size() == shape_numel(shape_),
                "tensor data length does not match shape " + shape_to_string(shape_));
  }

  template <class U>
  static Tensor cast_from(const Tensor<U>& other) {
    std::vector<T> d(other.size());
    std::transform(other.begin(), other.end(), d.begin(), [](U v) { return static_cast<T>(v); });
    return Tensor(other.shape(), std::move(d));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }
  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  template <class... I>
  T& operator()(I... idx) noexcept {
    return data_[offset(idx...)];
  }
  template <class... I>
  const T& operator()(I... idx) const noexcept {
    return data_[offset(idx...)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  // Same data, new shape of equal element count.
  Tensor reshaped(Shape s) const& { return Tensor(std::move(s), data_); }
  Tensor reshaped(Shape s) && { return Tensor(std::move(s), std::move(data_)); }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  Tensor& operator+=(const Tensor& o) {
    RTN_REQUIRE(same_shape(o), "tensor += shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  template <class... I>
  std::size_t offset(I... idx) const noexcept {
    const std::size_t ids[] = {static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizeof...(I); ++k) off = off * shape_[k] + ids[k];
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

inline std::string shape_to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

template <class T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ContractError(std::string(what) + ": expected shape " + shape_to_string(expected) +
                        ", got " + shape_to_string(t.shape()));
}

}  // namespace rtn
