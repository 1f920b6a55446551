#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace itnet {

template <typename T>
concept Real = std::same_as<T, float> || std::same_as<T, double>;

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream oss;
  oss << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ',';
    oss << shape[i];
  }
  oss << ')';
  return oss.str();
}

// Dense row-major array. Activations use the layout (batch, filter, electrode, time).
template <Real T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != data_.size()) {
      throw std::invalid_argument("tensor: shape " + shape_string(shape_) + " does not match " +
                                  std::to_string(data_.size()) + " values");
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Offset of a 4-D index.
  std::size_t offset(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const noexcept {
    return ((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
  }
  T& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) noexcept {
    return data_[offset(a, b, c, d)];
  }
  const T& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const noexcept {
    return data_[offset(a, b, c, d)];
  }

  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      throw std::invalid_argument("tensor: cannot reshape " + shape_string(shape_) + " to " +
                                  shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <Real U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

// Rejects a tensor whose rank or extents disagree with what an operation needs.
inline void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_string(shape));
  }
}

inline void require_extent(std::size_t got, std::size_t want, const char* what, const char* axis) {
  if (got != want) {
    throw std::invalid_argument(std::string(what) + ": " + axis + " axis has extent " +
                                std::to_string(got) + ", expected " + std::to_string(want));
  }
}

}  // namespace itnet
