#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "planesplat/error.hpp"

namespace planesplat {

inline constexpr double kInvalid = std::numeric_limits<double>::quiet_NaN();

/// Dense row-major H x W grid addressed as (u, v) = (column, row).
template <typename T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  Raster(int width, int height, const T& fill = T{})
      : width_(width), height_(height), values_(checked_size(width, height), fill) {}

  [[nodiscard]] int width() const noexcept { return width_; }
  [[nodiscard]] int height() const noexcept { return height_; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

  [[nodiscard]] bool in_bounds(int u, int v) const noexcept {
    return u >= 0 && v >= 0 && u < width_ && v < height_;
  }

  T& operator()(int u, int v) noexcept { return values_[index(u, v)]; }
  const T& operator()(int u, int v) const noexcept { return values_[index(u, v)]; }

  T& at(int u, int v) {
    if (!in_bounds(u, v)) throw BoundsError("raster access out of bounds");
    return (*this)(u, v);
  }
  const T& at(int u, int v) const {
    if (!in_bounds(u, v)) throw BoundsError("raster access out of bounds");
    return (*this)(u, v);
  }

  [[nodiscard]] std::size_t index(int u, int v) const noexcept {
    return static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(u);
  }

  T& operator[](std::size_t i) noexcept { return values_[i]; }
  const T& operator[](std::size_t i) const noexcept { return values_[i]; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  void fill(const T& value) { std::fill(values_.begin(), values_.end(), value); }

  [[nodiscard]] bool same_shape(int width, int height) const noexcept {
    return width_ == width && height_ == height;
  }
  template <typename U>
  [[nodiscard]] bool same_shape(const Raster<U>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  bool operator==(const Raster&) const = default;

 private:
  static std::size_t checked_size(int width, int height) {
    if (width < 0 || height < 0) throw InvalidArgument("raster dimensions must be non-negative");
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> values_;
};

/// Depth, plane distance or confidence. Invalid pixels hold NaN.
using ScalarMap = Raster<double>;
/// Normals or colors. Invalid pixels hold NaN in every component.
using VectorMap = Raster<Eigen::Vector3d>;
/// Boolean mask, 0 or 1.
using MaskMap = Raster<std::uint8_t>;
using LabelRaster = Raster<int>;

[[nodiscard]] inline bool is_valid(double value) noexcept { return std::isfinite(value); }
[[nodiscard]] inline bool is_valid(const Eigen::Vector3d& value) noexcept {
  return value.allFinite();
}

[[nodiscard]] inline Eigen::Vector3d invalid_vector() noexcept {
  return Eigen::Vector3d::Constant(kInvalid);
}

template <typename T, typename U>
void require_same_shape(const Raster<T>& a, const Raster<U>& b, const char* what) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string(what) + ": raster shapes differ");
}

}  // namespace planesplat
