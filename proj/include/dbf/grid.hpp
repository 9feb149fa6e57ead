#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dbf/errors.hpp"

namespace dbf {

// Row-major 2-D grid of values.
template <typename T>
class Grid {
public:
  Grid() = default;
  Grid(int height, int width, T fill = T{}) : height_(height), width_(width) {
    if (height < 0 || width < 0) throw ShapeError("negative grid dimension");
    values_.assign(static_cast<std::size_t>(height) * width, fill);
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T& operator()(int y, int x) noexcept { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& operator()(int y, int x) const noexcept { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  T& operator[](std::size_t i) noexcept { return values_[i]; }
  const T& operator[](std::size_t i) const noexcept { return values_[i]; }

  std::vector<T>& values() noexcept { return values_; }
  const std::vector<T>& values() const noexcept { return values_; }

  bool operator==(const Grid&) const = default;

private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> values_;
};

// Grid of {0,1}; both dimensions >= 1.
class BinaryMask {
public:
  BinaryMask() = default;
  BinaryMask(int height, int width) : grid_(check_dims(height, width), width, 0) {}
  explicit BinaryMask(Grid<std::uint8_t> grid) : grid_(std::move(grid)) {
    check_dims(grid_.height(), grid_.width());
    for (auto v : grid_.values())
      if (v > 1) throw ParameterError("binary mask pixel must be 0 or 1, got " + std::to_string(v));
  }
  // From a row-major 0/1 list, handy for literals in tests.
  BinaryMask(int height, int width, std::initializer_list<int> pixels) : BinaryMask(height, width) {
    if (pixels.size() != grid_.size()) throw ShapeError("pixel list does not match mask dimensions");
    std::size_t i = 0;
    for (int v : pixels) {
      if (v != 0 && v != 1) throw ParameterError("binary mask pixel must be 0 or 1");
      grid_[i++] = static_cast<std::uint8_t>(v);
    }
  }

  int height() const noexcept { return grid_.height(); }
  int width() const noexcept { return grid_.width(); }
  std::size_t size() const noexcept { return grid_.size(); }
  bool valid() const noexcept { return grid_.height() >= 1 && grid_.width() >= 1; }

  bool operator()(int y, int x) const noexcept { return grid_(y, x) != 0; }
  void set(int y, int x, bool v) noexcept { grid_(y, x) = v ? 1 : 0; }
  bool operator[](std::size_t i) const noexcept { return grid_[i] != 0; }
  void set(std::size_t i, bool v) noexcept { grid_[i] = v ? 1 : 0; }

  std::size_t count() const noexcept {
    return static_cast<std::size_t>(std::count(grid_.values().begin(), grid_.values().end(), std::uint8_t{1}));
  }
  bool none() const noexcept { return count() == 0; }

  const Grid<std::uint8_t>& grid() const noexcept { return grid_; }

  bool same_shape(const BinaryMask& o) const noexcept { return height() == o.height() && width() == o.width(); }
  bool operator==(const BinaryMask&) const = default;

private:
  static int check_dims(int height, int width) {
    if (height < 1 || width < 1)
      throw ShapeError("binary mask needs height >= 1 and width >= 1, got " + std::to_string(height) + "x" +
                       std::to_string(width));
    return height;
  }

  Grid<std::uint8_t> grid_;
};

inline void require_same_shape(const BinaryMask& a, const BinaryMask& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": mask shapes differ (" + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
}

inline BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "mask_or");
  BinaryMask out(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) out.set(i, a[i] || b[i]);
  return out;
}

inline BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "mask_and");
  BinaryMask out(a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) out.set(i, a[i] && b[i]);
  return out;
}

// a is a subset of b.
inline bool mask_subset(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "mask_subset");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && !b[i]) return false;
  return true;
}

}  // namespace dbf
