#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dbf/errors.hpp"

namespace dbf {

// Batch x channels x height x width.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  std::size_t sample() const noexcept { return static_cast<std::size_t>(c) * h * w; }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

// Dense rank-4 feature map in NCHW order.
template <typename T>
class Tensor {
public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0)
      throw ShapeError("negative tensor dimension " + shape.str());
  }
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const noexcept { return shape_; }
  int n() const noexcept { return shape_.n; }
  int c() const noexcept { return shape_.c; }
  int h() const noexcept { return shape_.h; }
  int w() const noexcept { return shape_.w; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(int n, int c, int y, int x) noexcept { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const noexcept { return data_[index(n, c, y, x)]; }

  // Pointer to the start of plane (n, c).
  T* plane(int n, int c) noexcept { return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane(); }
  const T* plane(int n, int c) const noexcept {
    return data_.data() + (static_cast<std::size_t>(n) * shape_.c + c) * shape_.plane();
  }
  T* sample(int n) noexcept { return plane(n, 0); }
  const T* sample(int n) const noexcept { return plane(n, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  // Same storage, new dims; total size must match.
  Tensor reshaped(Shape s) const {
    if (s.size() != size()) throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
    Tensor out = *this;
    out.shape_ = s;
    return out;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  void require_same(const Tensor& o, const char* op) const {
    if (shape_ != o.shape_)
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_.str() + " vs " + o.shape_.str());
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
  std::size_t index(int n, int c, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_{};
  std::vector<T> data_;
};

// Concatenate along channels.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw ShapeError("concat: spatial/batch mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int n = 0; n < a.n(); ++n) {
    std::copy_n(a.sample(n), a.shape().sample(), out.sample(n));
    std::copy_n(b.sample(n), b.shape().sample(), out.plane(n, a.c()));
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& first = *parts.front();
  int channels = 0;
  for (const auto* p : parts) {
    if (p->n() != first.n() || p->h() != first.h() || p->w() != first.w())
      throw ShapeError("concat: spatial/batch mismatch " + first.shape().str() + " vs " + p->shape().str());
    channels += p->c();
  }
  Tensor<T> out(first.n(), channels, first.h(), first.w());
  for (int n = 0; n < first.n(); ++n) {
    int offset = 0;
    for (const auto* p : parts) {
      std::copy_n(p->sample(n), p->shape().sample(), out.plane(n, offset));
      offset += p->c();
    }
  }
  return out;
}

// Channels [begin, begin + count).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > x.c())
    throw ShapeError("slice_channels: range out of bounds for " + x.shape().str());
  Tensor<T> out(x.n(), count, x.h(), x.w());
  for (int n = 0; n < x.n(); ++n)
    std::copy_n(x.plane(n, begin), static_cast<std::size_t>(count) * x.shape().plane(), out.sample(n));
  return out;
}

}  // namespace dbf
