#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "dbf/blas.hpp"
#include "dbf/tensor.hpp"

namespace dbf::nn {

// A trainable tensor and its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Shape s) : name(std::move(n)), value(s), grad(s) {}
  std::size_t size() const noexcept { return value.size(); }
};

// Non-trainable state that still belongs in a checkpoint (batch-norm statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
void init_fan_in(Tensor<T>& t, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

namespace detail {

// Column buffer layout: row (c * k * k + ky * k + kx), column (y * w + x).
template <typename T>
void im2col(const T* x, int channels, int h, int w, int k, int dilation, T* col) {
  const int pad = dilation * (k - 1) / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    const T* src = x + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      const int oy = ky * dilation - pad;
      for (int kx = 0; kx < k; ++kx, col += hw) {
        const int ox = kx * dilation - pad;
        const int x0 = std::clamp(-ox, 0, w);
        const int x1 = std::clamp(w - ox, 0, w);
        for (int y = 0; y < h; ++y) {
          T* dst = col + static_cast<std::size_t>(y) * w;
          const int iy = y + oy;
          if (iy < 0 || iy >= h || x0 >= x1) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          std::fill(dst, dst + x0, T(0));
          std::memcpy(dst + x0, src + static_cast<std::size_t>(iy) * w + x0 + ox, sizeof(T) * (x1 - x0));
          std::fill(dst + x1, dst + w, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <typename T>
void col2im(const T* col, int channels, int h, int w, int k, int dilation, T* x) {
  const int pad = dilation * (k - 1) / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    T* dst = x + c * hw;
    for (int ky = 0; ky < k; ++ky) {
      const int oy = ky * dilation - pad;
      for (int kx = 0; kx < k; ++kx, col += hw) {
        const int ox = kx * dilation - pad;
        const int x0 = std::clamp(-ox, 0, w);
        const int x1 = std::clamp(w - ox, 0, w);
        for (int y = 0; y < h; ++y) {
          const int iy = y + oy;
          if (iy < 0 || iy >= h) continue;
          const T* src = col + static_cast<std::size_t>(y) * w;
          T* row = dst + static_cast<std::size_t>(iy) * w;
          for (int xx = x0; xx < x1; ++xx) row[xx + ox] += src[xx];
        }
      }
    }
  }
}

}  // namespace detail

// Stride-1 "same" convolution with optional dilation.
template <typename T>
class Conv2d {
public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int dilation, bool with_bias,
         std::mt19937_64& rng)
      : weight(name + ".weight", Shape{out_channels, in_channels, kernel, kernel}), in_(in_channels),
        out_(out_channels), k_(kernel), dilation_(dilation), has_bias_(with_bias) {
    if (kernel % 2 == 0) throw ParameterError("Conv2d: kernel size must be odd");
    const int fan_in = in_channels * kernel * kernel;
    init_fan_in(weight.value, fan_in, rng);
    if (has_bias_) {
      bias = Parameter<T>(name + ".bias", Shape{1, out_channels, 1, 1});
      init_fan_in(bias.value, fan_in, rng);
    }
  }

  int in_channels() const noexcept { return in_; }
  int out_channels() const noexcept { return out_; }
  int kernel() const noexcept { return k_; }
  int dilation() const noexcept { return dilation_; }
  bool has_bias() const noexcept { return has_bias_; }

  Tensor<T> forward(const Tensor<T>& x) {
    if (x.c() != in_)
      throw ShapeError(weight.name + ": expected " + std::to_string(in_) + " input channels, got " +
                       x.shape().str());
    input_ = x;
    const int h = x.h(), w = x.w();
    const int hw = h * w;
    const int kk = in_ * k_ * k_;
    Tensor<T> y(x.n(), out_, h, w);
    for (int n = 0; n < x.n(); ++n) {
      const T* col = columns(x.sample(n), h, w);
      T* yn = y.sample(n);
      if (has_bias_)
        for (int o = 0; o < out_; ++o) std::fill(yn + static_cast<std::size_t>(o) * hw, yn + static_cast<std::size_t>(o + 1) * hw, bias.value[o]);
      blas::gemm(false, false, out_, hw, kk, T(1), weight.value.data(), kk, col, hw, has_bias_ ? T(1) : T(0), yn, hw);
    }
    return y;
  }

  // Accumulates parameter gradients and returns d(loss)/d(input).
  Tensor<T> backward(const Tensor<T>& dy) {
    const Tensor<T>& x = input_;
    if (dy.n() != x.n() || dy.c() != out_ || dy.h() != x.h() || dy.w() != x.w())
      throw ShapeError(weight.name + ": gradient shape " + dy.shape().str() + " does not match output");
    const int h = x.h(), w = x.w();
    const int hw = h * w;
    const int kk = in_ * k_ * k_;
    Tensor<T> dx(x.shape());
    std::vector<T> dcol(k_ == 1 ? 0 : static_cast<std::size_t>(kk) * hw);
    for (int n = 0; n < x.n(); ++n) {
      const T* col = columns(x.sample(n), h, w);
      const T* dyn = dy.sample(n);
      blas::gemm(false, true, out_, kk, hw, T(1), dyn, hw, col, hw, T(1), weight.grad.data(), kk);
      if (has_bias_)
        for (int o = 0; o < out_; ++o) {
          T s = 0;
          const T* row = dyn + static_cast<std::size_t>(o) * hw;
          for (int i = 0; i < hw; ++i) s += row[i];
          bias.grad[o] += s;
        }
      if (k_ == 1) {
        blas::gemm(true, false, kk, hw, out_, T(1), weight.value.data(), kk, dyn, hw, T(0), dx.sample(n), hw);
      } else {
        blas::gemm(true, false, kk, hw, out_, T(1), weight.value.data(), kk, dyn, hw, T(0), dcol.data(), hw);
        detail::col2im(dcol.data(), in_, h, w, k_, dilation_, dx.sample(n));
      }
    }
    return dx;
  }

  template <typename F>
  void visit(F&& f) {
    f(weight);
    if (has_bias_) f(bias);
  }

  std::size_t parameter_count() const noexcept { return weight.size() + (has_bias_ ? bias.size() : 0); }

  Parameter<T> weight;
  Parameter<T> bias;

private:
  const T* columns(const T* x, int h, int w) {
    if (k_ == 1) return x;
    col_.resize(static_cast<std::size_t>(in_) * k_ * k_ * h * w);
    detail::im2col(x, in_, h, w, k_, dilation_, col_.data());
    return col_.data();
  }

  int in_ = 0, out_ = 0, k_ = 1, dilation_ = 1;
  bool has_bias_ = false;
  Tensor<T> input_;
  std::vector<T> col_;
};

template <typename T>
class BatchNorm2d {
public:
  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels, double momentum = 0.1, double eps = 1e-5)
      : gamma(name + ".gamma", Shape{1, channels, 1, 1}), beta(name + ".beta", Shape{1, channels, 1, 1}),
        running_mean{name + ".running_mean", Tensor<T>(1, channels, 1, 1, T(0))},
        running_var{name + ".running_var", Tensor<T>(1, channels, 1, 1, T(1))}, momentum_(momentum), eps_(eps) {
    gamma.value.fill(T(1));
  }

  bool training = true;

  Tensor<T> forward(const Tensor<T>& x) {
    const int channels = gamma.value.c();
    if (x.c() != channels) throw ShapeError(gamma.name + ": channel mismatch " + x.shape().str());
    const std::size_t plane = x.shape().plane();
    const double count = static_cast<double>(plane) * x.n();
    Tensor<T> y(x.shape());
    normalized_ = Tensor<T>(x.shape());
    inv_std_.assign(channels, T(0));
    used_batch_stats_ = training;
    for (int c = 0; c < channels; ++c) {
      double mean, var;
      if (training) {
        double s = 0, ss = 0;
        for (int n = 0; n < x.n(); ++n) {
          const T* p = x.plane(n, c);
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
        }
        mean = s / count;
        for (int n = 0; n < x.n(); ++n) {
          const T* p = x.plane(n, c);
          for (std::size_t i = 0; i < plane; ++i) {
            const double d = p[i] - mean;
            ss += d * d;
          }
        }
        var = ss / count;
        const double unbiased = count > 1 ? ss / (count - 1) : var;
        running_mean.value[c] = static_cast<T>((1 - momentum_) * running_mean.value[c] + momentum_ * mean);
        running_var.value[c] = static_cast<T>((1 - momentum_) * running_var.value[c] + momentum_ * unbiased);
      } else {
        mean = running_mean.value[c];
        var = running_var.value[c];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + eps_));
      const T m = static_cast<T>(mean);
      inv_std_[c] = inv;
      const T g = gamma.value[c], b = beta.value[c];
      for (int n = 0; n < x.n(); ++n) {
        const T* p = x.plane(n, c);
        T* xh = normalized_.plane(n, c);
        T* q = y.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          xh[i] = (p[i] - m) * inv;
          q[i] = g * xh[i] + b;
        }
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    normalized_.require_same(dy, "BatchNorm2d::backward");
    const int channels = gamma.value.c();
    const std::size_t plane = dy.shape().plane();
    const double count = static_cast<double>(plane) * dy.n();
    Tensor<T> dx(dy.shape());
    for (int c = 0; c < channels; ++c) {
      double sum_dy = 0, sum_dy_xh = 0;
      for (int n = 0; n < dy.n(); ++n) {
        const T* g = dy.plane(n, c);
        const T* xh = normalized_.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += g[i];
          sum_dy_xh += g[i] * xh[i];
        }
      }
      gamma.grad[c] += static_cast<T>(sum_dy_xh);
      beta.grad[c] += static_cast<T>(sum_dy);
      const T scale = gamma.value[c] * inv_std_[c];
      if (used_batch_stats_) {
        const T mean_dy = static_cast<T>(sum_dy / count);
        const T mean_dy_xh = static_cast<T>(sum_dy_xh / count);
        for (int n = 0; n < dy.n(); ++n) {
          const T* g = dy.plane(n, c);
          const T* xh = normalized_.plane(n, c);
          T* d = dx.plane(n, c);
          for (std::size_t i = 0; i < plane; ++i) d[i] = scale * (g[i] - mean_dy - xh[i] * mean_dy_xh);
        }
      } else {
        for (int n = 0; n < dy.n(); ++n) {
          const T* g = dy.plane(n, c);
          T* d = dx.plane(n, c);
          for (std::size_t i = 0; i < plane; ++i) d[i] = scale * g[i];
        }
      }
    }
    return dx;
  }

  template <typename F>
  void visit(F&& f) {
    f(gamma);
    f(beta);
  }
  template <typename F>
  void visit_buffers(F&& f) {
    f(running_mean);
    f(running_var);
  }
  std::size_t parameter_count() const noexcept { return gamma.size() + beta.size(); }

  Parameter<T> gamma;
  Parameter<T> beta;
  Buffer<T> running_mean;
  Buffer<T> running_var;

private:
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  bool used_batch_stats_ = true;
  Tensor<T> normalized_;
  std::vector<T> inv_std_;
};

template <typename T>
class Relu {
public:
  Tensor<T> forward(Tensor<T> x) {
    for (auto& v : x.values()) v = v > T(0) ? v : T(0);
    output_ = x;
    return x;
  }
  Tensor<T> backward(Tensor<T> dy) {
    output_.require_same(dy, "Relu::backward");
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (!(output_[i] > T(0))) dy[i] = T(0);
    return dy;
  }

private:
  Tensor<T> output_;
};

// conv (no bias) -> batch-norm -> ReLU
template <typename T>
class ConvBnRelu {
public:
  ConvBnRelu() = default;
  ConvBnRelu(const std::string& name, int in_channels, int out_channels, int kernel, int dilation,
             std::mt19937_64& rng)
      : conv(name + ".conv", in_channels, out_channels, kernel, dilation, false, rng), bn(name + ".bn", out_channels) {}

  Tensor<T> forward(const Tensor<T>& x) { return relu.forward(bn.forward(conv.forward(x))); }
  Tensor<T> backward(const Tensor<T>& dy) { return conv.backward(bn.backward(relu.backward(dy))); }

  void train(bool on) { bn.training = on; }
  template <typename F>
  void visit(F&& f) {
    conv.visit(f);
    bn.visit(f);
  }
  template <typename F>
  void visit_buffers(F&& f) {
    bn.visit_buffers(f);
  }
  std::size_t parameter_count() const noexcept { return conv.parameter_count() + bn.parameter_count(); }

  Conv2d<T> conv;
  BatchNorm2d<T> bn;
  Relu<T> relu;
};

// 2x2 max pooling, stride 2.
template <typename T>
class MaxPool2 {
public:
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.h() % 2 != 0 || x.w() % 2 != 0) throw ShapeError("MaxPool2: odd spatial size " + x.shape().str());
    in_shape_ = x.shape();
    const int oh = x.h() / 2, ow = x.w() / 2;
    Tensor<T> y(x.n(), x.c(), oh, ow);
    argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (int n = 0; n < x.n(); ++n)
      for (int c = 0; c < x.c(); ++c) {
        const T* p = x.plane(n, c);
        const std::size_t base = static_cast<std::size_t>(n * x.c() + c) * x.shape().plane();
        for (int yy = 0; yy < oh; ++yy)
          for (int xx = 0; xx < ow; ++xx, ++o) {
            std::size_t best = static_cast<std::size_t>(2 * yy) * x.w() + 2 * xx;
            for (std::size_t cand : {best + 1, best + x.w(), best + x.w() + 1})
              if (p[cand] > p[best]) best = cand;
            y[o] = p[best];
            argmax_[o] = base + best;
          }
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(in_shape_);
    for (std::size_t o = 0; o < dy.size(); ++o) dx[argmax_[o]] += dy[o];
    return dx;
  }

private:
  Shape in_shape_{};
  std::vector<std::size_t> argmax_;
};

namespace detail {

// Source taps for one axis of a half-pixel-centred bilinear resize.
struct AxisTaps {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

inline AxisTaps bilinear_taps(int in, int out) {
  AxisTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - lo;
  }
  return t;
}

}  // namespace detail

// Bilinear resize (half-pixel centres, edge clamped) to out_h x out_w.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int out_h, int out_w) {
  if (x.h() == out_h && x.w() == out_w) return x;
  const auto ty = detail::bilinear_taps(x.h(), out_h);
  const auto tx = detail::bilinear_taps(x.w(), out_w);
  Tensor<T> y(x.n(), x.c(), out_h, out_w);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.plane(n, c);
      T* q = y.plane(n, c);
      for (int i = 0; i < out_h; ++i) {
        const T* r0 = p + static_cast<std::size_t>(ty.lo[i]) * x.w();
        const T* r1 = p + static_cast<std::size_t>(ty.hi[i]) * x.w();
        const T fy = static_cast<T>(ty.frac[i]);
        for (int j = 0; j < out_w; ++j) {
          const T fx = static_cast<T>(tx.frac[j]);
          const T top = r0[tx.lo[j]] + fx * (r0[tx.hi[j]] - r0[tx.lo[j]]);
          const T bot = r1[tx.lo[j]] + fx * (r1[tx.hi[j]] - r1[tx.lo[j]]);
          q[static_cast<std::size_t>(i) * out_w + j] = top + fy * (bot - top);
        }
      }
    }
  return y;
}

// Adjoint of resize_bilinear.
template <typename T>
Tensor<T> resize_bilinear_backward(const Tensor<T>& dy, int in_h, int in_w) {
  if (dy.h() == in_h && dy.w() == in_w) return dy;
  const auto ty = detail::bilinear_taps(in_h, dy.h());
  const auto tx = detail::bilinear_taps(in_w, dy.w());
  Tensor<T> dx(dy.n(), dy.c(), in_h, in_w);
  for (int n = 0; n < dy.n(); ++n)
    for (int c = 0; c < dy.c(); ++c) {
      const T* g = dy.plane(n, c);
      T* d = dx.plane(n, c);
      for (int i = 0; i < dy.h(); ++i) {
        T* r0 = d + static_cast<std::size_t>(ty.lo[i]) * in_w;
        T* r1 = d + static_cast<std::size_t>(ty.hi[i]) * in_w;
        const T fy = static_cast<T>(ty.frac[i]);
        for (int j = 0; j < dy.w(); ++j) {
          const T fx = static_cast<T>(tx.frac[j]);
          const T v = g[static_cast<std::size_t>(i) * dy.w() + j];
          const T top = v * (T(1) - fy), bot = v * fy;
          r0[tx.lo[j]] += top * (T(1) - fx);
          r0[tx.hi[j]] += top * fx;
          r1[tx.lo[j]] += bot * (T(1) - fx);
          r1[tx.hi[j]] += bot * fx;
        }
      }
    }
  return dx;
}

template <typename T>
T sigmoid(T z) {
  return z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
}

}  // namespace dbf::nn
