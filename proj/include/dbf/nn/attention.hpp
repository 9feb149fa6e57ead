#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dbf/nn/layers.hpp"

namespace dbf::nn {

// Object-context pooling: every position gathers value features from all
// positions, weighted by softmax(q . k / sqrt(d)). Query/key use
// value_channels / key_reduction channels. The gathered context goes through
// a 1x1 conv -> BN -> ReLU.
template <typename T>
class ObjectContext {
public:
  ObjectContext() = default;
  ObjectContext(const std::string& name, int in_channels, int value_channels, int key_reduction,
                std::mt19937_64& rng)
      : key_channels_(std::max(1, value_channels / std::max(1, key_reduction))),
        query(name + ".query", in_channels, key_channels_, 1, 1, true, rng),
        key(name + ".key", in_channels, key_channels_, 1, 1, true, rng),
        value(name + ".value", in_channels, value_channels, 1, 1, true, rng),
        out(name + ".out", value_channels, value_channels, 1, 1, rng) {}

  int key_channels() const noexcept { return key_channels_; }

  Tensor<T> forward(const Tensor<T>& x) {
    q_ = query.forward(x);
    k_ = key.forward(x);
    v_ = value.forward(x);
    const int positions = x.h() * x.w();
    const int dk = key_channels_;
    const int dv = v_.c();
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    Tensor<T> context(x.n(), dv, x.h(), x.w());
    attention_.assign(x.n(), std::vector<T>(static_cast<std::size_t>(positions) * positions));
    for (int n = 0; n < x.n(); ++n) {
      std::vector<T>& a = attention_[n];
      // scores[i][j] = sum_c q[c][i] * k[c][j]
      blas::gemm(true, false, positions, positions, dk, scale, q_.sample(n), positions, k_.sample(n), positions, T(0),
                 a.data(), positions);
      for (int i = 0; i < positions; ++i) {
        T* row = a.data() + static_cast<std::size_t>(i) * positions;
        const T mx = *std::max_element(row, row + positions);
        T sum = 0;
        for (int j = 0; j < positions; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (int j = 0; j < positions; ++j) row[j] /= sum;
      }
      // context[c][i] = sum_j v[c][j] * a[i][j]
      blas::gemm(false, true, dv, positions, positions, T(1), v_.sample(n), positions, a.data(), positions, T(0),
                 context.sample(n), positions);
    }
    return out.forward(context);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const Tensor<T> dcontext = out.backward(dy);
    const int positions = dcontext.h() * dcontext.w();
    const int dk = key_channels_;
    const int dv = v_.c();
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    Tensor<T> dq(q_.shape()), dkey(k_.shape()), dval(v_.shape());
    std::vector<T> da(static_cast<std::size_t>(positions) * positions);
    for (int n = 0; n < dcontext.n(); ++n) {
      const std::vector<T>& a = attention_[n];
      const T* dc = dcontext.sample(n);
      // dV = dC * A
      blas::gemm(false, false, dv, positions, positions, T(1), dc, positions, a.data(), positions, T(0),
                 dval.sample(n), positions);
      // dA = dC^T * V
      blas::gemm(true, false, positions, positions, dv, T(1), dc, positions, v_.sample(n), positions, T(0), da.data(),
                 positions);
      // softmax backward, in place: dS = A * (dA - sum_j dA * A)
      for (int i = 0; i < positions; ++i) {
        const T* ar = a.data() + static_cast<std::size_t>(i) * positions;
        T* dr = da.data() + static_cast<std::size_t>(i) * positions;
        T dot = 0;
        for (int j = 0; j < positions; ++j) dot += dr[j] * ar[j];
        for (int j = 0; j < positions; ++j) dr[j] = ar[j] * (dr[j] - dot);
      }
      // dQ = scale * K * dS^T ; dK = scale * Q * dS
      blas::gemm(false, true, dk, positions, positions, scale, k_.sample(n), positions, da.data(), positions, T(0),
                 dq.sample(n), positions);
      blas::gemm(false, false, dk, positions, positions, scale, q_.sample(n), positions, da.data(), positions, T(0),
                 dkey.sample(n), positions);
    }
    Tensor<T> dx = query.backward(dq);
    dx += key.backward(dkey);
    dx += value.backward(dval);
    return dx;
  }

  void train(bool on) { out.train(on); }
  template <typename F>
  void visit(F&& f) {
    query.visit(f);
    key.visit(f);
    value.visit(f);
    out.visit(f);
  }
  template <typename F>
  void visit_buffers(F&& f) {
    out.visit_buffers(f);
  }
  std::size_t parameter_count() const noexcept {
    return query.parameter_count() + key.parameter_count() + value.parameter_count() + out.parameter_count();
  }

private:
  int key_channels_ = 1;

public:
  Conv2d<T> query;
  Conv2d<T> key;
  Conv2d<T> value;
  ConvBnRelu<T> out;

private:
  Tensor<T> q_, k_, v_;
  std::vector<std::vector<T>> attention_;
};

}  // namespace dbf::nn
