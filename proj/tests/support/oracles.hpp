#pragma once

// Slow, obviously-correct reference implementations used by the tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "dbf/grid.hpp"
#include "dbf/metrics.hpp"
#include "dbf/tensor.hpp"

namespace oracle {

inline dbf::BinaryMask random_mask(std::mt19937_64& rng, int h, int w, double p) {
  std::bernoulli_distribution on(p);
  dbf::BinaryMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(y, x, on(rng));
  return m;
}

// Blob-ish mask: union of a few random filled rectangles and discs.
inline dbf::BinaryMask random_blob_mask(std::mt19937_64& rng, int h, int w) {
  dbf::BinaryMask m(h, w);
  std::uniform_int_distribution<int> count(1, 3);
  std::uniform_int_distribution<int> ry(0, h - 1), rx(0, w - 1);
  std::uniform_int_distribution<int> rr(1, std::max(1, std::min(h, w) / 2));
  std::bernoulli_distribution disc(0.5);
  for (int s = count(rng); s > 0; --s) {
    const int cy = ry(rng), cx = rx(rng), r = rr(rng);
    const bool round = disc(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int dy = y - cy, dx = x - cx;
        const bool in = round ? dy * dy + dx * dx <= r * r : std::abs(dy) <= r && std::abs(dx) <= r;
        if (in) m.set(y, x, true);
      }
  }
  return m;
}

// Euclidean distance from every pixel to its nearest background pixel by
// exhaustive search; +inf when there is no background.
inline std::vector<double> brute_distance(const dbf::BinaryMask& m) {
  std::vector<double> d(m.size(), 0.0);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      if (!m(y, x)) continue;
      long best = std::numeric_limits<long>::max();
      for (int v = 0; v < m.height(); ++v)
        for (int u = 0; u < m.width(); ++u)
          if (!m(v, u)) best = std::min(best, static_cast<long>(v - y) * (v - y) + static_cast<long>(u - x) * (u - x));
      d[static_cast<std::size_t>(y) * m.width() + x] =
          best == std::numeric_limits<long>::max() ? std::numeric_limits<double>::infinity()
                                                   : std::sqrt(static_cast<double>(best));
    }
  return d;
}

// Exact integer test: pixel is boundary iff some background pixel lies within
// alpha, i.e. min squared distance <= alpha^2.
inline void brute_split(const dbf::BinaryMask& m, double alpha, dbf::BinaryMask& body, dbf::BinaryMask& bound) {
  body = dbf::BinaryMask(m.height(), m.width());
  bound = dbf::BinaryMask(m.height(), m.width());
  const auto d = brute_distance(m);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m[i]) continue;
    if (d[i] * d[i] <= alpha * alpha + 1e-9)
      bound.set(i, true);
    else
      body.set(i, true);
  }
}

// Foreground pixels with a 4-neighbour that is background or off-grid.
inline std::vector<std::pair<int, int>> brute_boundary(const dbf::BinaryMask& m) {
  std::vector<std::pair<int, int>> out;
  const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      if (!m(y, x)) continue;
      bool edge = false;
      for (int k = 0; k < 4; ++k) {
        const int v = y + dy[k], u = x + dx[k];
        if (v < 0 || u < 0 || v >= m.height() || u >= m.width() || !m(v, u)) edge = true;
      }
      if (edge) out.emplace_back(y, x);
    }
  return out;
}

// Max over both directions of the min pairwise boundary distance.
inline double brute_hausdorff(const dbf::BinaryMask& a, const dbf::BinaryMask& b, double sy = 1, double sx = 1) {
  const auto pa = brute_boundary(a), pb = brute_boundary(b);
  if (pa.empty() && pb.empty()) return 0;
  if (pa.empty() || pb.empty()) return std::numeric_limits<double>::infinity();
  auto directed = [&](const auto& from, const auto& to) {
    double worst = 0;
    for (auto [y, x] : from) {
      double best = std::numeric_limits<double>::infinity();
      for (auto [v, u] : to) best = std::min(best, std::hypot((v - y) * sy, (u - x) * sx));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::max(directed(pa, pb), directed(pb, pa));
}

inline dbf::ConfusionCounts brute_confusion(const std::vector<dbf::Grid<float>>& probs,
                                            const std::vector<dbf::BinaryMask>& targets, double threshold) {
  dbf::ConfusionCounts c;
  for (std::size_t m = 0; m < probs.size(); ++m)
    for (std::size_t i = 0; i < probs[m].size(); ++i) {
      const bool pred = probs[m][i] >= threshold;
      const bool truth = targets[m][i];
      if (pred && truth) ++c.tp;
      if (pred && !truth) ++c.fp;
      if (!pred && !truth) ++c.tn;
      if (!pred && truth) ++c.fn;
    }
  return c;
}

// Direct "same" convolution, stride 1, zero padding dilation*(k-1)/2.
template <typename T>
dbf::Tensor<T> direct_conv(const dbf::Tensor<T>& x, const dbf::Tensor<T>& weight, const dbf::Tensor<T>* bias,
                           int dilation) {
  const int out_c = weight.n(), in_c = weight.c(), k = weight.h();
  const int pad = dilation * (k - 1) / 2;
  dbf::Tensor<T> y(x.n(), out_c, x.h(), x.w());
  for (int n = 0; n < x.n(); ++n)
    for (int o = 0; o < out_c; ++o)
      for (int r = 0; r < x.h(); ++r)
        for (int c = 0; c < x.w(); ++c) {
          double s = bias ? static_cast<double>((*bias)[o]) : 0.0;
          for (int i = 0; i < in_c; ++i)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int yy = r + ky * dilation - pad, xx = c + kx * dilation - pad;
                if (yy < 0 || xx < 0 || yy >= x.h() || xx >= x.w()) continue;
                s += static_cast<double>(weight.at(o, i, ky, kx)) * x.at(n, i, yy, xx);
              }
          y.at(n, o, r, c) = static_cast<T>(s);
        }
  return y;
}

// Central finite difference of f with respect to *v.
inline double central_difference(const std::function<double()>& f, double& v, double h) {
  const double saved = v;
  v = saved + h;
  const double up = f();
  v = saved - h;
  const double down = f();
  v = saved;
  return (up - down) / (2 * h);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

template <typename T>
void fill_uniform(dbf::Tensor<T>& t, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = static_cast<T>(u(rng));
}

}  // namespace oracle
