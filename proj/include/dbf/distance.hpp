#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "dbf/grid.hpp"

namespace dbf {

enum class DistanceMetric { euclidean, city_block, chessboard };

inline std::string to_string(DistanceMetric m) {
  switch (m) {
    case DistanceMetric::euclidean: return "euclidean";
    case DistanceMetric::city_block: return "city_block";
    case DistanceMetric::chessboard: return "chessboard";
  }
  return "euclidean";
}

inline DistanceMetric distance_metric_from_string(const std::string& s) {
  if (s == "euclidean") return DistanceMetric::euclidean;
  if (s == "city_block" || s == "cityblock") return DistanceMetric::city_block;
  if (s == "chessboard") return DistanceMetric::chessboard;
  throw ParameterError("unknown distance metric '" + s + "'");
}

// Physical size of one pixel along each axis.
struct Spacing {
  double y = 1.0;
  double x = 1.0;
};

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) along one line.
// f holds squared distances with +inf for "no site"; out receives the transform.
inline void squared_edt_1d(const double* f, std::ptrdiff_t stride, int n, double spacing, double* out,
                           std::vector<int>& v, std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  int k = -1;
  for (int q = 0; q < n; ++q) {
    const double fq = f[q * stride];
    if (fq == kInf) continue;
    const double xq = q * spacing;
    while (k >= 0) {
      const int p = v[k];
      const double xp = p * spacing;
      const double s = ((fq + xq * xq) - (f[p * stride] + xp * xp)) / (2.0 * (xq - xp));
      if (s <= z[k]) {
        --k;
      } else {
        v[++k] = q;
        z[k] = s;
        z[k + 1] = kInf;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
    }
  }
  if (k < 0) {
    for (int q = 0; q < n; ++q) out[q * stride] = kInf;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    const double xq = q * spacing;
    while (z[j + 1] < xq) ++j;
    const double dx = xq - v[j] * spacing;
    out[q * stride] = dx * dx + f[v[j] * stride];
  }
}

}  // namespace detail

// Exact squared Euclidean distance from every pixel to the nearest pixel where
// `sites` is set. +inf everywhere when there are no sites.
inline Grid<double> squared_distance_to(const BinaryMask& sites, Spacing spacing = {}) {
  const int h = sites.height();
  const int w = sites.width();
  Grid<double> f(h, w, detail::kInf);
  for (std::size_t i = 0; i < sites.size(); ++i)
    if (sites[i]) f[i] = 0.0;

  Grid<double> g(h, w);
  std::vector<int> v;
  std::vector<double> z;
  for (int x = 0; x < w; ++x)
    detail::squared_edt_1d(&f(0, x), w, h, spacing.y, &g(0, x), v, z);
  for (int y = 0; y < h; ++y)
    detail::squared_edt_1d(&g(y, 0), 1, w, spacing.x, &f(y, 0), v, z);
  return f;
}

namespace detail {

// Two-pass chamfer; exact for the city-block (4-neighbour) and chessboard
// (8-neighbour) metrics with unit steps.
inline Grid<double> chamfer_distance(const BinaryMask& mask, bool diagonal) {
  const int h = mask.height();
  const int w = mask.width();
  Grid<double> d(h, w, 0.0);
  for (std::size_t i = 0; i < mask.size(); ++i) d[i] = mask[i] ? kInf : 0.0;
  auto relax = [&](int y, int x, int ny, int nx) {
    if (ny < 0 || ny >= h || nx < 0 || nx >= w) return;
    d(y, x) = std::min(d(y, x), d(ny, nx) + 1.0);
  };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      relax(y, x, y - 1, x);
      relax(y, x, y, x - 1);
      if (diagonal) {
        relax(y, x, y - 1, x - 1);
        relax(y, x, y - 1, x + 1);
      }
    }
  for (int y = h - 1; y >= 0; --y)
    for (int x = w - 1; x >= 0; --x) {
      relax(y, x, y + 1, x);
      relax(y, x, y, x + 1);
      if (diagonal) {
        relax(y, x, y + 1, x + 1);
        relax(y, x, y + 1, x - 1);
      }
    }
  return d;
}

}  // namespace detail

}  // namespace dbf
