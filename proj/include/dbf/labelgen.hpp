#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "dbf/distance.hpp"
#include "dbf/grid.hpp"

namespace dbf {

// Supervision targets derived from one ground-truth mask.
struct LabelSet {
  BinaryMask final;
  BinaryMask body;
  BinaryMask bound;
  double alpha = 1.0;
  DistanceMetric metric = DistanceMetric::euclidean;

  // body and bound are disjoint and their union is final.
  bool consistent() const {
    if (!final.same_shape(body) || !final.same_shape(bound)) return false;
    for (std::size_t i = 0; i < final.size(); ++i) {
      if (body[i] && bound[i]) return false;
      if ((body[i] || bound[i]) != final[i]) return false;
    }
    return true;
  }
};

// Distance from each foreground pixel to the nearest background pixel; 0 on
// background. Pixels outside the grid are not background, so a mask without
// any background maps every pixel to +inf.
inline Grid<double> distance_map(const BinaryMask& mask, DistanceMetric metric = DistanceMetric::euclidean) {
  if (!mask.valid()) throw ShapeError("distance_map: empty mask");
  if (metric != DistanceMetric::euclidean)
    return detail::chamfer_distance(mask, metric == DistanceMetric::chessboard);

  BinaryMask background(mask.height(), mask.width());
  for (std::size_t i = 0; i < mask.size(); ++i) background.set(i, !mask[i]);
  Grid<double> d = squared_distance_to(background);
  for (auto& v : d.values()) v = std::sqrt(v);
  return d;
}

// Foreground pixels within alpha of the background form the boundary band,
// the rest form the body.
inline LabelSet split_labels(const BinaryMask& mask, double alpha = 1.0,
                             DistanceMetric metric = DistanceMetric::euclidean) {
  if (!(alpha >= 0.0) || std::isinf(alpha))
    throw ParameterError("split_labels: alpha must be finite and >= 0, got " + std::to_string(alpha));
  const Grid<double> d = distance_map(mask, metric);
  LabelSet out{mask, BinaryMask(mask.height(), mask.width()), BinaryMask(mask.height(), mask.width()), alpha, metric};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    if (d[i] <= alpha)
      out.bound.set(i, true);
    else
      out.body.set(i, true);
  }
  return out;
}

}  // namespace dbf
