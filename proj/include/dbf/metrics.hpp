#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dbf/distance.hpp"
#include "dbf/grid.hpp"

namespace dbf {

inline constexpr double kInfiniteDistance = std::numeric_limits<double>::infinity();

// Dice similarity in percent; two empty masks agree perfectly (100).
inline double dsc(const BinaryMask& pred, const BinaryMask& target) {
  require_same_shape(pred, target, "dsc");
  std::size_t inter = 0, sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += (pred[i] && target[i]) ? 1 : 0;
    sum += (pred[i] ? 1 : 0) + (target[i] ? 1 : 0);
  }
  if (sum == 0) return 100.0;
  return 100.0 * 2.0 * static_cast<double>(inter) / static_cast<double>(sum);
}

// Foreground pixels removed by a 4-connected erosion; pixels on the image edge
// count as boundary (outside the grid is treated as background here).
inline BinaryMask boundary(const BinaryMask& mask) {
  const int h = mask.height(), w = mask.width();
  BinaryMask out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      const bool interior = y > 0 && y < h - 1 && x > 0 && x < w - 1 && mask(y - 1, x) && mask(y + 1, x) &&
                            mask(y, x - 1) && mask(y, x + 1);
      if (!interior) out.set(y, x, true);
    }
  return out;
}

// Symmetric Hausdorff distance between the boundaries of two masks, in pixels
// or, with a spacing, in physical units. One side empty -> +inf; both -> 0.
inline double hausdorff(const BinaryMask& pred, const BinaryMask& target, std::optional<Spacing> spacing = {}) {
  require_same_shape(pred, target, "hausdorff");
  const bool pe = pred.none(), te = target.none();
  if (pe && te) return 0.0;
  if (pe || te) return kInfiniteDistance;
  const Spacing sp = spacing.value_or(Spacing{});
  const BinaryMask bp = boundary(pred), bt = boundary(target);
  auto directed = [&](const BinaryMask& from, const BinaryMask& to) {
    const Grid<double> d2 = squared_distance_to(to, sp);
    double worst = 0;
    for (std::size_t i = 0; i < from.size(); ++i)
      if (from[i]) worst = std::max(worst, d2[i]);
    return std::sqrt(worst);
  };
  return std::max(directed(bp, bt), directed(bt, bp));
}

// Thresholds for the PR/ROC sweep; a pixel is positive when prob >= threshold.
struct ThresholdSweep {
  std::vector<double> thresholds;

  // n evenly spaced values covering [0, 1].
  static ThresholdSweep uniform(int n) {
    if (n < 2) throw ParameterError("threshold sweep needs at least 2 points");
    ThresholdSweep s;
    for (int i = 0; i < n; ++i) s.thresholds.push_back(static_cast<double>(i) / (n - 1));
    return s;
  }
};

struct CurvePoint {
  double x = 0;  // recall (PR) or false-positive rate (ROC)
  double y = 0;  // precision (PR) or true-positive rate (ROC)
  bool operator==(const CurvePoint&) const = default;
};

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  bool operator==(const ConfusionCounts&) const = default;
};

struct PrRoc {
  std::vector<double> thresholds;        // ascending
  std::vector<ConfusionCounts> counts;   // one per threshold
  std::vector<CurvePoint> pr;            // (recall, precision) per threshold
  std::vector<CurvePoint> roc;           // (fpr, tpr) per threshold
  double map = 0;                        // area under PR (trapezoid over recall)
  double auc = 0;                        // area under ROC (trapezoid over FPR)
};

inline CurvePoint pr_point(const ConfusionCounts& c) {
  const double pos = static_cast<double>(c.tp + c.fn);
  const double pred = static_cast<double>(c.tp + c.fp);
  return {pos > 0 ? c.tp / pos : 0.0, pred > 0 ? c.tp / pred : 1.0};
}

inline CurvePoint roc_point(const ConfusionCounts& c) {
  const double pos = static_cast<double>(c.tp + c.fn);
  const double neg = static_cast<double>(c.fp + c.tn);
  return {neg > 0 ? c.fp / neg : 0.0, pos > 0 ? c.tp / pos : 0.0};
}

// Trapezoidal area along a path whose x never decreases.
inline double trapezoid_area(std::span<const CurvePoint> path) {
  double area = 0;
  for (std::size_t i = 1; i < path.size(); ++i) area += (path[i].x - path[i - 1].x) * (path[i].y + path[i - 1].y) / 2;
  return area;
}

// Pixels of all images pooled into a single PR and ROC curve. The PR area is
// anchored at (recall 0, precision 1); the ROC area at (0,0) and (1,1).
inline PrRoc pr_roc(std::span<const Grid<float>> probs, std::span<const BinaryMask> targets,
                    const ThresholdSweep& sweep) {
  if (probs.empty()) throw ParameterError("pr_roc: no predictions");
  if (probs.size() != targets.size()) throw ParameterError("pr_roc: predictions and targets differ in count");
  if (sweep.thresholds.empty()) throw ParameterError("pr_roc: empty threshold sweep");
  PrRoc out;
  out.thresholds = sweep.thresholds;
  std::sort(out.thresholds.begin(), out.thresholds.end());
  out.thresholds.erase(std::unique(out.thresholds.begin(), out.thresholds.end()), out.thresholds.end());
  const std::size_t nt = out.thresholds.size();

  // hist[k]: pixels positive for exactly the first k thresholds.
  std::vector<std::size_t> pos_hist(nt + 1, 0), neg_hist(nt + 1, 0);
  for (std::size_t m = 0; m < probs.size(); ++m) {
    const auto& p = probs[m];
    const auto& g = targets[m];
    if (p.height() != g.height() || p.width() != g.width()) throw ShapeError("pr_roc: prediction/target shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto k = static_cast<std::size_t>(
          std::upper_bound(out.thresholds.begin(), out.thresholds.end(), static_cast<double>(p[i])) -
          out.thresholds.begin());
      (g[i] ? pos_hist : neg_hist)[k] += 1;
    }
  }
  std::size_t total_pos = 0, total_neg = 0;
  for (std::size_t k = 0; k <= nt; ++k) {
    total_pos += pos_hist[k];
    total_neg += neg_hist[k];
  }
  // Counts of pixels with k > t (positive at threshold index t).
  std::size_t tp = total_pos - pos_hist[0], fp = total_neg - neg_hist[0];
  for (std::size_t t = 0; t < nt; ++t) {
    if (t > 0) {
      tp -= pos_hist[t];
      fp -= neg_hist[t];
    }
    ConfusionCounts c{tp, fp, total_neg - fp, total_pos - tp};
    out.counts.push_back(c);
    out.pr.push_back(pr_point(c));
    out.roc.push_back(roc_point(c));
  }
  // Walk from the strictest threshold to the loosest: recall and FPR only grow.
  std::vector<CurvePoint> pr{{0.0, 1.0}}, roc{{0.0, 0.0}};
  for (std::size_t t = nt; t-- > 0;) {
    pr.push_back(out.pr[t]);
    roc.push_back(out.roc[t]);
  }
  roc.push_back({1.0, 1.0});
  out.map = std::clamp(trapezoid_area(pr), 0.0, 1.0);
  out.auc = std::clamp(trapezoid_area(roc), 0.0, 1.0);
  return out;
}

struct MeanStd {
  double mean = 0;
  double stddev = 0;  // population standard deviation
  std::size_t count = 0;
  std::size_t excluded = 0;  // non-finite values left out
};

inline MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  double s = 0;
  for (double v : values) {
    if (!std::isfinite(v)) {
      ++r.excluded;
      continue;
    }
    s += v;
    ++r.count;
  }
  if (r.count == 0) return r;
  r.mean = s / r.count;
  double ss = 0;
  for (double v : values)
    if (std::isfinite(v)) ss += (v - r.mean) * (v - r.mean);
  r.stddev = std::sqrt(ss / r.count);
  return r;
}

struct ImageMetrics {
  std::string id;
  double dsc = 0;  // percent
  double hd = 0;   // pixels or physical units; +inf when one mask is empty
  bool empty_target = false;  // lesion-free ground truth; left out of the HD aggregate
};

struct MetricsReport {
  std::string dataset;
  std::string label;  // model/run name used in plot legends
  std::string hd_units = "px";
  int fold = 0;
  std::vector<ImageMetrics> per_image;
  MeanStd dsc;
  MeanStd hd;
  std::vector<double> thresholds;
  std::vector<CurvePoint> pr_curve;
  std::vector<CurvePoint> roc_curve;
  double map = 0;
  double auc = 0;
};

// Fills the aggregate fields from per_image. Non-finite HD values and images
// with an empty target count as excluded.
inline void aggregate(MetricsReport& r) {
  std::vector<double> d, h;
  for (const auto& m : r.per_image) {
    d.push_back(m.dsc);
    h.push_back(m.empty_target ? std::numeric_limits<double>::quiet_NaN() : m.hd);
  }
  r.dsc = mean_std(d);
  r.hd = mean_std(h);
}

// Mean +- std across folds of each fold's mean DSC and HD.
struct FoldSummary {
  MeanStd dsc;
  MeanStd hd;
  MeanStd map;
  MeanStd auc;
};

inline FoldSummary summarize_folds(std::span<const MetricsReport> reports) {
  std::vector<double> d, h, m, a;
  for (const auto& r : reports) {
    d.push_back(r.dsc.mean);
    h.push_back(r.hd.count > 0 ? r.hd.mean : kInfiniteDistance);
    m.push_back(r.map);
    a.push_back(r.auc);
  }
  return {mean_std(d), mean_std(h), mean_std(m), mean_std(a)};
}

}  // namespace dbf
