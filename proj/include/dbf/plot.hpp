#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "dbf/config.hpp"
#include "dbf/image_io.hpp"
#include "dbf/metrics.hpp"

namespace dbf {

struct Series {
  std::string label;
  std::vector<CurvePoint> points;
  bool faint = false;
};

struct PlotStyle {
  int width = 720;
  int height = 540;
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
};

namespace detail {

inline cv::Scalar palette(std::size_t i) {
  static const cv::Scalar colors[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44},   {40, 39, 214},
                                      {189, 103, 148}, {75, 86, 140}, {194, 119, 227}, {127, 127, 127}};
  return colors[i % 8];
}

inline std::string tick_text(double v) {
  char buf[32];
  if (std::abs(v) >= 1000 || (v != 0 && std::abs(v) < 0.01))
    std::snprintf(buf, sizeof buf, "%.1e", v);
  else
    std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  if (s.find('.') != std::string::npos && s.find('e') == std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  return s;
}

// Smallest of {1, 2, 2.5, 5, 10} x 10^k that is >= v.
inline double nice_ceil(double v) {
  if (!(v > 0)) return 1;
  const double p = std::pow(10.0, std::floor(std::log10(v)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
    if (m * p >= v * (1 - 1e-12)) return m * p;
  return 10 * p;
}

}  // namespace detail

// Line chart with axes, grid, ticks and a legend in the lower-left corner.
inline cv::Mat render_chart(const std::vector<Series>& series, const PlotStyle& st) {
  cv::Mat img(st.height, st.width, CV_8UC3, cv::Scalar(255, 255, 255));
  const int left = 70, right = 20, top = 40, bottom = 55;
  const int pw = st.width - left - right, ph = st.height - top - bottom;
  const double xr = st.x_max > st.x_min ? st.x_max - st.x_min : 1.0;
  const double yr = st.y_max > st.y_min ? st.y_max - st.y_min : 1.0;
  auto px = [&](double x, double y) {
    return cv::Point(left + static_cast<int>(std::lround((x - st.x_min) / xr * pw)),
                     top + ph - static_cast<int>(std::lround((y - st.y_min) / yr * ph)));
  };
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  const cv::Scalar black(0, 0, 0), grid(225, 225, 225);
  for (int i = 0; i <= 5; ++i) {
    const double fx = st.x_min + xr * i / 5, fy = st.y_min + yr * i / 5;
    cv::line(img, px(fx, st.y_min), px(fx, st.y_max), grid, 1);
    cv::line(img, px(st.x_min, fy), px(st.x_max, fy), grid, 1);
    const auto xt = detail::tick_text(fx), yt = detail::tick_text(fy);
    cv::putText(img, xt, px(fx, st.y_min) + cv::Point(-12, 20), font, 0.45, black, 1, cv::LINE_AA);
    cv::putText(img, yt, px(st.x_min, fy) + cv::Point(-8 - 9 * static_cast<int>(yt.size()), 5), font, 0.45, black, 1,
                cv::LINE_AA);
  }
  cv::rectangle(img, px(st.x_min, st.y_max), px(st.x_max, st.y_min), black, 1);
  int base = 0;
  const cv::Size ts = cv::getTextSize(st.title, font, 0.6, 1, &base);
  cv::putText(img, st.title, {left + (pw - ts.width) / 2, 22}, font, 0.6, black, 1, cv::LINE_AA);
  cv::putText(img, st.x_label, {left + pw / 2 - 4 * static_cast<int>(st.x_label.size()), st.height - 12}, font, 0.5,
              black, 1, cv::LINE_AA);
  cv::putText(img, st.y_label, {8, top - 8}, font, 0.5, black, 1, cv::LINE_AA);

  cv::Mat plot = img(cv::Rect(left, top, pw + 1, ph + 1));
  std::size_t color = 0;
  std::vector<std::pair<std::string, cv::Scalar>> legend;
  for (const auto& s : series) {
    const cv::Scalar c = s.faint ? cv::Scalar(200, 200, 200) : detail::palette(color++);
    std::vector<cv::Point> pts;
    for (const auto& p : s.points)
      if (std::isfinite(p.x) && std::isfinite(p.y)) pts.push_back(px(p.x, p.y) - cv::Point(left, top));
    if (pts.size() >= 2) cv::polylines(plot, pts, false, c, s.faint ? 1 : 2, cv::LINE_AA);
    if (!s.label.empty()) legend.emplace_back(s.label, c);
  }
  int y = top + ph - 12 - 20 * static_cast<int>(legend.size() - 1);
  for (const auto& [text, c] : legend) {
    cv::line(img, {left + 12, y - 4}, {left + 36, y - 4}, c, 2, cv::LINE_AA);
    cv::putText(img, text, {left + 42, y}, font, 0.45, black, 1, cv::LINE_AA);
    y += 20;
  }
  return img;
}

inline std::string legend_label(const std::string& name, const char* metric, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, " (%s = %.4f)", metric, v);
  return name + buf;
}

// PR curves, one per report, area in the legend.
inline void plot_pr(const std::vector<MetricsReport>& reports, const std::filesystem::path& path) {
  std::vector<Series> s;
  for (const auto& r : reports) s.push_back({legend_label(r.label, "MAP", r.map), r.pr_curve, false});
  write_png(path, render_chart(s, {720, 540, "Precision-recall", "Recall", "Precision"}));
}

inline void plot_roc(const std::vector<MetricsReport>& reports, const std::filesystem::path& path) {
  std::vector<Series> s{{"", {{0, 0}, {1, 1}}, true}};
  for (const auto& r : reports) s.push_back({legend_label(r.label, "AUC", r.auc), r.roc_curve, false});
  write_png(path, render_chart(s, {720, 540, "ROC", "False positive rate", "True positive rate"}));
}

// Per-step training loss from a run log plus its trailing moving average.
inline void plot_loss(const std::vector<json>& records, const std::filesystem::path& path, int window = 50) {
  std::vector<CurvePoint> raw;
  for (const auto& r : records)
    if (r.value("type", "") == "step") raw.push_back({r.at("step").get<double>(), r.at("loss").get<double>()});
  if (raw.empty()) throw ParameterError("run log has no step records");
  std::vector<CurvePoint> smooth;
  double acc = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    acc += raw[i].y;
    if (i >= static_cast<std::size_t>(window)) acc -= raw[i - window].y;
    const double n = static_cast<double>(std::min<std::size_t>(i + 1, window));
    smooth.push_back({raw[i].x, acc / n});
  }
  PlotStyle st{720, 540, "Training loss", "Step", "Loss"};
  st.x_min = raw.front().x;
  st.x_max = st.x_min + detail::nice_ceil(std::max(raw.back().x - st.x_min, 1.0));
  st.y_min = 0;
  double top = 0;
  for (const auto& p : raw)
    if (std::isfinite(p.y)) top = std::max(top, p.y);
  st.y_max = detail::nice_ceil(top);
  write_png(path, render_chart({{"loss", raw, true}, {std::to_string(window) + "-step mean", smooth, false}}, st));
}

// One PR and one ROC image per dataset (reports of the same dataset are
// overlaid), plus loss.png when a run log is given.
inline std::vector<std::filesystem::path> emit_plots(const std::vector<MetricsReport>& reports,
                                                     const std::filesystem::path& out_dir,
                                                     const std::vector<json>& run_log = {}) {
  if (reports.empty() && run_log.empty()) throw ParameterError("emit_plots: nothing to plot");
  std::vector<std::string> datasets;
  for (const auto& r : reports)
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
  std::vector<std::filesystem::path> written;
  for (const auto& d : datasets) {
    std::vector<MetricsReport> group;
    for (const auto& r : reports)
      if (r.dataset == d) group.push_back(r);
    written.push_back(out_dir / ("pr_" + d + ".png"));
    plot_pr(group, written.back());
    written.push_back(out_dir / ("roc_" + d + ".png"));
    plot_roc(group, written.back());
  }
  if (!run_log.empty()) {
    written.push_back(out_dir / "loss.png");
    plot_loss(run_log, written.back());
  }
  return written;
}

}  // namespace dbf
