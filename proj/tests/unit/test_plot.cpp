#include <gtest/gtest.h>

#include <opencv2/imgcodecs.hpp>

#include "dbf/plot.hpp"
#include "support/tempdir.hpp"

using namespace dbf;

namespace {

MetricsReport report(const std::string& dataset, const std::string& label, bool perfect) {
  MetricsReport r;
  r.dataset = dataset;
  r.label = label;
  for (int i = 0; i <= 10; ++i) {
    const double t = i / 10.0;
    r.thresholds.push_back(t);
    r.pr_curve.push_back({1 - t * t, perfect ? 1.0 : 0.5 + 0.5 * t});
    r.roc_curve.push_back(perfect ? CurvePoint{i == 0 ? 1.0 : 0.0, i == 10 ? 0.0 : 1.0} : CurvePoint{1 - t, 1 - t * t});
  }
  r.map = perfect ? 1.0 : 0.8;
  r.auc = perfect ? 1.0 : 0.66;
  return r;
}

std::vector<json> run_log(int n) {
  std::vector<json> log{{{"type", "run"}}};
  for (int s = 0; s < n; ++s) log.push_back({{"type", "step"}, {"step", s}, {"loss", 10.0 / (1 + s)}});
  return log;
}

}  // namespace

TEST(Plots, OneReportGivesThreeImages) {
  oracle::TempDir t;
  const auto files = emit_plots({report("busi", "ours", false)}, t.path(), run_log(120));
  ASSERT_EQ(files.size(), 3u);
  for (const auto& f : files) {
    const cv::Mat img = cv::imread(f.string());
    ASSERT_FALSE(img.empty()) << f;
    EXPECT_EQ(img.cols, 720);
    EXPECT_EQ(img.rows, 540);
  }
}

TEST(Plots, SameDatasetOverlaidPerDatasetPairs) {
  oracle::TempDir t;
  const auto files =
      emit_plots({report("busi", "a", false), report("busi", "b", true), report("uns", "c", false)}, t.path());
  EXPECT_EQ(files.size(), 4u);
  EXPECT_TRUE(std::filesystem::exists(t / "pr_busi.png"));
  EXPECT_TRUE(std::filesystem::exists(t / "roc_uns.png"));
}

TEST(Plots, PerfectRocHugsTopLeft) {
  // ROC of a perfect classifier passes through (0, 1): the pixel just inside
  // the top-left plot corner carries curve colour.
  const auto r = report("busi", "p", true);
  std::vector<Series> s{{"p", r.roc_curve, false}};
  const cv::Mat img = render_chart(s, {720, 540, "ROC", "FPR", "TPR"});
  const cv::Vec3b corner = img.at<cv::Vec3b>(40 + 2, 70 + 1);
  EXPECT_NE(corner, cv::Vec3b(255, 255, 255));
  const cv::Vec3b middle = img.at<cv::Vec3b>(40 + 242, 70 + 160);
  EXPECT_EQ(middle, cv::Vec3b(255, 255, 255));
}

TEST(Plots, NothingToPlot) {
  oracle::TempDir t;
  EXPECT_THROW(emit_plots({}, t.path()), ParameterError);
  EXPECT_THROW(plot_loss(std::vector<json>{{{"type", "run"}}}, t / "x.png"), ParameterError);
}

TEST(Plots, NiceAxisCeiling) {
  EXPECT_EQ(detail::nice_ceil(499), 500);
  EXPECT_EQ(detail::nice_ceil(53.2), 100);
  EXPECT_EQ(detail::nice_ceil(1.9), 2);
  EXPECT_EQ(detail::nice_ceil(0.24), 0.25);
}
