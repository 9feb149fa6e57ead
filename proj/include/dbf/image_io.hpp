#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dbf/errors.hpp"
#include "dbf/grid.hpp"
#include "dbf/tensor.hpp"

namespace dbf {

inline const std::vector<std::string>& image_extensions() {
  static const std::vector<std::string> exts{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  return exts;
}

inline bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  const auto& e = image_extensions();
  return std::find(e.begin(), e.end(), ext) != e.end();
}

// Reads any 8/16-bit gray, BGR or BGRA image; throws IoError with the path.
inline cv::Mat read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError(path.string(), "file not found");
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError(path.string(), "unreadable image");
  return m;
}

// PNG with fixed encoder settings so identical pixels give identical bytes.
inline void write_png(const std::filesystem::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6, cv::IMWRITE_PNG_STRATEGY, cv::IMWRITE_PNG_STRATEGY_DEFAULT};
  if (!cv::imwrite(path.string(), m, params)) throw IoError(path.string(), "could not write PNG");
}

// Any image to 3-channel RGB float32 in the source value range.
inline cv::Mat to_rgb_float(const cv::Mat& src) {
  cv::Mat rgb;
  switch (src.channels()) {
    case 1: cv::cvtColor(src, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(src, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(src, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw ShapeError("unsupported channel count " + std::to_string(src.channels()));
  }
  cv::Mat f;
  rgb.convertTo(f, CV_32F);
  return f;
}

// H x W x 3 float image to a 1 x 3 x H x W tensor.
inline Tensor<float> hwc_to_tensor(const cv::Mat& rgb) {
  if (rgb.type() != CV_32FC3) throw ShapeError("hwc_to_tensor expects CV_32FC3");
  Tensor<float> t(1, 3, rgb.rows, rgb.cols);
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<cv::Vec3f>(y);
    for (int x = 0; x < rgb.cols; ++x)
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = row[x][c];
  }
  return t;
}

inline cv::Mat mask_to_mat(const BinaryMask& m) {
  cv::Mat out(m.height(), m.width(), CV_8UC1);
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) out.at<std::uint8_t>(y, x) = m(y, x) ? 255 : 0;
  return out;
}

// Masks are split at half their maximum (127.5 for 0/255 files); masks already
// in {0,1} at 0.
inline BinaryMask mat_to_mask(const cv::Mat& src) {
  cv::Mat gray = src;
  if (src.channels() == 3) cv::cvtColor(src, gray, cv::COLOR_BGR2GRAY);
  if (src.channels() == 4) cv::cvtColor(src, gray, cv::COLOR_BGRA2GRAY);
  cv::Mat f;
  gray.convertTo(f, CV_64F);
  double lo = 0, hi = 0;
  cv::minMaxLoc(f, &lo, &hi);
  const double cut = hi > 1.0 ? hi / 2.0 : 0.0;
  BinaryMask m(f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y)
    for (int x = 0; x < f.cols; ++x) m.set(y, x, f.at<double>(y, x) > cut);
  return m;
}

}  // namespace dbf
