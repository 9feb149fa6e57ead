#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <future>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "dbf/distance.hpp"
#include "dbf/image_io.hpp"
#include "dbf/labelgen.hpp"
#include "dbf/network.hpp"
#include "dbf/rng.hpp"

namespace dbf {

enum class Normalization {
  minmax,  // per-image (v - min) / (max - min)
  range,   // v / maximum of the storage type (255 for 8-bit)
};

inline std::string to_string(Normalization n) { return n == Normalization::minmax ? "minmax" : "range"; }

inline Normalization normalization_from_string(const std::string& s) {
  if (s == "minmax") return Normalization::minmax;
  if (s == "range") return Normalization::range;
  throw ParameterError("unknown normalization '" + s + "'");
}

struct DatasetSpec {
  std::string name = "dataset";
  std::string image_dir;
  std::string mask_dir;
  int target_h = 512;
  int target_w = 512;
  std::optional<Spacing> spacing;  // mm per pixel; HD is reported in mm when set
  int fold_count = 5;
  std::uint64_t seed = 0;
  Normalization normalization = Normalization::minmax;
  double label_alpha = 1.0;
  DistanceMetric label_metric = DistanceMetric::euclidean;

  void validate() const {
    if (target_h < ModelConfig::stride || target_w < ModelConfig::stride || target_h % ModelConfig::stride != 0 ||
        target_w % ModelConfig::stride != 0)
      throw ConfigError("dataset.target_size must be positive multiples of 16, got " + std::to_string(target_h) + "x" +
                        std::to_string(target_w));
    if (fold_count < 2) throw ConfigError("dataset.fold_count must be >= 2");
    if (!(label_alpha >= 0) || !std::isfinite(label_alpha)) throw ConfigError("dataset.label_alpha must be >= 0");
  }
};

struct Sample {
  std::string id;
  Tensor<float> image;  // 1 x 3 x H x W, values in [0, 1]
  LabelSet labels;
};

struct LoadReport {
  std::vector<std::string> missing_masks;  // image ids with no same-stem mask
  std::vector<std::string> warnings;
};

namespace detail {

// stem -> path for every image file in dir.
inline std::map<std::string, std::filesystem::path> scan_images(const std::filesystem::path& dir,
                                                               std::vector<std::string>& warnings) {
  std::map<std::string, std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file() || !has_image_extension(e.path())) continue;
    const std::string stem = e.path().stem().string();
    if (out.count(stem)) {
      warnings.push_back("duplicate stem '" + stem + "' in " + dir.string() + ", keeping " + out[stem].string());
      continue;
    }
    out.emplace(stem, e.path());
  }
  return out;
}

// Position of a trailing "_mask" or "_mask_<digits>" in a stem, or npos.
inline std::size_t mask_suffix(const std::string& stem) {
  const std::size_t p = stem.rfind("_mask");
  if (p == std::string::npos) return p;
  const std::string rest = stem.substr(p + 5);
  if (rest.empty()) return p;
  if (rest.size() >= 2 && rest[0] == '_' &&
      std::all_of(rest.begin() + 1, rest.end(), [](unsigned char c) { return std::isdigit(c); }))
    return p;
  return std::string::npos;
}

}  // namespace detail

// Directory-backed dataset. Only the file list is read up front; samples are
// decoded on demand by load(), which is safe to call from several threads.
class Dataset {
public:
  Dataset() = default;

  static Dataset open(const DatasetSpec& spec) {
    spec.validate();
    Dataset d;
    d.spec_ = spec;
    for (const auto& dir : {spec.image_dir, spec.mask_dir})
      if (!std::filesystem::is_directory(dir)) throw IoError(dir, "dataset directory not found");
    auto images = detail::scan_images(spec.image_dir, d.report_.warnings);
    const auto masks = detail::scan_images(spec.mask_dir, d.report_.warnings);
    // Shared folder (BUSI layout): the mask files are not samples themselves.
    if (std::filesystem::equivalent(spec.image_dir, spec.mask_dir))
      std::erase_if(images, [&](const auto& kv) { return detail::mask_suffix(kv.first) != std::string::npos; });
    for (const auto& [stem, path] : images) {
      Entry e{stem, path, {}};
      auto it = masks.find(stem);
      if (it != masks.end() && !std::filesystem::equivalent(it->second, path)) e.masks.push_back(it->second);
      // stem_mask, then stem_mask_1, stem_mask_2, ... (extra lesions, merged)
      for (auto m = masks.lower_bound(stem + "_mask"); m != masks.end() && m->first.starts_with(stem + "_mask"); ++m)
        if (detail::mask_suffix(m->first) == stem.size()) e.masks.push_back(m->second);
      if (e.masks.empty()) {
        d.report_.missing_masks.push_back(stem);
        continue;
      }
      d.entries_.push_back(std::move(e));
    }
    if (images.empty()) d.report_.warnings.push_back("no images found in " + spec.image_dir);
    if (!d.report_.missing_masks.empty())
      d.report_.warnings.push_back(std::to_string(d.report_.missing_masks.size()) +
                                   " image(s) without a mask were skipped");
    return d;
  }

  const DatasetSpec& spec() const noexcept { return spec_; }
  const LoadReport& report() const noexcept { return report_; }
  std::size_t size() const noexcept { return entries_.size(); }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.id);
    return out;
  }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].id == id) return i;
    throw ParameterError("unknown sample id '" + id + "'");
  }

  Sample load(std::size_t index) const {
    if (index >= entries_.size()) throw ParameterError("sample index out of range");
    const Entry& e = entries_[index];
    Sample s;
    s.id = e.id;
    s.image = load_image(e.image);
    BinaryMask mask = load_mask(e.masks.front());
    for (std::size_t i = 1; i < e.masks.size(); ++i) {
      const BinaryMask extra = load_mask(e.masks[i]);
      for (std::size_t p = 0; p < mask.size(); ++p)
        if (extra[p]) mask.set(p, true);
    }
    s.labels = split_labels(mask, spec_.label_alpha, spec_.label_metric);
    return s;
  }

  Sample load(const std::string& id) const { return load(index_of(id)); }

  // Decodes several samples concurrently; the result order follows `indices`.
  std::vector<Sample> load_many(const std::vector<std::size_t>& indices, int workers = 1) const {
    std::vector<Sample> out(indices.size());
    if (workers <= 1) {
      for (std::size_t i = 0; i < indices.size(); ++i) out[i] = load(indices[i]);
      return out;
    }
    std::vector<std::future<void>> jobs;
    const std::size_t step = static_cast<std::size_t>(workers);
    for (std::size_t w = 0; w < step; ++w)
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < indices.size(); i += step) out[i] = load(indices[i]);
      }));
    for (auto& j : jobs) j.get();
    return out;
  }

private:
  struct Entry {
    std::string id;
    std::filesystem::path image;
    std::vector<std::filesystem::path> masks;  // union of all
  };

  Tensor<float> load_image(const std::filesystem::path& path) const {
    const cv::Mat raw = read_image(path);
    double type_max = 1.0;
    if (raw.depth() == CV_8U) type_max = 255.0;
    if (raw.depth() == CV_16U) type_max = 65535.0;
    cv::Mat rgb = to_rgb_float(raw);
    if (rgb.rows != spec_.target_h || rgb.cols != spec_.target_w)
      cv::resize(rgb, rgb, cv::Size(spec_.target_w, spec_.target_h), 0, 0, cv::INTER_LINEAR);
    if (spec_.normalization == Normalization::minmax) {
      double lo = 0, hi = 0;
      cv::minMaxLoc(rgb.reshape(1), &lo, &hi);
      if (hi > lo)
        rgb = (rgb - cv::Scalar::all(lo)) / (hi - lo);
      else
        rgb = cv::Mat::zeros(rgb.size(), rgb.type());
    } else {
      rgb = rgb / type_max;
    }
    return hwc_to_tensor(rgb);
  }

  BinaryMask load_mask(const std::filesystem::path& path) const {
    cv::Mat raw = read_image(path);
    if (raw.rows != spec_.target_h || raw.cols != spec_.target_w)
      cv::resize(raw, raw, cv::Size(spec_.target_w, spec_.target_h), 0, 0, cv::INTER_NEAREST_EXACT);
    return mat_to_mask(raw);
  }

  DatasetSpec spec_;
  LoadReport report_;
  std::vector<Entry> entries_;
};

inline Dataset load_dataset(const DatasetSpec& spec) { return Dataset::open(spec); }

// ---------------------------------------------------------------- augmentation

struct AugmentOptions {
  double min_scale = 0.75;
  double max_scale = 1.5;
  double flip_probability = 0.5;
};

// One draw of the augmentation pipeline. The image is resized by `scale`,
// then the target-size window starting at (offset_y, offset_x) of the scaled
// image is taken (negative offsets pad with zeros), then optionally mirrored.
struct AugmentGeometry {
  double scale = 1.0;
  int offset_y = 0;
  int offset_x = 0;
  bool flip = false;
};

inline AugmentGeometry draw_geometry(std::mt19937_64& rng, int h, int w, const AugmentOptions& opts = {}) {
  AugmentGeometry g;
  g.scale = std::uniform_real_distribution<double>(opts.min_scale, opts.max_scale)(rng);
  const int sh = std::max(1, static_cast<int>(std::lround(h * g.scale)));
  const int sw = std::max(1, static_cast<int>(std::lround(w * g.scale)));
  g.offset_y = std::uniform_int_distribution<int>(std::min(0, sh - h), std::max(0, sh - h))(rng);
  g.offset_x = std::uniform_int_distribution<int>(std::min(0, sw - w), std::max(0, sw - w))(rng);
  g.flip = std::bernoulli_distribution(opts.flip_probability)(rng);
  return g;
}

namespace detail {

// Crop/pad a scaled plane back to h x w and mirror if asked.
template <typename T>
void place_window(const cv::Mat& scaled, const AugmentGeometry& g, int h, int w, T* out) {
  for (int y = 0; y < h; ++y) {
    const int sy = y + g.offset_y;
    for (int x = 0; x < w; ++x) {
      const int sx = x + g.offset_x;
      const int dx = g.flip ? w - 1 - x : x;
      T v = T(0);
      if (sy >= 0 && sx >= 0 && sy < scaled.rows && sx < scaled.cols) v = scaled.at<T>(sy, sx);
      out[static_cast<std::size_t>(y) * w + dx] = v;
    }
  }
}

}  // namespace detail

// Applies the same geometry to image and mask, then re-derives body/boundary
// from the transformed mask.
inline Sample apply_geometry(const Sample& s, const AugmentGeometry& g) {
  const int h = s.image.h(), w = s.image.w();
  const int sh = std::max(1, static_cast<int>(std::lround(h * g.scale)));
  const int sw = std::max(1, static_cast<int>(std::lround(w * g.scale)));
  Sample out;
  out.id = s.id;
  out.image = Tensor<float>(s.image.shape());
  for (int c = 0; c < s.image.c(); ++c) {
    cv::Mat plane(h, w, CV_32FC1, const_cast<float*>(s.image.plane(0, c)));
    cv::Mat scaled = plane;
    if (sh != h || sw != w) cv::resize(plane, scaled, cv::Size(sw, sh), 0, 0, cv::INTER_LINEAR);
    detail::place_window<float>(scaled, g, h, w, out.image.plane(0, c));
  }
  cv::Mat mask = mask_to_mat(s.labels.final);
  cv::Mat scaled_mask = mask;
  if (sh != h || sw != w) cv::resize(mask, scaled_mask, cv::Size(sw, sh), 0, 0, cv::INTER_NEAREST_EXACT);
  Grid<std::uint8_t> placed(h, w);
  detail::place_window<std::uint8_t>(scaled_mask, g, h, w, placed.values().data());
  for (auto& v : placed.values()) v = v > 127 ? 1 : 0;
  out.labels = split_labels(BinaryMask(std::move(placed)), s.labels.alpha, s.labels.metric);
  return out;
}

inline Sample augment(const Sample& s, std::mt19937_64& rng, const AugmentOptions& opts = {}) {
  return apply_geometry(s, draw_geometry(rng, s.image.h(), s.image.w(), opts));
}

// ------------------------------------------------------------------- k-fold

struct FoldSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

// Seeded shuffle, then fold f takes the f-th contiguous chunk (the first
// n % k chunks are one larger). Both lists keep the input order.
inline FoldSplit kfold_split(const std::vector<std::string>& ids, int k, int fold, std::uint64_t seed) {
  if (k < 2) throw ParameterError("kfold_split: k must be >= 2");
  if (fold < 0 || fold >= k)
    throw ParameterError("kfold_split: fold " + std::to_string(fold) + " outside [0, " + std::to_string(k) + ")");
  if (ids.size() < static_cast<std::size_t>(k))
    throw ParameterError("kfold_split: " + std::to_string(ids.size()) + " ids cannot fill " + std::to_string(k) +
                         " folds");
  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed(seed, {0x6b666f6c64ULL}));
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n = ids.size(), base = n / k, extra = n % k;
  const std::size_t f = static_cast<std::size_t>(fold);
  const std::size_t begin = f * base + std::min(f, extra);
  const std::size_t end = begin + base + (f < extra ? 1 : 0);
  std::vector<bool> in_val(n, false);
  for (std::size_t i = begin; i < end; ++i) in_val[order[i]] = true;
  FoldSplit out;
  for (std::size_t i = 0; i < n; ++i) (in_val[i] ? out.val : out.train).push_back(ids[i]);
  return out;
}

// ---------------------------------------------------------------- synthetic

struct SynthEllipse {
  double cy, cx, ry, rx, angle;

  bool contains(double y, double x) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (x - cx) * c + (y - cy) * s;
    const double v = -(x - cx) * s + (y - cy) * c;
    return (u * u) / (rx * rx) + (v * v) / (ry * ry) <= 1.0;
  }
};

struct SynthImage {
  cv::Mat image;  // 8-bit gray
  BinaryMask mask;
};

// Dark speckled background with 1-2 bright, soft-edged ellipses; the mask is
// the exact union of the ellipses evaluated at pixel centres.
inline SynthImage synth_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double side = std::min(h, w);
  const int count = std::bernoulli_distribution(0.5)(rng) ? 2 : 1;
  std::vector<SynthEllipse> shapes;
  for (int i = 0; i < count; ++i) {
    SynthEllipse e{};
    e.ry = side * (0.12 + 0.13 * u01(rng));
    e.rx = side * (0.12 + 0.13 * u01(rng));
    e.cy = h * (0.25 + 0.5 * u01(rng));
    e.cx = w * (0.25 + 0.5 * u01(rng));
    e.angle = std::acos(-1.0) * u01(rng);
    shapes.push_back(e);
  }
  SynthImage out{cv::Mat(), BinaryMask(h, w)};
  cv::Mat lesion(h, w, CV_32FC1, cv::Scalar(0));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (const auto& e : shapes)
        if (e.contains(y, x)) {
          out.mask.set(y, x, true);
          lesion.at<float>(y, x) = 1.0f;
        }
  cv::GaussianBlur(lesion, lesion, cv::Size(0, 0), 1.5);

  // Speckle: Rayleigh-distributed multiplicative noise with a short correlation length.
  cv::Mat speckle(h, w, CV_32FC1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double r = std::sqrt(-2.0 * std::log(std::max(1e-12, u01(rng))));
      speckle.at<float>(y, x) = static_cast<float>(r / 1.2533141373155001);  // mean 1
    }
  cv::GaussianBlur(speckle, speckle, cv::Size(0, 0), 0.8);
  cv::Scalar mean = cv::mean(speckle);
  speckle /= mean[0];

  const double background = 0.10 + 0.08 * u01(rng);
  const double bright = 0.65 + 0.2 * u01(rng);
  out.image = cv::Mat(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double l = lesion.at<float>(y, x);
      const double v = (background * (1 - l) + bright * l) * speckle.at<float>(y, x);
      out.image.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255));
    }
  return out;
}

// Writes n images to out_dir/images and masks to out_dir/masks as
// synth_000.png ... and returns the ids.
inline std::vector<std::string> synth_generate(const std::filesystem::path& out_dir, int n, int h, int w,
                                               std::uint64_t seed) {
  if (n < 1) throw ParameterError("synth_generate: n must be >= 1");
  if (h < ModelConfig::stride || w < ModelConfig::stride || h % ModelConfig::stride != 0 ||
      w % ModelConfig::stride != 0)
    throw ParameterError("synth_generate: size must be multiples of 16");
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03d", i);
    const SynthImage s = synth_image(h, w, derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    write_png(out_dir / "images" / (std::string(name) + ".png"), s.image);
    write_png(out_dir / "masks" / (std::string(name) + ".png"), mask_to_mat(s.mask));
    ids.emplace_back(name);
  }
  return ids;
}

}  // namespace dbf
