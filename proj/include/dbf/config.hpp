#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dbf/data.hpp"
#include "dbf/losses.hpp"
#include "dbf/network.hpp"

namespace dbf {

using json = nlohmann::json;

struct TrainConfig {
  std::string preset;  // name of the preset this config started from, if any
  DatasetSpec dataset;
  ModelConfig model;
  LossWeights loss;
  double lr0 = 0.001;
  double poly_power = 0.9;
  int batch_size = 2;
  int max_epochs = 300;
  int max_steps = 0;  // > 0 caps the schedule length
  int fold = 0;
  std::uint64_t seed = 0;
  std::string checkpoint_dir = "runs/default";
  bool deterministic = false;
  bool augment = true;
  AugmentOptions augment_options;
  bool overfit = false;  // train and validate on every sample instead of a fold split
  int eval_every = 1;    // epochs between validation passes (the last epoch is always validated)
  int workers = 1;       // sample decoding threads

  void validate() const {
    dataset.validate();
    model.validate();
    try {
      loss.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("loss: ") + e.what());
    }
    if (!(lr0 > 0)) throw ConfigError("lr0 must be > 0");
    if (!(poly_power >= 0)) throw ConfigError("poly_power must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    if (!overfit && (fold < 0 || fold >= dataset.fold_count))
      throw ConfigError("fold must be in [0, " + std::to_string(dataset.fold_count) + ")");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (augment_options.min_scale <= 0 || augment_options.max_scale < augment_options.min_scale)
      throw ConfigError("augment scale range is invalid");
  }
};

// ------------------------------------------------------------------ to json

inline json to_json(const DatasetSpec& d) {
  json j{{"name", d.name},
         {"image_dir", d.image_dir},
         {"mask_dir", d.mask_dir},
         {"target_size", {d.target_h, d.target_w}},
         {"fold_count", d.fold_count},
         {"seed", d.seed},
         {"normalization", to_string(d.normalization)},
         {"label_alpha", d.label_alpha},
         {"label_metric", to_string(d.label_metric)}};
  j["spacing"] = d.spacing ? json{d.spacing->y, d.spacing->x} : json(nullptr);
  return j;
}

inline json to_json(const ModelConfig& m) {
  return json{{"in_channels", m.in_channels},
              {"encoder_channels", m.encoder_channels},
              {"encoder_dilations", m.encoder_dilations},
              {"aspp_branch_channels", m.aspp_branch_channels},
              {"aspp_rates", m.aspp_rates},
              {"aspp_out_channels", m.aspp_out_channels},
              {"oc_key_reduction", m.oc_key_reduction},
              {"ffs_channels", m.ffs_channels},
              {"ffm_kernel", m.ffm_kernel},
              {"ffs",
               {{"count", m.ffs.count},
                {"use_ffm", m.ffs.use_ffm},
                {"lambda_init", m.ffs.lambda_init},
                {"supervise_body", m.ffs.supervise_body},
                {"supervise_bound", m.ffs.supervise_bound}}}};
}

inline json to_json(const LossWeights& l) {
  return json{{"lambda1", l.lambda1},         {"lambda2", l.lambda2},
              {"beta", l.beta},               {"guarded_beta", l.guarded_beta},
              {"literal_eps", l.literal_eps}, {"dice_smooth", l.dice_smooth},
              {"weighting", to_string(l.weighting)}, {"enable_body", l.enable_body},
              {"enable_bound", l.enable_bound}};
}

inline json to_json(const TrainConfig& c) {
  return json{{"preset", c.preset},
              {"dataset", to_json(c.dataset)},
              {"model", to_json(c.model)},
              {"loss", to_json(c.loss)},
              {"lr0", c.lr0},
              {"poly_power", c.poly_power},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"max_steps", c.max_steps},
              {"fold", c.fold},
              {"seed", c.seed},
              {"checkpoint_dir", c.checkpoint_dir},
              {"deterministic", c.deterministic},
              {"augment", c.augment},
              {"augment_options",
               {{"min_scale", c.augment_options.min_scale},
                {"max_scale", c.augment_options.max_scale},
                {"flip_probability", c.augment_options.flip_probability}}},
              {"overfit", c.overfit},
              {"eval_every", c.eval_every},
              {"workers", c.workers}};
}

// ---------------------------------------------------------------- from json

namespace detail {

// Reads j[key] into out when present; rejects keys not listed in `known`.
class JsonReader {
public:
  JsonReader(const json& j, std::string where, std::set<std::string> known) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw ConfigError(where_ + ": unknown key '" + k + "'");
  }

  template <typename T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return where_ + "." + key; }

private:
  const json& j_;
  std::string where_;
};

}  // namespace detail

inline void apply_json(const json& j, DatasetSpec& d, const std::string& where = "dataset") {
  detail::JsonReader r(j, where,
                       {"name", "image_dir", "mask_dir", "target_size", "spacing", "fold_count", "seed",
                        "normalization", "label_alpha", "label_metric"});
  r.get("name", d.name);
  r.get("image_dir", d.image_dir);
  r.get("mask_dir", d.mask_dir);
  if (r.has("target_size")) {
    std::array<int, 2> hw{};
    r.get("target_size", hw);
    d.target_h = hw[0];
    d.target_w = hw[1];
  }
  if (r.has("spacing")) {
    if (r.at("spacing").is_null()) {
      d.spacing.reset();
    } else {
      std::array<double, 2> s{};
      r.get("spacing", s);
      d.spacing = Spacing{s[0], s[1]};
    }
  }
  r.get("fold_count", d.fold_count);
  r.get("seed", d.seed);
  if (r.has("normalization")) {
    std::string s;
    r.get("normalization", s);
    try {
      d.normalization = normalization_from_string(s);
    } catch (const ParameterError& e) {
      throw ConfigError(r.path("normalization") + ": " + e.what());
    }
  }
  r.get("label_alpha", d.label_alpha);
  if (r.has("label_metric")) {
    std::string s;
    r.get("label_metric", s);
    try {
      d.label_metric = distance_metric_from_string(s);
    } catch (const ParameterError& e) {
      throw ConfigError(r.path("label_metric") + ": " + e.what());
    }
  }
}

inline void apply_json(const json& j, ModelConfig& m, const std::string& where = "model") {
  detail::JsonReader r(j, where,
                       {"in_channels", "encoder_channels", "encoder_dilations", "aspp_branch_channels", "aspp_rates",
                        "aspp_out_channels", "oc_key_reduction", "ffs_channels", "ffm_kernel", "ffs"});
  r.get("in_channels", m.in_channels);
  r.get("encoder_channels", m.encoder_channels);
  r.get("encoder_dilations", m.encoder_dilations);
  r.get("aspp_branch_channels", m.aspp_branch_channels);
  r.get("aspp_rates", m.aspp_rates);
  r.get("aspp_out_channels", m.aspp_out_channels);
  r.get("oc_key_reduction", m.oc_key_reduction);
  r.get("ffs_channels", m.ffs_channels);
  r.get("ffm_kernel", m.ffm_kernel);
  if (r.has("ffs")) {
    detail::JsonReader f(r.at("ffs"), where + ".ffs",
                         {"count", "use_ffm", "lambda_init", "supervise_body", "supervise_bound"});
    f.get("count", m.ffs.count);
    f.get("use_ffm", m.ffs.use_ffm);
    f.get("lambda_init", m.ffs.lambda_init);
    f.get("supervise_body", m.ffs.supervise_body);
    f.get("supervise_bound", m.ffs.supervise_bound);
  }
}

inline void apply_json(const json& j, LossWeights& l, const std::string& where = "loss") {
  detail::JsonReader r(j, where,
                       {"lambda1", "lambda2", "beta", "guarded_beta", "literal_eps", "dice_smooth", "weighting",
                        "enable_body", "enable_bound"});
  r.get("lambda1", l.lambda1);
  r.get("lambda2", l.lambda2);
  r.get("beta", l.beta);
  r.get("guarded_beta", l.guarded_beta);
  r.get("literal_eps", l.literal_eps);
  r.get("dice_smooth", l.dice_smooth);
  if (r.has("weighting")) {
    std::string s;
    r.get("weighting", s);
    try {
      l.weighting = bce_weighting_from_string(s);
    } catch (const ParameterError& e) {
      throw ConfigError(r.path("weighting") + ": " + e.what());
    }
  }
  r.get("enable_body", l.enable_body);
  r.get("enable_bound", l.enable_bound);
}

inline TrainConfig preset_config(const std::string& name);

// Overlays the keys present in j onto c. A "preset" key first resets c to
// that preset, so a config file can start from one and override a few keys.
inline void apply_json(const json& j, TrainConfig& c) {
  detail::JsonReader r(j, "config",
                       {"preset", "dataset", "model", "loss", "lr0", "poly_power", "batch_size", "max_epochs",
                        "max_steps", "fold", "seed", "checkpoint_dir", "deterministic", "augment", "augment_options",
                        "overfit", "eval_every", "workers"});
  if (r.has("preset")) {
    std::string p;
    r.get("preset", p);
    if (!p.empty()) c = preset_config(p);
  }
  if (r.has("dataset")) apply_json(r.at("dataset"), c.dataset);
  if (r.has("model")) apply_json(r.at("model"), c.model);
  if (r.has("loss")) apply_json(r.at("loss"), c.loss);
  r.get("lr0", c.lr0);
  r.get("poly_power", c.poly_power);
  r.get("batch_size", c.batch_size);
  r.get("max_epochs", c.max_epochs);
  r.get("max_steps", c.max_steps);
  r.get("fold", c.fold);
  r.get("seed", c.seed);
  r.get("checkpoint_dir", c.checkpoint_dir);
  r.get("deterministic", c.deterministic);
  r.get("augment", c.augment);
  if (r.has("augment_options")) {
    detail::JsonReader a(r.at("augment_options"), "config.augment_options",
                         {"min_scale", "max_scale", "flip_probability"});
    a.get("min_scale", c.augment_options.min_scale);
    a.get("max_scale", c.augment_options.max_scale);
    a.get("flip_probability", c.augment_options.flip_probability);
  }
  r.get("overfit", c.overfit);
  r.get("eval_every", c.eval_every);
  r.get("workers", c.workers);
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig base = {}) {
  apply_json(j, base);
  return base;
}

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError(path.string(), "cannot write");
  out << j.dump(2) << "\n";
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  return train_config_from_json(read_json_file(path));
}

// ------------------------------------------------------------------ presets

// Width-reduced network used for the synthetic desk-scale runs.
inline ModelConfig small_model_config() {
  ModelConfig m;
  m.encoder_channels = {8, 8, 16, 32, 32};
  m.aspp_branch_channels = 8;
  m.aspp_out_channels = 32;
  m.ffs_channels = {8, 16};
  return m;
}

inline TrainConfig preset_config(const std::string& name) {
  TrainConfig c;
  c.preset = name;
  if (name == "busi") {
    c.dataset.name = "busi";
    c.dataset.image_dir = "data/busi/images";
    c.dataset.mask_dir = "data/busi/masks";
    c.dataset.target_h = 512;
    c.dataset.target_w = 512;
    c.batch_size = 2;
    c.max_epochs = 300;
  } else if (name == "uns") {
    // 580x420 source frames, resized to the nearest multiple of 16
    c.dataset.name = "uns";
    c.dataset.image_dir = "data/uns/images";
    c.dataset.mask_dir = "data/uns/masks";
    c.dataset.target_h = 416;
    c.dataset.target_w = 576;
    c.batch_size = 4;
    c.max_epochs = 100;
  } else if (name == "uhes") {
    c.dataset.name = "uhes";
    c.dataset.image_dir = "data/uhes/images";
    c.dataset.mask_dir = "data/uhes/masks";
    c.dataset.target_h = 256;
    c.dataset.target_w = 448;
    c.batch_size = 6;
    c.max_epochs = 350;
  } else if (name == "synthetic") {
    c.dataset.name = "synthetic";
    c.dataset.image_dir = "data/synthetic/images";
    c.dataset.mask_dir = "data/synthetic/masks";
    c.dataset.target_h = 128;
    c.dataset.target_w = 128;
    c.dataset.seed = 7;
    c.model = small_model_config();
    c.batch_size = 2;
    c.max_epochs = 125;
    c.max_steps = 500;
    c.overfit = true;
    c.augment = false;
    c.deterministic = true;
    c.eval_every = 25;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected busi, uns, uhes or synthetic)");
  }
  c.checkpoint_dir = "runs/" + name;
  return c;
}

}  // namespace dbf
