#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dbf/blas.hpp"
#include "dbf/checkpoint.hpp"
#include "dbf/config.hpp"
#include "dbf/data.hpp"
#include "dbf/losses.hpp"
#include "dbf/metrics.hpp"
#include "dbf/network.hpp"
#include "dbf/optim.hpp"
#include "dbf/rng.hpp"

namespace dbf {

// ------------------------------------------------------------------ run log

// Line-delimited JSON. Everything written here is a pure function of the
// config, so two deterministic runs produce identical files; wall-clock
// timings go to a separate timing.jsonl.
class RunLog {
public:
  RunLog() = default;
  RunLog(const std::filesystem::path& path, bool append) : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw IoError(path.string(), "cannot open run log");
  }

  void write(const json& record) {
    out_ << record.dump() << "\n";
    out_.flush();
  }

  const std::filesystem::path& path() const noexcept { return path_; }

  static std::vector<json> read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open run log");
    std::vector<json> out;
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) out.push_back(json::parse(line));
    return out;
  }

private:
  std::filesystem::path path_;
  std::ofstream out_;
};

inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ---------------------------------------------------------------- inference

struct Prediction {
  std::string id;
  Grid<float> prob;  // sigmoid of the final logits
  BinaryMask truth;
};

// Eval-mode forward pass, one image at a time.
inline std::vector<Prediction> predict(DbfNet<float>& net, const Dataset& data, const std::vector<std::string>& ids,
                                       int workers = 1) {
  std::vector<std::size_t> idx;
  for (const auto& id : ids) idx.push_back(data.index_of(id));
  net.train(false);
  std::vector<Prediction> out;
  for (const auto& s : data.load_many(idx, workers)) {
    const auto fwd = net.forward(s.image);
    Prediction p{s.id, Grid<float>(s.image.h(), s.image.w()), s.labels.final};
    for (std::size_t i = 0; i < p.prob.size(); ++i) p.prob[i] = nn::sigmoid(fwd.final_logits[i]);
    out.push_back(std::move(p));
  }
  net.train(true);
  return out;
}

inline BinaryMask binarize(const Grid<float>& prob, double threshold = 0.5) {
  BinaryMask m(prob.height(), prob.width());
  for (std::size_t i = 0; i < prob.size(); ++i) m.set(i, prob[i] >= threshold);
  return m;
}

inline std::vector<ImageMetrics> image_metrics(const std::vector<Prediction>& preds, std::optional<Spacing> spacing) {
  std::vector<ImageMetrics> out;
  for (const auto& p : preds) {
    const BinaryMask m = binarize(p.prob);
    out.push_back({p.id, dsc(m, p.truth), hausdorff(m, p.truth, spacing), p.truth.count() == 0});
  }
  return out;
}

// --------------------------------------------------------------- reporting

inline json to_json(const MeanStd& m) {
  return json{{"mean", m.mean}, {"std", m.stddev}, {"count", m.count}, {"excluded", m.excluded}};
}

inline json to_json(const MetricsReport& r) {
  json per = json::array();
  for (const auto& m : r.per_image)
    per.push_back({{"id", m.id}, {"dsc", m.dsc}, {"hd", finite_or_null(m.hd)}, {"empty_target", m.empty_target}});
  auto curve = [](const std::vector<CurvePoint>& c) {
    json a = json::array();
    for (const auto& p : c) a.push_back({p.x, p.y});
    return a;
  };
  return json{{"dataset", r.dataset},   {"label", r.label},       {"fold", r.fold},
              {"hd_units", r.hd_units}, {"dsc", to_json(r.dsc)},  {"hd", to_json(r.hd)},
              {"map", r.map},           {"auc", r.auc},           {"thresholds", r.thresholds},
              {"pr_curve", curve(r.pr_curve)}, {"roc_curve", curve(r.roc_curve)}, {"per_image", per}};
}

inline MetricsReport metrics_report_from_json(const json& j) {
  MetricsReport r;
  try {
    r.dataset = j.at("dataset").get<std::string>();
    r.label = j.value("label", r.dataset);
    r.fold = j.value("fold", 0);
    r.hd_units = j.value("hd_units", "px");
    for (const auto& m : j.at("per_image"))
      r.per_image.push_back(
          {m.at("id").get<std::string>(), m.at("dsc").get<double>(),
           m.at("hd").is_null() ? kInfiniteDistance : m.at("hd").get<double>(), m.value("empty_target", false)});
    aggregate(r);
    r.map = j.at("map").get<double>();
    r.auc = j.at("auc").get<double>();
    r.thresholds = j.at("thresholds").get<std::vector<double>>();
    for (const auto& p : j.at("pr_curve")) r.pr_curve.push_back({p[0].get<double>(), p[1].get<double>()});
    for (const auto& p : j.at("roc_curve")) r.roc_curve.push_back({p[0].get<double>(), p[1].get<double>()});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed metrics report: ") + e.what());
  }
  return r;
}

inline void write_metrics_files(const MetricsReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "metrics.json", to_json(r));
  auto curve_csv = [&](const char* file, const char* xs, const char* ys, const std::vector<CurvePoint>& c) {
    std::ofstream out(dir / file);
    if (!out) throw IoError((dir / file).string(), "cannot write");
    out << "threshold," << xs << "," << ys << "\n";
    for (std::size_t i = 0; i < c.size(); ++i) out << r.thresholds[i] << "," << c[i].x << "," << c[i].y << "\n";
  };
  curve_csv("pr_curve.csv", "recall", "precision", r.pr_curve);
  curve_csv("roc_curve.csv", "fpr", "tpr", r.roc_curve);
  std::ofstream out(dir / "per_image.csv");
  out << "id,dsc,hd,empty_target\n";
  for (const auto& m : r.per_image) out << m.id << "," << m.dsc << "," << m.hd << "," << m.empty_target << "\n";
}

// ------------------------------------------------------------------ training

struct TrainOptions {
  bool resume = false;          // continue from <checkpoint_dir>/last.ckpt when it exists
  int stop_after_epochs = 0;    // > 0: return after this many epochs of this call
  bool quiet = false;
  std::ostream* progress = &std::cerr;
};

struct TrainResult {
  std::filesystem::path out_dir;
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  std::filesystem::path run_log;
  int epochs_completed = 0;
  std::int64_t steps = 0;
  std::int64_t total_steps = 0;
  double best_val_dsc = -1;
  double final_val_dsc = std::nan("");
  double final_val_hd = std::nan("");
  std::vector<double> lambda;
  double seconds = 0;
};

struct FoldIds {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

inline FoldIds split_for(const TrainConfig& cfg, const Dataset& data) {
  const auto ids = data.ids();
  if (ids.empty()) throw ConfigError("dataset '" + cfg.dataset.name + "' has no samples in " + cfg.dataset.image_dir);
  if (cfg.overfit) return {ids, ids};
  try {
    auto s = kfold_split(ids, cfg.dataset.fold_count, cfg.fold, cfg.dataset.seed);
    return {std::move(s.train), std::move(s.val)};
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

namespace detail {

enum : std::uint64_t { kTagInit = 1, kTagOrder = 2, kTagAugment = 3 };

inline Tensor<float> stack_images(const std::vector<Sample>& batch) {
  const Shape s = batch.front().image.shape();
  Tensor<float> x(static_cast<int>(batch.size()), s.c, s.h, s.w);
  for (std::size_t n = 0; n < batch.size(); ++n)
    std::copy(batch[n].image.data(), batch[n].image.data() + batch[n].image.size(), x.sample(static_cast<int>(n)));
  return x;
}

// Keeps the records a checkpoint at (epoch, step) has already accounted for.
inline void truncate_run_log(const std::filesystem::path& path, int epoch, std::int64_t step) {
  if (!std::filesystem::exists(path)) return;
  std::vector<json> kept;
  for (auto& r : RunLog::read(path)) {
    const std::string type = r.value("type", "");
    if (type == "step" && r.at("step").get<std::int64_t>() >= step) continue;
    if (type == "epoch" && r.at("epoch").get<int>() > epoch) continue;
    kept.push_back(std::move(r));
  }
  RunLog log(path, false);
  for (const auto& r : kept) log.write(r);
}

}  // namespace detail

// Adam on total_loss with the poly schedule stepped per iteration. Writes
// config.json, run_log.jsonl, timing.jsonl, last.ckpt (every epoch) and
// best.ckpt (highest validation DSC) under cfg.checkpoint_dir.
inline TrainResult train(const TrainConfig& cfg, const TrainOptions& opts = {}) {
  cfg.validate();
  if (cfg.deterministic) blas::set_threads(1);
  const auto t0 = std::chrono::steady_clock::now();
  auto say = [&](const std::string& s) {
    if (!opts.quiet && opts.progress) *opts.progress << s << std::endl;
  };

  const Dataset data = load_dataset(cfg.dataset);
  for (const auto& w : data.report().warnings) say("warning: " + w);
  const FoldIds split = split_for(cfg, data);
  if (split.train.size() < static_cast<std::size_t>(cfg.batch_size))
    throw ConfigError("dataset too small for batch_size: " + std::to_string(split.train.size()) +
                      " training samples, batch_size " + std::to_string(cfg.batch_size));

  const std::int64_t steps_per_epoch = static_cast<std::int64_t>(split.train.size()) / cfg.batch_size;
  std::int64_t total_steps = steps_per_epoch * cfg.max_epochs;
  if (cfg.max_steps > 0) total_steps = std::min<std::int64_t>(total_steps, cfg.max_steps);
  const int epochs = static_cast<int>((total_steps + steps_per_epoch - 1) / steps_per_epoch);

  const std::filesystem::path dir = cfg.checkpoint_dir;
  std::filesystem::create_directories(dir);
  TrainResult result;
  result.out_dir = dir;
  result.last_checkpoint = dir / "last.ckpt";
  result.best_checkpoint = dir / "best.ckpt";
  result.run_log = dir / "run_log.jsonl";
  result.total_steps = total_steps;

  DbfNet<float> net(cfg.model, derive_seed(cfg.seed, {detail::kTagInit}));
  Adam<float> adam(net.parameters());
  int start_epoch = 0;
  std::int64_t step = 0;
  double best = -1;
  const bool resuming = opts.resume && std::filesystem::exists(result.last_checkpoint);
  if (resuming) {
    const auto ck = read_checkpoint(result.last_checkpoint);
    load_into(ck, net, &adam);
    start_epoch = ck.meta.epoch;
    step = ck.meta.step;
    best = ck.meta.best_val_dsc;
    detail::truncate_run_log(result.run_log, start_epoch, step);
    say("resuming from epoch " + std::to_string(start_epoch) + ", step " + std::to_string(step));
  }
  const json config_json = to_json(cfg);
  write_json_file(dir / "config.json", config_json);
  RunLog log(result.run_log, resuming);
  RunLog timing(dir / "timing.jsonl", resuming);
  if (!resuming)
    log.write({{"type", "run"},
               {"config", config_json},
               {"parameters", net.parameter_count()},
               {"train_ids", split.train},
               {"val_ids", split.val},
               {"steps_per_epoch", steps_per_epoch},
               {"total_steps", total_steps}});

  std::vector<std::size_t> train_idx;
  for (const auto& id : split.train) train_idx.push_back(data.index_of(id));
  // Small datasets are decoded once and kept.
  const double bytes = static_cast<double>(data.size()) * cfg.dataset.target_h * cfg.dataset.target_w * 3 * 4;
  std::vector<std::optional<Sample>> cache(bytes < 512.0 * 1024 * 1024 ? data.size() : 0);
  auto fetch = [&](const std::vector<std::size_t>& idx) {
    if (cache.empty()) return data.load_many(idx, cfg.workers);
    std::vector<std::size_t> missing;
    for (auto i : idx)
      if (!cache[i]) missing.push_back(i);
    auto loaded = data.load_many(missing, cfg.workers);
    for (std::size_t k = 0; k < missing.size(); ++k) cache[missing[k]] = std::move(loaded[k]);
    std::vector<Sample> out;
    for (auto i : idx) out.push_back(*cache[i]);
    return out;
  };

  int epochs_this_call = 0;
  for (int epoch = start_epoch; epoch < epochs && step < total_steps; ++epoch) {
    const auto e0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order = train_idx;
    std::mt19937_64 order_rng(derive_seed(cfg.seed, {detail::kTagOrder, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), order_rng);
    double loss_sum = 0;
    int loss_count = 0;
    for (std::int64_t b = 0; b < steps_per_epoch && step < total_steps; ++b) {
      const std::vector<std::size_t> idx(order.begin() + b * cfg.batch_size, order.begin() + (b + 1) * cfg.batch_size);
      std::vector<Sample> batch = fetch(idx);
      if (cfg.augment)
        for (std::size_t k = 0; k < batch.size(); ++k) {
          std::mt19937_64 rng(derive_seed(cfg.seed, {detail::kTagAugment, static_cast<std::uint64_t>(epoch), idx[k]}));
          batch[k] = augment(batch[k], rng, cfg.augment_options);
        }
      std::vector<std::string> batch_ids;
      std::vector<LabelSet> labels;
      for (const auto& s : batch) {
        batch_ids.push_back(s.id);
        labels.push_back(s.labels);
      }
      const double lr = lr_schedule(step, total_steps, cfg.lr0, cfg.poly_power);
      net.train(true);
      const auto outputs = net.forward(detail::stack_images(batch));
      const auto loss = total_loss(outputs, label_batch<float>(labels), cfg.loss);
      if (!std::isfinite(loss.total)) {
        json dump{{"step", step}, {"epoch", epoch}, {"batch", batch_ids}, {"lr", lr}, {"terms", json::object()}};
        for (const auto& t : loss.terms) dump["terms"][t.name] = finite_or_null(t.value);
        write_json_file(dir / "nan_dump.json", dump);
        std::string ids;
        for (const auto& id : batch_ids) ids += (ids.empty() ? "" : ", ") + id;
        throw TrainingError("non-finite loss at step " + std::to_string(step) + " (batch: " + ids + "); details in " +
                            (dir / "nan_dump.json").string());
      }
      net.zero_grad();
      net.backward(loss.grads);
      adam.step(lr);
      json terms = json::object();
      for (const auto& t : loss.terms) terms[t.name] = t.value;
      log.write({{"type", "step"},
                 {"epoch", epoch + 1},
                 {"step", step},
                 {"lr", lr},
                 {"loss", loss.total},
                 {"terms", terms},
                 {"lambda", net.lambda_values()},
                 {"batch", batch_ids}});
      loss_sum += loss.total;
      ++loss_count;
      ++step;
    }

    const int done = epoch + 1;
    const bool last = done == epochs || step >= total_steps;
    json record{{"type", "epoch"},
                {"epoch", done},
                {"step", step},
                {"train_loss", loss_count ? loss_sum / loss_count : 0.0},
                {"lambda", net.lambda_values()},
                {"val_dsc", nullptr},
                {"val_hd", nullptr}};
    if (done % cfg.eval_every == 0 || last) {
      MetricsReport val;
      val.per_image = image_metrics(predict(net, data, split.val, cfg.workers), cfg.dataset.spacing);
      aggregate(val);
      const MeanStd md = val.dsc, mh = val.hd;
      record["val_dsc"] = md.mean;
      record["val_hd"] = mh.count ? json(mh.mean) : json(nullptr);
      record["val_hd_excluded"] = mh.excluded;
      result.final_val_dsc = md.mean;
      result.final_val_hd = mh.count ? mh.mean : kInfiniteDistance;
      if (md.mean > best) {
        best = md.mean;
        save_checkpoint(result.best_checkpoint, net, &adam, {done, step, cfg.seed, best, config_json});
      }
      say("epoch " + std::to_string(done) + "/" + std::to_string(epochs) + " step " + std::to_string(step) +
          " loss " + std::to_string(record["train_loss"].get<double>()) + " val DSC " + std::to_string(md.mean));
    }
    log.write(record);
    save_checkpoint(result.last_checkpoint, net, &adam, {done, step, cfg.seed, best, config_json});
    timing.write({{"epoch", done},
                  {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count()}});
    result.epochs_completed = done;
    if (opts.stop_after_epochs > 0 && ++epochs_this_call >= opts.stop_after_epochs) break;
  }
  result.steps = step;
  result.best_val_dsc = best;
  result.lambda = net.lambda_values();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

// --------------------------------------------------------------- evaluation

struct EvalOptions {
  std::optional<TrainConfig> config;  // defaults to the config stored in the checkpoint
  std::optional<int> fold;
  std::filesystem::path out_dir;      // empty: nothing written
  std::string label;                  // legend name; defaults to the dataset name
  int thresholds = 101;
};

// Inference on the fold's validation split (every sample in overfit mode),
// binarized at 0.5.
inline MetricsReport evaluate(const std::filesystem::path& checkpoint, const EvalOptions& opts = {}) {
  const CheckpointData ck = read_checkpoint(checkpoint);
  TrainConfig cfg;
  if (opts.config) {
    cfg = *opts.config;
    require_compatible(ck, cfg.model);
  } else if (!ck.meta.train_config.is_null()) {
    cfg = train_config_from_json(ck.meta.train_config);
  } else {
    throw CheckpointError("train_config", "checkpoint carries no dataset settings; pass a config");
  }
  if (opts.fold) cfg.fold = *opts.fold;
  cfg.validate();
  DbfNet<float> net = model_from_checkpoint(ck);
  const Dataset data = load_dataset(cfg.dataset);
  const FoldIds split = split_for(cfg, data);
  const auto preds = predict(net, data, split.val, cfg.workers);

  MetricsReport r;
  r.dataset = cfg.dataset.name;
  r.label = opts.label.empty() ? cfg.dataset.name : opts.label;
  r.fold = cfg.fold;
  r.hd_units = cfg.dataset.spacing ? "mm" : "px";
  r.per_image = image_metrics(preds, cfg.dataset.spacing);
  aggregate(r);
  std::vector<Grid<float>> probs;
  std::vector<BinaryMask> truths;
  for (const auto& p : preds) {
    probs.push_back(p.prob);
    truths.push_back(p.truth);
  }
  const PrRoc curves = pr_roc(probs, truths, ThresholdSweep::uniform(opts.thresholds));
  r.thresholds = curves.thresholds;
  r.pr_curve = curves.pr;
  r.roc_curve = curves.roc;
  r.map = curves.map;
  r.auc = curves.auc;
  if (!opts.out_dir.empty()) write_metrics_files(r, opts.out_dir);
  return r;
}

// ----------------------------------------------------------------- ablation

struct AblationCell {
  std::string name;
  int ffs_count = 2;
  bool use_ffm = true;
  bool enable_body = true;
  bool enable_bound = true;
};

inline std::vector<AblationCell> ablation_grid(const std::string& name) {
  if (name == "ffs")
    return {{"baseline", 0, false, true, true},
            {"ffs1", 1, false, true, true},
            {"ffs2", 2, false, true, true},
            {"ffs1+ff", 1, true, true, true},
            {"ffs2+ff", 2, true, true, true}};
  if (name == "supervision")
    return {{"seg", 2, true, false, false},
            {"seg+body", 2, true, true, false},
            {"seg+bound", 2, true, false, true},
            {"seg+body+bound", 2, true, true, true}};
  if (name == "ffm") return {{"w/ FFM", 2, true, true, true}, {"w/o FFM", 2, false, true, true}};
  throw ParameterError("unknown ablation grid '" + name + "' (expected ffs, supervision or ffm)");
}

// Cartesian product over the axes present in `axes`; absent axes keep the
// base config's value. Allowed axes: ffs_count, use_ffm, enable_body, enable_bound.
inline std::vector<AblationCell> ablation_grid(const json& axes, const TrainConfig& base) {
  if (!axes.is_object() || axes.empty()) throw ParameterError("ablation grid must be a non-empty object of axes");
  std::vector<int> counts{base.model.ffs.count};
  std::vector<bool> ffm{base.model.ffs.use_ffm}, body{base.loss.enable_body}, bound{base.loss.enable_bound};
  for (const auto& [k, v] : axes.items()) {
    if (!v.is_array() || v.empty()) throw ParameterError("ablation axis '" + k + "' must be a non-empty list");
    try {
      if (k == "ffs_count") {
        counts = v.get<std::vector<int>>();
        for (int c : counts)
          if (c < 0 || c > 2) throw ParameterError("ffs_count values must be 0, 1 or 2");
      } else if (k == "use_ffm") {
        ffm = v.get<std::vector<bool>>();
      } else if (k == "enable_body") {
        body = v.get<std::vector<bool>>();
      } else if (k == "enable_bound") {
        bound = v.get<std::vector<bool>>();
      } else {
        throw ParameterError("invalid ablation axis '" + k + "'");
      }
    } catch (const json::exception& e) {
      throw ParameterError("ablation axis '" + k + "': " + e.what());
    }
  }
  std::vector<AblationCell> cells;
  std::set<std::string> seen;
  for (int c : counts)
    for (bool f : ffm)
      for (bool b : body)
        for (bool d : bound) {
          f = f && c > 0;  // no FFS blocks, nothing for the FFM to fuse
          std::ostringstream name;
          name << "ffs" << c << (f ? "+ff" : "") << (b ? "+body" : "") << (d ? "+bound" : "");
          if (seen.insert(name.str()).second) cells.push_back({name.str(), c, f, b, d});
        }
  return cells;
}

struct AblationRun {
  std::uint64_t seed = 0;
  int fold = 0;
  double dsc = 0;
  double hd = 0;
  std::vector<double> lambda;  // FFS-1 first
};

struct AblationRow {
  AblationCell cell;
  std::vector<AblationRun> runs;
  MeanStd dsc;
  MeanStd hd;
};

struct AblationResult {
  std::string grid;
  std::vector<AblationRow> rows;
};

struct AblateOptions {
  std::string grid_name = "custom";
  std::vector<std::uint64_t> seeds;  // empty: the base seed
  std::vector<int> folds;            // empty: the base fold
  bool quiet = true;
  std::ostream* progress = &std::cerr;
};

inline TrainConfig cell_config(const TrainConfig& base, const AblationCell& cell) {
  TrainConfig c = base;
  c.model.ffs.count = cell.ffs_count;
  c.model.ffs.use_ffm = cell.use_ffm;
  c.loss.enable_body = cell.enable_body;
  c.loss.enable_bound = cell.enable_bound;
  return c;
}

inline std::string sanitize(const std::string& s) {
  std::string out;
  for (char ch : s) out += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '+' || ch == '-') ? ch : '_';
  return out;
}

inline json to_json(const AblationResult& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json runs = json::array();
    for (const auto& run : row.runs)
      runs.push_back(
          {{"seed", run.seed}, {"fold", run.fold}, {"dsc", run.dsc}, {"hd", finite_or_null(run.hd)}, {"lambda", run.lambda}});
    rows.push_back({{"name", row.cell.name},
                    {"ffs_count", row.cell.ffs_count},
                    {"use_ffm", row.cell.use_ffm},
                    {"enable_body", row.cell.enable_body},
                    {"enable_bound", row.cell.enable_bound},
                    {"dsc", to_json(row.dsc)},
                    {"hd", to_json(row.hd)},
                    {"runs", runs}});
  }
  return json{{"grid", r.grid}, {"rows", rows}};
}

inline std::string format_mean_std(const MeanStd& m) {
  if (m.count == 0) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", m.mean, m.stddev);
  return buf;
}

// Markdown tables: the results in the row layout of the chosen grid, then the
// per-run lambda values.
inline std::string ablation_markdown(const AblationResult& r) {
  std::ostringstream os;
  auto mark = [](bool b) { return b ? "✓" : " "; };
  if (r.grid == "ffs") {
    os << "| Setting | FFS 1 | FFS 2 | Feature fusion | DSC (%) | HD |\n|---|---|---|---|---|---|\n";
    for (const auto& row : r.rows)
      os << "| " << (row.cell.ffs_count == 0 ? "Baseline" : "+FFS") << " | " << mark(row.cell.ffs_count == 1) << " | "
         << mark(row.cell.ffs_count == 2) << " | " << mark(row.cell.ffs_count > 0 && row.cell.use_ffm) << " | "
         << format_mean_std(row.dsc) << " | " << format_mean_std(row.hd) << " |\n";
  } else {
    os << "| Cell | FFS | FFM | L_seg | L_body | L_bound | DSC (%) | HD |\n|---|---|---|---|---|---|---|---|\n";
    for (const auto& row : r.rows)
      os << "| " << row.cell.name << " | " << row.cell.ffs_count << " | " << mark(row.cell.use_ffm) << " | ✓ | "
         << mark(row.cell.enable_body) << " | " << mark(row.cell.enable_bound) << " | " << format_mean_std(row.dsc)
         << " | " << format_mean_std(row.hd) << " |\n";
  }
  os << "\n| Cell | Fold | Seed | λ in FFS-1 | λ in FFS-2 |\n|---|---|---|---|---|\n";
  for (const auto& row : r.rows)
    for (const auto& run : row.runs) {
      if (run.lambda.empty()) continue;
      char l1[32] = "-", l2[32] = "-";
      if (run.lambda.size() == 2) {
        std::snprintf(l1, sizeof l1, "%.4f", run.lambda[0]);
        std::snprintf(l2, sizeof l2, "%.4f", run.lambda[1]);
      } else {
        std::snprintf(l2, sizeof l2, "%.4f", run.lambda[0]);
      }
      os << "| " << row.cell.name << " | " << run.fold << " | " << run.seed << " | " << l1 << " | " << l2 << " |\n";
    }
  return os.str();
}

// Trains and evaluates every cell for every (seed, fold) with shared data,
// writing each run under out_dir/<cell>/seed<S>_fold<F>.
inline AblationResult ablate(const TrainConfig& base, const std::vector<AblationCell>& cells,
                             const std::filesystem::path& out_dir, const AblateOptions& opts = {}) {
  if (cells.empty()) throw ParameterError("empty ablation grid");
  const auto seeds = opts.seeds.empty() ? std::vector<std::uint64_t>{base.seed} : opts.seeds;
  const auto folds = opts.folds.empty() ? std::vector<int>{base.fold} : opts.folds;
  AblationResult result;
  result.grid = opts.grid_name;
  for (const auto& cell : cells) {
    AblationRow row;
    row.cell = cell;
    std::vector<double> d, h;
    for (int fold : folds)
      for (auto seed : seeds) {
        TrainConfig c = cell_config(base, cell);
        c.seed = seed;
        c.fold = fold;
        c.checkpoint_dir =
            (out_dir / sanitize(cell.name) / ("seed" + std::to_string(seed) + "_fold" + std::to_string(fold))).string();
        if (!opts.quiet && opts.progress)
          *opts.progress << "ablate: " << cell.name << " seed " << seed << " fold " << fold << std::endl;
        TrainOptions to;
        to.quiet = opts.quiet;
        to.progress = opts.progress;
        const TrainResult tr = train(c, to);
        EvalOptions eo;
        eo.config = c;
        eo.out_dir = std::filesystem::path(c.checkpoint_dir) / "eval";
        eo.label = cell.name;
        const MetricsReport rep = evaluate(tr.best_checkpoint, eo);
        const double hd = rep.hd.count ? rep.hd.mean : kInfiniteDistance;
        row.runs.push_back({seed, fold, rep.dsc.mean, hd, tr.lambda});
        d.push_back(rep.dsc.mean);
        h.push_back(hd);
      }
    row.dsc = mean_std(d);
    row.hd = mean_std(h);
    result.rows.push_back(std::move(row));
  }
  std::filesystem::create_directories(out_dir);
  write_json_file(out_dir / "ablation.json", to_json(result));
  std::ofstream md(out_dir / "ablation.md");
  md << ablation_markdown(result);
  return result;
}

}  // namespace dbf
