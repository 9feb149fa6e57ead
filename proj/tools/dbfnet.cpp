#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dbf/dbf.hpp"

namespace fs = std::filesystem;
using namespace dbf;

namespace {

struct Common {
  std::string config;
  std::string preset;
  int fold = 0;
  std::uint64_t seed = 0;
  bool deterministic = false;
  std::string out;
  bool quiet = false;
  CLI::Option* fold_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--preset", c.preset, "busi, uns, uhes or synthetic");
  c.fold_opt = app->add_option("--fold", c.fold, "cross-validation fold (0-based)");
  c.seed_opt = app->add_option("--seed", c.seed, "run seed");
  app->add_flag("--deterministic", c.deterministic, "single-threaded BLAS, bit-reproducible runs");
  app->add_option("--out", c.out, "output directory");
  app->add_flag("-q,--quiet", c.quiet, "no progress output");
}

// Preset, then config file, then flags.
TrainConfig resolve(const Common& c) {
  if (c.config.empty() && c.preset.empty()) throw ConfigError("pass --config PATH or --preset NAME");
  TrainConfig cfg = c.preset.empty() ? TrainConfig{} : preset_config(c.preset);
  if (!c.config.empty()) cfg = train_config_from_json(read_json_file(c.config), cfg);
  if (c.fold_opt->count()) cfg.fold = c.fold;
  if (c.seed_opt->count()) cfg.seed = c.seed;
  if (c.deterministic) cfg.deterministic = true;
  if (!c.out.empty()) cfg.checkpoint_dir = c.out;
  cfg.validate();
  return cfg;
}

// The synthetic preset generates its 8 images on first use.
void ensure_synthetic(const TrainConfig& cfg, bool quiet) {
  if (cfg.dataset.name != "synthetic" || fs::exists(cfg.dataset.image_dir)) return;
  const fs::path root = fs::path(cfg.dataset.image_dir).parent_path();
  if (fs::path(cfg.dataset.mask_dir).parent_path() != root) return;
  synth_generate(root, 8, cfg.dataset.target_h, cfg.dataset.target_w, cfg.dataset.seed);
  if (!quiet) std::cerr << "generated 8 synthetic images in " << root.string() << "\n";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void print_report(const MetricsReport& r) {
  std::cout << "dataset " << r.dataset << " fold " << r.fold << " images " << r.per_image.size() << "\n"
            << "DSC (%)  " << format_mean_std(r.dsc) << "\n"
            << "HD (" << r.hd_units << ")  " << format_mean_std(r.hd);
  if (r.hd.excluded) std::cout << "  (" << r.hd.excluded << " infinite excluded)";
  std::cout << "\nMAP " << r.map << "\nAUC " << r.auc << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Body/boundary fusion segmentation network: training, evaluation and ablation"};
  app.require_subcommand(1);

  Common train_c;
  bool resume = false;
  int max_steps = -1;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, train_c);
  train_cmd->add_flag("--resume", resume, "continue from <out>/last.ckpt");
  train_cmd->add_option("--max-steps", max_steps, "cap on optimizer steps");

  Common eval_c;
  std::string checkpoint, label;
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a fold's validation split");
  add_common(eval_cmd, eval_c);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--label", label, "name used in plot legends");

  Common abl_c;
  std::string grid = "ffs", seeds_s, folds_s;
  auto* abl_cmd = app.add_subcommand("ablate", "train and evaluate an ablation grid");
  add_common(abl_cmd, abl_c);
  abl_cmd->add_option("--grid", grid, "ffs, supervision, ffm or a JSON file of axes");
  abl_cmd->add_option("--seeds", seeds_s, "comma-separated seeds");
  abl_cmd->add_option("--folds", folds_s, "comma-separated folds");
  abl_cmd->add_option("--max-steps", max_steps, "cap on optimizer steps per run");

  std::vector<std::string> metrics_files;
  std::string run_log, plot_out = "plots";
  auto* plot_cmd = app.add_subcommand("plot", "PR/ROC curves and loss curve as PNG");
  plot_cmd->add_option("--metrics", metrics_files, "metrics.json files")->check(CLI::ExistingFile);
  plot_cmd->add_option("--run-log", run_log, "run_log.jsonl")->check(CLI::ExistingFile);
  plot_cmd->add_option("--out", plot_out, "output directory");

  std::string synth_out = "data/synthetic";
  int synth_n = 8, synth_h = 128, synth_w = 128;
  std::uint64_t synth_seed = 7;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic ultrasound-like dataset");
  synth_cmd->add_option("--out", synth_out, "output directory (images/ and masks/ inside)");
  synth_cmd->add_option("--count", synth_n, "number of images");
  synth_cmd->add_option("--height", synth_h, "image height");
  synth_cmd->add_option("--width", synth_w, "image width");
  synth_cmd->add_option("--seed", synth_seed, "generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      TrainConfig cfg = resolve(train_c);
      if (max_steps >= 0) cfg.max_steps = max_steps;
      ensure_synthetic(cfg, train_c.quiet);
      TrainOptions opts;
      opts.resume = resume;
      opts.quiet = train_c.quiet;
      const TrainResult r = train(cfg, opts);
      std::cout << "steps " << r.steps << "/" << r.total_steps << " epochs " << r.epochs_completed << "\n"
                << "best val DSC " << r.best_val_dsc << "\n"
                << "checkpoints " << r.last_checkpoint.string() << ", " << r.best_checkpoint.string() << "\n"
                << "run log " << r.run_log.string() << "\n";
    } else if (*eval_cmd) {
      EvalOptions opts;
      if (!eval_c.config.empty() || !eval_c.preset.empty()) {
        Common c = eval_c;
        c.out.clear();
        opts.config = resolve(c);
        ensure_synthetic(*opts.config, eval_c.quiet);
      }
      if (eval_c.fold_opt->count()) opts.fold = eval_c.fold;
      opts.out_dir = eval_c.out.empty() ? fs::path(checkpoint).parent_path() / "eval" : fs::path(eval_c.out);
      opts.label = label;
      const MetricsReport r = evaluate(checkpoint, opts);
      print_report(r);
      std::cout << "report " << (opts.out_dir / "metrics.json").string() << "\n";
    } else if (*abl_cmd) {
      TrainConfig base = resolve(abl_c);
      if (max_steps >= 0) base.max_steps = max_steps;
      ensure_synthetic(base, abl_c.quiet);
      std::vector<AblationCell> cells;
      AblateOptions opts;
      if (fs::exists(grid) && fs::is_regular_file(grid)) {
        cells = ablation_grid(read_json_file(grid), base);
        opts.grid_name = fs::path(grid).stem().string();
      } else {
        cells = ablation_grid(grid);
        opts.grid_name = grid;
      }
      try {
        for (const auto& s : split_list(seeds_s)) opts.seeds.push_back(std::stoull(s));
        for (const auto& f : split_list(folds_s)) opts.folds.push_back(std::stoi(f));
      } catch (const std::exception&) {
        throw ParameterError("--seeds and --folds take comma-separated integers");
      }
      if (opts.folds.empty() && grid == "ffm" && !base.overfit)
        for (int f = 0; f < base.dataset.fold_count; ++f) opts.folds.push_back(f);
      opts.quiet = abl_c.quiet;
      const fs::path out = abl_c.out.empty() ? fs::path(base.checkpoint_dir) / ("ablate_" + opts.grid_name) : fs::path(abl_c.out);
      const AblationResult r = ablate(base, cells, out, opts);
      std::cout << ablation_markdown(r) << "\nresults in " << out.string() << "\n";
    } else if (*plot_cmd) {
      std::vector<MetricsReport> reports;
      for (const auto& f : metrics_files) reports.push_back(metrics_report_from_json(read_json_file(f)));
      std::vector<json> log;
      if (!run_log.empty()) log = RunLog::read(run_log);
      for (const auto& p : emit_plots(reports, plot_out, log)) std::cout << p.string() << "\n";
    } else if (*synth_cmd) {
      const auto ids = synth_generate(synth_out, synth_n, synth_h, synth_w, synth_seed);
      std::cout << ids.size() << " images written to " << synth_out << "\n";
    }
  } catch (const dbf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
