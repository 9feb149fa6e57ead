#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "dbf/trainer.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace dbf;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class Trainer : public ::testing::Test {
protected:
  static void SetUpTestSuite() {
    data_ = new oracle::TempDir("dbf_trainer_data");
    synth_generate(data_->path(), 6, 32, 32, 3);
  }
  static void TearDownTestSuite() {
    delete data_;
    data_ = nullptr;
  }

  TrainConfig tiny(const std::string& run) const {
    TrainConfig c;
    c.dataset.name = "synthetic";
    c.dataset.image_dir = (data_->path() / "images").string();
    c.dataset.mask_dir = (data_->path() / "masks").string();
    c.dataset.target_h = c.dataset.target_w = 32;
    c.dataset.fold_count = 3;
    c.model = oracle::toy_model_config(4);
    c.batch_size = 2;
    c.max_epochs = 3;
    c.seed = 1;
    c.deterministic = true;
    c.checkpoint_dir = (runs_.path() / run).string();
    return c;
  }

  static std::vector<json> records(const TrainResult& r, const std::string& type) {
    std::vector<json> out;
    for (auto& j : RunLog::read(r.run_log))
      if (j["type"] == type) out.push_back(j);
    return out;
  }

  static oracle::TempDir* data_;
  oracle::TempDir runs_{"dbf_trainer_runs"};
  TrainOptions quiet_{false, 0, true, nullptr};
};

oracle::TempDir* Trainer::data_ = nullptr;

}  // namespace

TEST_F(Trainer, DeterministicRunLogsIdentical) {
  const auto a = train(tiny("a"), quiet_);
  TrainConfig cb = tiny("b");
  const auto b = train(cb, quiet_);
  std::string la = slurp(a.run_log), lb = slurp(b.run_log);
  // only the output directory differs between the two configs
  const std::string da = tiny("a").checkpoint_dir, db = cb.checkpoint_dir;
  for (auto p = lb.find(db); p != std::string::npos; p = lb.find(db)) lb.replace(p, db.size(), da);
  EXPECT_EQ(la, lb);
  EXPECT_EQ(a.steps, 6);
  EXPECT_TRUE(std::filesystem::exists(a.best_checkpoint));
  EXPECT_TRUE(std::filesystem::exists(a.out_dir / "timing.jsonl"));
}

TEST_F(Trainer, LogFollowsScheduleAndStepsIncrease) {
  TrainConfig c = tiny("s");
  c.max_epochs = 4;
  const auto r = train(c, quiet_);
  const auto steps = records(r, "step");
  ASSERT_EQ(steps.size(), 8u);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    EXPECT_EQ(steps[i]["step"].get<std::int64_t>(), static_cast<std::int64_t>(i));
    EXPECT_EQ(steps[i]["lr"].get<double>(), lr_schedule(static_cast<std::int64_t>(i), 8, c.lr0, c.poly_power));
    EXPECT_EQ(steps[i]["batch"].size(), 2u);
    EXPECT_TRUE(steps[i]["terms"].contains("seg"));
    EXPECT_TRUE(steps[i]["terms"].contains("bound_ffs2"));
    EXPECT_EQ(steps[i]["lambda"].size(), 2u);
  }
  const auto epochs = records(r, "epoch");
  ASSERT_EQ(epochs.size(), 4u);
  for (const auto& e : epochs) {
    EXPECT_EQ(e["lambda"].size(), 2u);
    EXPECT_TRUE(e["val_dsc"].is_number());
  }
}

TEST_F(Trainer, MaxStepsCapsSchedule) {
  TrainConfig c = tiny("cap");
  c.max_steps = 3;
  const auto r = train(c, quiet_);
  EXPECT_EQ(r.total_steps, 3);
  EXPECT_EQ(r.steps, 3);
  EXPECT_EQ(r.epochs_completed, 2);
  EXPECT_EQ(records(r, "step").back()["lr"].get<double>(), lr_schedule(2, 3, c.lr0, c.poly_power));
}

TEST_F(Trainer, ResumeMatchesUninterruptedRun) {
  const auto full = train(tiny("full"), quiet_);
  TrainOptions first = quiet_;
  first.stop_after_epochs = 1;
  const auto part = train(tiny("part"), first);
  EXPECT_EQ(part.epochs_completed, 1);
  TrainOptions resume = quiet_;
  resume.resume = true;
  const auto rest = train(tiny("part"), resume);
  EXPECT_EQ(rest.steps, full.steps);

  auto strip = [](std::vector<json> v) {
    for (auto& j : v) j.erase("config");
    return v;
  };
  EXPECT_EQ(strip(records(full, "step")), strip(records(rest, "step")));
  EXPECT_EQ(strip(records(full, "epoch")), strip(records(rest, "epoch")));
  const auto a = read_checkpoint(full.last_checkpoint), b = read_checkpoint(rest.last_checkpoint);
  ASSERT_EQ(a.tensors.size(), b.tensors.size());
  for (const auto& [k, t] : a.tensors) EXPECT_EQ(t.data, b.tensors.at(k).data) << k;
}

TEST_F(Trainer, ResumeDropsRecordsPastCheckpoint) {
  TrainOptions one = quiet_;
  one.stop_after_epochs = 1;
  const auto part = train(tiny("trunc"), one);
  const auto saved = part.out_dir / "epoch1.ckpt";
  std::filesystem::copy_file(part.last_checkpoint, saved);
  one.resume = true;
  train(tiny("trunc"), one);
  // crash after epoch 2 was logged but before its checkpoint landed
  std::filesystem::copy_file(saved, part.last_checkpoint, std::filesystem::copy_options::overwrite_existing);
  TrainOptions resume = quiet_;
  resume.resume = true;
  const auto rest = train(tiny("trunc"), resume);
  const auto steps = records(rest, "step");
  ASSERT_EQ(steps.size(), 6u);
  for (std::size_t i = 0; i < steps.size(); ++i) EXPECT_EQ(steps[i]["step"].get<std::size_t>(), i);
  const auto epochs = records(rest, "epoch");
  ASSERT_EQ(epochs.size(), 3u);
  for (std::size_t i = 0; i < epochs.size(); ++i) EXPECT_EQ(epochs[i]["epoch"].get<std::size_t>(), i + 1);
  const auto full = train(tiny("trunc_ref"), quiet_);
  const auto a = read_checkpoint(full.last_checkpoint), b = read_checkpoint(rest.last_checkpoint);
  for (const auto& [k, t] : a.tensors) EXPECT_EQ(t.data, b.tensors.at(k).data) << k;
}

TEST_F(Trainer, LambdaMovesWithAndWithoutFfm) {
  for (bool ffm : {true, false}) {
    TrainConfig c = tiny(ffm ? "ffm" : "noffm");
    c.model.ffs.use_ffm = ffm;
    const auto r = train(c, quiet_);
    ASSERT_EQ(r.lambda.size(), 2u);
    for (double l : r.lambda) EXPECT_NE(l, c.model.ffs.lambda_init);
    for (const auto& e : records(r, "epoch")) EXPECT_EQ(e["lambda"].size(), 2u);
  }
}

TEST_F(Trainer, DatasetTooSmallForBatch) {
  TrainConfig c = tiny("small");
  c.batch_size = 5;  // 4 training samples in a 3-fold split of 6
  EXPECT_THROW(train(c, quiet_), ConfigError);
  c.overfit = true;
  c.batch_size = 7;
  EXPECT_THROW(train(c, quiet_), ConfigError);
}

TEST_F(Trainer, NonFiniteLossAbortsWithBatchIds) {
  TrainConfig c = tiny("nan");
  c.lr0 = 1e30;
  c.augment = false;
  try {
    train(c, quiet_);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("synth_"), std::string::npos) << e.what();
  }
  const json dump = read_json_file(std::filesystem::path(c.checkpoint_dir) / "nan_dump.json");
  EXPECT_EQ(dump["batch"].size(), 2u);
}

TEST_F(Trainer, EvaluateUntrainedModelWellFormed) {
  TrainConfig c = tiny("untrained");
  DbfNet<float> net(c.model, 5);
  save_checkpoint(runs_ / "untrained.ckpt", net, nullptr, {0, 0, 5, -1, to_json(c)});
  EvalOptions opts;
  opts.out_dir = runs_ / "untrained_eval";
  const MetricsReport r = evaluate(runs_ / "untrained.ckpt", opts);
  EXPECT_EQ(r.per_image.size(), 2u);
  EXPECT_TRUE(std::isfinite(r.dsc.mean));
  EXPECT_EQ(r.hd.count + r.hd.excluded, 2u);
  EXPECT_EQ(r.pr_curve.size(), 101u);
  EXPECT_GE(r.auc, 0.0);
  EXPECT_LE(r.auc, 1.0);
  for (const char* f : {"metrics.json", "pr_curve.csv", "roc_curve.csv", "per_image.csv"})
    EXPECT_TRUE(std::filesystem::exists(opts.out_dir / f)) << f;
  const MetricsReport back = metrics_report_from_json(read_json_file(opts.out_dir / "metrics.json"));
  EXPECT_EQ(to_json(back), to_json(r));
}

TEST_F(Trainer, EvaluateRejectsIncompatibleConfig) {
  const auto r = train(tiny("ev"), quiet_);
  TrainConfig other = tiny("ev");
  other.model.ffs.use_ffm = false;
  EvalOptions opts;
  opts.config = other;
  try {
    evaluate(r.best_checkpoint, opts);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.field(), "model.ffs.use_ffm");
  }
}

TEST_F(Trainer, EvaluateUsesFoldValidationSplit) {
  const auto r = train(tiny("fold"), quiet_);
  for (int f = 0; f < 3; ++f) {
    EvalOptions opts;
    opts.fold = f;
    const auto rep = evaluate(r.best_checkpoint, opts);
    EXPECT_EQ(rep.fold, f);
    const Dataset d = load_dataset(tiny("fold").dataset);
    const auto split = kfold_split(d.ids(), 3, f, 0);
    ASSERT_EQ(rep.per_image.size(), split.val.size());
    for (std::size_t i = 0; i < split.val.size(); ++i) EXPECT_EQ(rep.per_image[i].id, split.val[i]);
  }
}

TEST(AblationGrid, BuiltInRowStructures) {
  EXPECT_EQ(ablation_grid("ffs").size(), 5u);
  EXPECT_EQ(ablation_grid("supervision").size(), 4u);
  EXPECT_EQ(ablation_grid("ffm").size(), 2u);
  const auto t5 = ablation_grid("ffs");
  EXPECT_EQ(t5[0].ffs_count, 0);
  EXPECT_FALSE(t5[2].use_ffm);
  EXPECT_TRUE(t5[4].use_ffm);
  const auto t6 = ablation_grid("supervision");
  EXPECT_FALSE(t6[0].enable_body || t6[0].enable_bound);
  EXPECT_TRUE(t6[3].enable_body && t6[3].enable_bound);
  EXPECT_THROW(ablation_grid("nonexistent"), ParameterError);
}

TEST(AblationGrid, CustomAxes) {
  const TrainConfig base;
  const auto cells = ablation_grid(json::parse(R"({"ffs_count": [0, 1, 2], "use_ffm": [true, false]})"), base);
  // with no FFS blocks the FFM axis collapses
  ASSERT_EQ(cells.size(), 5u);
  EXPECT_EQ(cells[0].ffs_count, 0);
  EXPECT_FALSE(cells[0].use_ffm);
  EXPECT_EQ(cells[1].name, "ffs1+ff+body+bound");
  EXPECT_THROW(ablation_grid(json::parse(R"({"dropout": [0.1]})"), base), ParameterError);
  EXPECT_THROW(ablation_grid(json::parse(R"({"ffs_count": [3]})"), base), ParameterError);
  EXPECT_THROW(ablation_grid(json::parse(R"({"ffs_count": []})"), base), ParameterError);
  EXPECT_THROW(ablation_grid(json::object(), base), ParameterError);
}

TEST_F(Trainer, SingleCellAblationEqualsTrainEvaluate) {
  TrainConfig base = tiny("abl_base");
  const AblationCell cell{"full", 2, true, true, true};
  AblateOptions opts;
  opts.grid_name = "single";
  const auto ab = ablate(base, {cell}, runs_ / "abl", opts);
  ASSERT_EQ(ab.rows.size(), 1u);

  const auto tr = train(tiny("plain"), quiet_);
  EvalOptions eo;
  eo.config = tiny("plain");
  const auto rep = evaluate(tr.best_checkpoint, eo);
  EXPECT_EQ(ab.rows[0].dsc.mean, rep.dsc.mean);
  EXPECT_EQ(ab.rows[0].runs[0].lambda, tr.lambda);
  EXPECT_TRUE(std::filesystem::exists(runs_ / "abl" / "ablation.json"));
  EXPECT_TRUE(std::filesystem::exists(runs_ / "abl" / "ablation.md"));
}

TEST_F(Trainer, FfsGridRuns) {
  TrainConfig base = tiny("t5");
  base.max_epochs = 1;
  AblateOptions opts;
  opts.grid_name = "ffs";
  const auto ab = ablate(base, ablation_grid("ffs"), runs_ / "t5", opts);
  ASSERT_EQ(ab.rows.size(), 5u);
  EXPECT_TRUE(ab.rows[0].runs[0].lambda.empty());
  EXPECT_EQ(ab.rows[1].runs[0].lambda.size(), 1u);
  EXPECT_EQ(ab.rows[2].runs[0].lambda.size(), 2u);
  const std::string md = ablation_markdown(ab);
  EXPECT_NE(md.find("Baseline"), std::string::npos);
  EXPECT_NE(md.find("λ in FFS-1"), std::string::npos);
}
