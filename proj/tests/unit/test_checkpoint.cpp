#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "dbf/checkpoint.hpp"
#include "dbf/losses.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace dbf;

namespace {

// A few Adam steps so that weights, BN statistics and moments are all non-trivial.
void warm_up(DbfNet<float>& net, Adam<float>& adam, const Tensor<float>& x) {
  std::mt19937_64 rng(3);
  std::vector<LabelSet> labels;
  for (int n = 0; n < x.n(); ++n) labels.push_back(split_labels(oracle::random_blob_mask(rng, x.h(), x.w()), 1.0));
  for (int s = 0; s < 3; ++s) {
    net.train(true);
    const auto out = net.forward(x);
    const auto loss = total_loss(out, label_batch<float>(labels), LossWeights{});
    net.zero_grad();
    net.backward(loss.grads);
    adam.step(0.01);
  }
}

Tensor<float> input(int n = 2, int size = 32) {
  std::mt19937_64 rng(1);
  Tensor<float> x(n, 3, size, size);
  oracle::fill_uniform(x, rng, 0, 1);
  return x;
}

}  // namespace

TEST(Checkpoint, RoundTripForwardExact) {
  oracle::TempDir t;
  const ModelConfig cfg = oracle::toy_model_config(4);
  DbfNet<float> net(cfg, 11);
  Adam<float> adam(net.parameters());
  const Tensor<float> x = input();
  warm_up(net, adam, x);
  net.train(false);
  const auto before = net.forward(x);
  save_checkpoint(t / "a.ckpt", net, &adam, {3, 42, 11, 77.5, json{{"k", 1}}});

  const auto d = read_checkpoint(t / "a.ckpt");
  EXPECT_EQ(d.meta.epoch, 3);
  EXPECT_EQ(d.meta.step, 42);
  EXPECT_EQ(d.meta.best_val_dsc, 77.5);
  EXPECT_EQ(d.meta.train_config["k"], 1);
  DbfNet<float> restored = model_from_checkpoint(d);
  restored.train(false);
  const auto after = restored.forward(x);
  ASSERT_EQ(before.final_logits.size(), after.final_logits.size());
  for (std::size_t i = 0; i < after.final_logits.size(); ++i) ASSERT_EQ(before.final_logits[i], after.final_logits[i]);
  EXPECT_EQ(before.lambda_values, after.lambda_values);
}

TEST(Checkpoint, OptimizerStateRestored) {
  oracle::TempDir t;
  const ModelConfig cfg = oracle::toy_model_config(4);
  DbfNet<float> net(cfg, 2);
  Adam<float> adam(net.parameters());
  warm_up(net, adam, input());
  save_checkpoint(t / "a.ckpt", net, &adam, {});

  DbfNet<float> other(cfg, 99);
  Adam<float> adam2(other.parameters());
  load_into(read_checkpoint(t / "a.ckpt"), other, &adam2);
  EXPECT_EQ(adam2.steps(), adam.steps());
  for (std::size_t i = 0; i < adam.first_moments().size(); ++i) {
    const auto& a = adam.first_moments()[i].values();
    const auto& b = adam2.first_moments()[i].values();
    ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    const auto& va = adam.second_moments()[i].values();
    const auto& vb = adam2.second_moments()[i].values();
    ASSERT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
  }
}

TEST(Checkpoint, SelfDescribingHeader) {
  oracle::TempDir t;
  DbfNet<float> net(oracle::toy_model_config(4), 1);
  save_checkpoint(t / "a.ckpt", net, nullptr, {});
  std::ifstream in(t / "a.ckpt", std::ios::binary);
  std::string magic, len;
  std::getline(in, magic);
  std::getline(in, len);
  EXPECT_EQ(magic, "DBFNET-CHECKPOINT");
  std::string text(std::stoul(len), '\0');
  in.read(text.data(), static_cast<std::streamsize>(text.size()));
  const json h = json::parse(text);
  EXPECT_EQ(h["dtype"], "float32");
  EXPECT_EQ(h["byte_order"], "little");
  EXPECT_TRUE(h["optimizer"].is_null());
  std::uint64_t total = 0;
  for (const auto& e : h["tensors"]) {
    EXPECT_EQ(e["offset"].get<std::uint64_t>(), total);
    total += e["count"].get<std::uint64_t>() * 4;
  }
  EXPECT_EQ(h["payload_bytes"].get<std::uint64_t>(), total);
  EXPECT_EQ(std::filesystem::file_size(t / "a.ckpt"), magic.size() + len.size() + text.size() + 3 + total);
}

TEST(Checkpoint, MismatchNamesField) {
  oracle::TempDir t;
  ModelConfig cfg = oracle::toy_model_config(4);
  DbfNet<float> net(cfg, 1);
  save_checkpoint(t / "a.ckpt", net, nullptr, {});
  const auto d = read_checkpoint(t / "a.ckpt");

  ModelConfig other = cfg;
  other.ffs.count = 1;
  try {
    require_compatible(d, other);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.field(), "model.ffs.count");
  }
  other = cfg;
  other.aspp_out_channels = 6;
  try {
    DbfNet<float> wrong(other, 1);
    load_into(d, wrong);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.field(), "model.aspp_out_channels");
  }
  EXPECT_NO_THROW(require_compatible(d, cfg));
}

TEST(Checkpoint, CorruptFilesRejected) {
  oracle::TempDir t;
  DbfNet<float> net(oracle::toy_model_config(4), 1);
  save_checkpoint(t / "a.ckpt", net, nullptr, {});
  std::ifstream in(t / "a.ckpt", std::ios::binary);
  const std::string bytes{std::istreambuf_iterator<char>(in), {}};

  auto expect_field = [&](const std::string& content, const std::string& field) {
    {
      std::ofstream out(t / "b.ckpt", std::ios::binary | std::ios::trunc);
      out << content;
    }
    try {
      read_checkpoint(t / "b.ckpt");
      FAIL() << field;
    } catch (const CheckpointError& e) {
      EXPECT_EQ(e.field(), field);
    }
  };
  expect_field("NOT-A-CHECKPOINT\n" + bytes.substr(18), "magic");
  expect_field(bytes.substr(0, bytes.size() - 10), "payload");
  expect_field("DBFNET-CHECKPOINT\nabc\n", "header_length");
  EXPECT_THROW(read_checkpoint(t / "missing.ckpt"), IoError);
}
