#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dbf/nn/attention.hpp"
#include "dbf/nn/layers.hpp"

namespace dbf {

// Decoder configuration: how many FFS blocks, whether they exchange features
// through the FFM, and which deep-supervision heads exist.
struct FfsConfig {
  int count = 2;
  bool use_ffm = true;
  double lambda_init = 1.0;
  bool supervise_body = true;
  bool supervise_bound = true;
};

// Architecture hyperparameters. Defaults reproduce the full-size network
// (encoder 3-32-64-128-256-256 with dilations 1,2,3,5,7).
struct ModelConfig {
  int in_channels = 3;
  std::array<int, 5> encoder_channels{32, 64, 128, 256, 256};
  std::array<int, 5> encoder_dilations{1, 2, 3, 5, 7};
  // Width of each of the five ASP_OC branches; their concatenation is
  // projected back to aspp_out_channels.
  int aspp_branch_channels = 32;
  std::array<int, 4> aspp_rates{1, 12, 24, 36};
  int aspp_out_channels = 256;
  int oc_key_reduction = 2;
  // Branch widths of FFS-1 (stride 1) and FFS-2 (stride 2).
  std::array<int, 2> ffs_channels{32, 64};
  int ffm_kernel = 3;
  FfsConfig ffs;

  void validate() const {
    if (in_channels < 1) throw ConfigError("model.in_channels must be >= 1");
    for (int c : encoder_channels)
      if (c < 1) throw ConfigError("model.encoder_channels must be >= 1");
    for (int d : encoder_dilations)
      if (d < 1) throw ConfigError("model.encoder_dilations must be >= 1");
    for (int r : aspp_rates)
      if (r < 1) throw ConfigError("model.aspp_rates must be >= 1");
    if (aspp_branch_channels < 1 || aspp_out_channels < 1) throw ConfigError("model ASP_OC widths must be >= 1");
    if (oc_key_reduction < 1) throw ConfigError("model.oc_key_reduction must be >= 1");
    if (ffs_channels[0] < 1 || ffs_channels[1] < 1) throw ConfigError("model.ffs_channels must be >= 1");
    if (ffm_kernel < 1 || ffm_kernel % 2 == 0) throw ConfigError("model.ffm_kernel must be odd");
    if (ffs.count < 0 || ffs.count > 2) throw ConfigError("model.ffs.count must be 0, 1 or 2");
    if (!std::isfinite(ffs.lambda_init)) throw ConfigError("model.ffs.lambda_init must be finite");
  }

  // Output stride of the deepest encoder block.
  static constexpr int stride = 16;
};

template <typename T>
class EncoderBlock {
public:
  EncoderBlock() = default;
  EncoderBlock(const std::string& name, int in, int out, int dilation, std::mt19937_64& rng)
      : first(name + ".0", in, out, 3, dilation, rng), second(name + ".1", out, out, 3, dilation, rng) {}

  Tensor<T> forward(const Tensor<T>& x) { return second.forward(first.forward(x)); }
  Tensor<T> backward(const Tensor<T>& dy) { return first.backward(second.backward(dy)); }

  void train(bool on) {
    first.train(on);
    second.train(on);
  }
  template <typename F>
  void visit(F&& f) {
    first.visit(f);
    second.visit(f);
  }
  template <typename F>
  void visit_buffers(F&& f) {
    first.visit_buffers(f);
    second.visit_buffers(f);
  }

  nn::ConvBnRelu<T> first;
  nn::ConvBnRelu<T> second;
};

// Five dilated blocks; 2x2 max-pooling between consecutive blocks, so block i
// runs at 1/2^(i-1) of the input resolution.
template <typename T>
class Encoder {
public:
  Encoder() = default;
  Encoder(const ModelConfig& cfg, std::mt19937_64& rng) {
    int in = cfg.in_channels;
    for (int i = 0; i < 5; ++i) {
      blocks[i] = EncoderBlock<T>("encoder.block" + std::to_string(i + 1), in, cfg.encoder_channels[i],
                                  cfg.encoder_dilations[i], rng);
      in = cfg.encoder_channels[i];
    }
  }

  std::array<Tensor<T>, 5> forward(const Tensor<T>& x) {
    std::array<Tensor<T>, 5> e;
    e[0] = blocks[0].forward(x);
    for (int i = 1; i < 5; ++i) e[i] = blocks[i].forward(pools[i - 1].forward(e[i - 1]));
    return e;
  }

  // grads[i] is d(loss)/d(E_{i+1}); empty tensors count as zero.
  Tensor<T> backward(const std::array<Tensor<T>, 5>& grads) {
    Tensor<T> g = grads[4];
    for (int i = 4; i >= 1; --i) {
      g = pools[i - 1].backward(blocks[i].backward(g));
      if (!grads[i - 1].empty()) g += grads[i - 1];
    }
    return blocks[0].backward(g);
  }

  void train(bool on) {
    for (auto& b : blocks) b.train(on);
  }
  template <typename F>
  void visit(F&& f) {
    for (auto& b : blocks) b.visit(f);
  }
  template <typename F>
  void visit_buffers(F&& f) {
    for (auto& b : blocks) b.visit_buffers(f);
  }

  std::array<EncoderBlock<T>, 5> blocks;

private:
  std::array<nn::MaxPool2<T>, 4> pools;
};

// Object-context branch plus four dilated 3x3 branches, concatenated and
// projected by a 1x1 conv. Every conv is followed by BN + ReLU.
template <typename T>
class AspOc {
public:
  AspOc() = default;
  AspOc(const ModelConfig& cfg, std::mt19937_64& rng) {
    const int in = cfg.encoder_channels[4];
    const int b = cfg.aspp_branch_channels;
    context = nn::ObjectContext<T>("aspoc.context", in, b, cfg.oc_key_reduction, rng);
    for (int i = 0; i < 4; ++i)
      dilated[i] = nn::ConvBnRelu<T>("aspoc.dilated" + std::to_string(i + 1), in, b, 3, cfg.aspp_rates[i], rng);
    project = nn::ConvBnRelu<T>("aspoc.project", 5 * b, cfg.aspp_out_channels, 1, 1, rng);
    branch_channels_ = b;
  }

  Tensor<T> forward(const Tensor<T>& x) {
    std::array<Tensor<T>, 5> parts;
    parts[0] = context.forward(x);
    for (int i = 0; i < 4; ++i) parts[i + 1] = dilated[i].forward(x);
    return project.forward(concat_channels<T>({&parts[0], &parts[1], &parts[2], &parts[3], &parts[4]}));
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const Tensor<T> d = project.backward(dy);
    Tensor<T> dx = context.backward(slice_channels(d, 0, branch_channels_));
    for (int i = 0; i < 4; ++i) dx += dilated[i].backward(slice_channels(d, (i + 1) * branch_channels_, branch_channels_));
    return dx;
  }

  void train(bool on) {
    context.train(on);
    for (auto& d : dilated) d.train(on);
    project.train(on);
  }
  template <typename F>
  void visit(F&& f) {
    context.visit(f);
    for (auto& d : dilated) d.visit(f);
    project.visit(f);
  }
  template <typename F>
  void visit_buffers(F&& f) {
    context.visit_buffers(f);
    for (auto& d : dilated) d.visit_buffers(f);
    project.visit_buffers(f);
  }

  nn::ObjectContext<T> context;
  std::array<nn::ConvBnRelu<T>, 4> dilated;
  nn::ConvBnRelu<T> project;

private:
  int branch_channels_ = 0;
};

// Bidirectional residual exchange between the body and boundary streams:
//   body*  = body  + to_body(bound)
//   bound* = bound + to_bound(body)
template <typename T>
class Ffm {
public:
  Ffm() = default;
  Ffm(const std::string& name, int channels, int kernel, std::mt19937_64& rng)
      : to_body(name + ".to_body", channels, channels, kernel, 1, true, rng),
        to_bound(name + ".to_bound", channels, channels, kernel, 1, true, rng) {}

  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& body, const Tensor<T>& bound) {
    body.require_same(bound, "Ffm::forward");
    Tensor<T> body_star = to_body.forward(bound);
    body_star += body;
    Tensor<T> bound_star = to_bound.forward(body);
    bound_star += bound;
    return {std::move(body_star), std::move(bound_star)};
  }

  // Returns (d body, d bound).
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& d_body_star, const Tensor<T>& d_bound_star) {
    Tensor<T> d_body = to_bound.backward(d_bound_star);
    d_body += d_body_star;
    Tensor<T> d_bound = to_body.backward(d_body_star);
    d_bound += d_bound_star;
    return {std::move(d_body), std::move(d_bound)};
  }

  template <typename F>
  void visit(F&& f) {
    to_body.visit(f);
    to_bound.visit(f);
  }
  std::size_t parameter_count() const noexcept { return to_body.parameter_count() + to_bound.parameter_count(); }

  nn::Conv2d<T> to_body;
  nn::Conv2d<T> to_bound;
};

template <typename T>
struct FfsOutputs {
  Tensor<T> fused;
  Tensor<T> body_star;
  Tensor<T> bound_star;
  Tensor<T> body_logits;   // empty when the body head is disabled
  Tensor<T> bound_logits;  // empty when the boundary head is disabled
};

// Feature fusion and supervision block. The skip and (already upsampled)
// deep features are concatenated, split into body and boundary branches of
// two 3x3 conv-BN-ReLU each, optionally exchanged through the FFM, and fused
// as lambda * body* + bound*.
template <typename T>
class FfsBlock {
public:
  FfsBlock() = default;
  FfsBlock(const std::string& name, int skip_channels, int deep_channels, int width, const ModelConfig& cfg,
           std::mt19937_64& rng)
      : skip_channels_(skip_channels), deep_channels_(deep_channels), use_ffm_(cfg.ffs.use_ffm),
        body_head_enabled_(cfg.ffs.supervise_body), bound_head_enabled_(cfg.ffs.supervise_bound) {
    const int in = skip_channels + deep_channels;
    body_branch = EncoderBlock<T>(name + ".body", in, width, 1, rng);
    bound_branch = EncoderBlock<T>(name + ".bound", in, width, 1, rng);
    if (use_ffm_) ffm = Ffm<T>(name + ".ffm", width, cfg.ffm_kernel, rng);
    lambda = nn::Parameter<T>(name + ".lambda", Shape{1, 1, 1, 1});
    lambda.value[0] = static_cast<T>(cfg.ffs.lambda_init);
    if (body_head_enabled_) body_head = nn::Conv2d<T>(name + ".body_head", width, 1, 1, 1, true, rng);
    if (bound_head_enabled_) bound_head = nn::Conv2d<T>(name + ".bound_head", width, 1, 1, 1, true, rng);
  }

  bool use_ffm() const noexcept { return use_ffm_; }
  bool has_body_head() const noexcept { return body_head_enabled_; }
  bool has_bound_head() const noexcept { return bound_head_enabled_; }

  FfsOutputs<T> forward(const Tensor<T>& skip, const Tensor<T>& deep) {
    if (skip.h() != deep.h() || skip.w() != deep.w() || skip.n() != deep.n())
      throw ShapeError(lambda.name + ": skip " + skip.shape().str() + " and deep " + deep.shape().str() +
                       " differ spatially");
    if (skip.c() != skip_channels_ || deep.c() != deep_channels_)
      throw ShapeError(lambda.name + ": unexpected channel counts " + skip.shape().str() + " / " + deep.shape().str());
    const Tensor<T> cat = concat_channels(skip, deep);
    FfsOutputs<T> out;
    Tensor<T> body = body_branch.forward(cat);
    Tensor<T> bound = bound_branch.forward(cat);
    if (use_ffm_) {
      std::tie(out.body_star, out.bound_star) = ffm.forward(body, bound);
    } else {
      out.body_star = std::move(body);
      out.bound_star = std::move(bound);
    }
    out.fused = fuse(lambda.value[0], out.body_star, out.bound_star);
    if (body_head_enabled_) out.body_logits = body_head.forward(out.body_star);
    if (bound_head_enabled_) out.bound_logits = bound_head.forward(out.bound_star);
    body_star_ = out.body_star;
    return out;
  }

  // Gradients of the head logits may be empty (no loss on that head).
  // Returns (d skip, d deep).
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& d_fused, const Tensor<T>& d_body_logits,
                                           const Tensor<T>& d_bound_logits) {
    const T lam = lambda.value[0];
    T dlam = 0;
    for (std::size_t i = 0; i < d_fused.size(); ++i) dlam += d_fused[i] * body_star_[i];
    lambda.grad[0] += dlam;

    Tensor<T> d_body_star = d_fused;
    d_body_star *= lam;
    Tensor<T> d_bound_star = d_fused;
    if (body_head_enabled_ && !d_body_logits.empty()) d_body_star += body_head.backward(d_body_logits);
    if (bound_head_enabled_ && !d_bound_logits.empty()) d_bound_star += bound_head.backward(d_bound_logits);

    Tensor<T> d_body, d_bound;
    if (use_ffm_) {
      std::tie(d_body, d_bound) = ffm.backward(d_body_star, d_bound_star);
    } else {
      d_body = std::move(d_body_star);
      d_bound = std::move(d_bound_star);
    }
    Tensor<T> d_cat = body_branch.backward(d_body);
    d_cat += bound_branch.backward(d_bound);
    return {slice_channels(d_cat, 0, skip_channels_), slice_channels(d_cat, skip_channels_, deep_channels_)};
  }

  static Tensor<T> fuse(T lam, const Tensor<T>& body_star, const Tensor<T>& bound_star) {
    body_star.require_same(bound_star, "FFS fuse");
    Tensor<T> out(body_star.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = lam * body_star[i] + bound_star[i];
    return out;
  }

  void train(bool on) {
    body_branch.train(on);
    bound_branch.train(on);
  }
  template <typename F>
  void visit(F&& f) {
    body_branch.visit(f);
    bound_branch.visit(f);
    if (use_ffm_) ffm.visit(f);
    f(lambda);
    if (body_head_enabled_) body_head.visit(f);
    if (bound_head_enabled_) bound_head.visit(f);
  }
  template <typename F>
  void visit_buffers(F&& f) {
    body_branch.visit_buffers(f);
    bound_branch.visit_buffers(f);
  }

  EncoderBlock<T> body_branch;
  EncoderBlock<T> bound_branch;
  Ffm<T> ffm;
  nn::Parameter<T> lambda;
  nn::Conv2d<T> body_head;
  nn::Conv2d<T> bound_head;

private:
  int skip_channels_ = 0;
  int deep_channels_ = 0;
  bool use_ffm_ = true;
  bool body_head_enabled_ = true;
  bool bound_head_enabled_ = true;
  Tensor<T> body_star_;
};

// Deep-supervision logits of one FFS block. `level` is the encoder level it
// merges with (1 = full resolution, 2 = half resolution).
template <typename T>
struct SupervisionMaps {
  int level = 0;
  Tensor<T> body_logits;
  Tensor<T> bound_logits;
};

template <typename T>
struct ForwardOutputs {
  Tensor<T> final_logits;
  std::vector<SupervisionMaps<T>> supervision;  // ordered by level: FFS-1 first
  std::vector<double> lambda_values;            // same order as supervision
};

template <typename T>
struct OutputGrads {
  Tensor<T> final_logits;
  std::vector<SupervisionMaps<T>> supervision;  // same layout as ForwardOutputs
};

// Full network. With two FFS blocks the ASP_OC output is upsampled 8x into
// FFS-2 (with E2) and FFS-2's output 2x into FFS-1 (with E1); a 1x1 head on
// the last fused map gives the logits. With one block only FFS-2 is used and
// its logits are upsampled 2x; with none the ASP_OC logits are upsampled 16x.
template <typename T>
class DbfNet {
public:
  DbfNet() = default;
  DbfNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    encoder = Encoder<T>(cfg, rng);
    aspoc = AspOc<T>(cfg, rng);
    const auto& ch = cfg.encoder_channels;
    int head_in = cfg.aspp_out_channels;
    if (cfg.ffs.count >= 1) {
      ffs2 = FfsBlock<T>("ffs2", ch[1], cfg.aspp_out_channels, cfg.ffs_channels[1], cfg, rng);
      head_in = cfg.ffs_channels[1];
    }
    if (cfg.ffs.count >= 2) {
      ffs1 = FfsBlock<T>("ffs1", ch[0], cfg.ffs_channels[1], cfg.ffs_channels[0], cfg, rng);
      head_in = cfg.ffs_channels[0];
    }
    head = nn::Conv2d<T>("head", head_in, 1, 1, 1, true, rng);
  }

  const ModelConfig& config() const noexcept { return cfg_; }

  void check_input(const Tensor<T>& image) const {
    if (image.c() != cfg_.in_channels)
      throw ShapeError("network input must have " + std::to_string(cfg_.in_channels) + " channels, got " +
                       image.shape().str());
    if (image.h() % ModelConfig::stride != 0 || image.w() % ModelConfig::stride != 0 || image.h() == 0 ||
        image.w() == 0)
      throw ShapeError("network input spatial dims must be positive multiples of " +
                       std::to_string(ModelConfig::stride) + ", got " + image.shape().str());
  }

  std::array<Tensor<T>, 5> encode(const Tensor<T>& image) {
    check_input(image);
    return encoder.forward(image);
  }

  ForwardOutputs<T> forward(const Tensor<T>& image) {
    check_input(image);
    in_h_ = image.h();
    in_w_ = image.w();
    e_ = encoder.forward(image);
    context_ = aspoc.forward(e_[4]);
    ForwardOutputs<T> out;
    const int count = cfg_.ffs.count;
    if (count == 0) {
      out.final_logits = nn::resize_bilinear(head.forward(context_), in_h_, in_w_);
      return out;
    }
    const Tensor<T> up8 = nn::resize_bilinear(context_, e_[1].h(), e_[1].w());
    FfsOutputs<T> o2 = ffs2.forward(e_[1], up8);
    if (count == 1) {
      out.final_logits = nn::resize_bilinear(head.forward(o2.fused), in_h_, in_w_);
      out.supervision.push_back({2, std::move(o2.body_logits), std::move(o2.bound_logits)});
      out.lambda_values.push_back(static_cast<double>(ffs2.lambda.value[0]));
      return out;
    }
    const Tensor<T> up2 = nn::resize_bilinear(o2.fused, e_[0].h(), e_[0].w());
    FfsOutputs<T> o1 = ffs1.forward(e_[0], up2);
    out.final_logits = head.forward(o1.fused);
    out.supervision.push_back({1, std::move(o1.body_logits), std::move(o1.bound_logits)});
    out.supervision.push_back({2, std::move(o2.body_logits), std::move(o2.bound_logits)});
    out.lambda_values = {static_cast<double>(ffs1.lambda.value[0]), static_cast<double>(ffs2.lambda.value[0])};
    return out;
  }

  // Backpropagates through the last forward(); returns d(loss)/d(image).
  Tensor<T> backward(const OutputGrads<T>& g) {
    const int count = cfg_.ffs.count;
    auto sup_grad = [&](int level) -> const SupervisionMaps<T>* {
      for (const auto& s : g.supervision)
        if (s.level == level) return &s;
      return nullptr;
    };
    static const Tensor<T> none;
    std::array<Tensor<T>, 5> de;
    Tensor<T> d_context;
    if (count == 0) {
      d_context = head.backward(nn::resize_bilinear_backward(g.final_logits, context_.h(), context_.w()));
    } else {
      Tensor<T> d_fused2;
      if (count == 1) {
        d_fused2 = head.backward(nn::resize_bilinear_backward(g.final_logits, e_[1].h(), e_[1].w()));
      } else {
        const auto* s1 = sup_grad(1);
        auto [d_e1, d_up2] = ffs1.backward(head.backward(g.final_logits), s1 ? s1->body_logits : none,
                                           s1 ? s1->bound_logits : none);
        de[0] = std::move(d_e1);
        d_fused2 = nn::resize_bilinear_backward(d_up2, e_[1].h(), e_[1].w());
      }
      const auto* s2 = sup_grad(2);
      auto [d_e2, d_up8] = ffs2.backward(d_fused2, s2 ? s2->body_logits : none, s2 ? s2->bound_logits : none);
      de[1] = std::move(d_e2);
      d_context = nn::resize_bilinear_backward(d_up8, context_.h(), context_.w());
    }
    de[4] = aspoc.backward(d_context);
    return encoder.backward(de);
  }

  void train(bool on) {
    encoder.train(on);
    aspoc.train(on);
    if (cfg_.ffs.count >= 1) ffs2.train(on);
    if (cfg_.ffs.count >= 2) ffs1.train(on);
  }

  template <typename F>
  void visit(F&& f) {
    encoder.visit(f);
    aspoc.visit(f);
    if (cfg_.ffs.count >= 1) ffs2.visit(f);
    if (cfg_.ffs.count >= 2) ffs1.visit(f);
    head.visit(f);
  }
  template <typename F>
  void visit_buffers(F&& f) {
    encoder.visit_buffers(f);
    aspoc.visit_buffers(f);
    if (cfg_.ffs.count >= 1) ffs2.visit_buffers(f);
    if (cfg_.ffs.count >= 2) ffs1.visit_buffers(f);
  }

  std::vector<nn::Parameter<T>*> parameters() {
    std::vector<nn::Parameter<T>*> out;
    visit([&](nn::Parameter<T>& p) { out.push_back(&p); });
    return out;
  }
  std::vector<nn::Buffer<T>*> buffers() {
    std::vector<nn::Buffer<T>*> out;
    visit_buffers([&](nn::Buffer<T>& b) { out.push_back(&b); });
    return out;
  }

  void zero_grad() {
    visit([](nn::Parameter<T>& p) { p.grad.zero(); });
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    visit([&](nn::Parameter<T>& p) { n += p.size(); });
    return n;
  }

  // FFS blocks in level order (FFS-1 first); only active ones.
  std::vector<FfsBlock<T>*> ffs_blocks() {
    std::vector<FfsBlock<T>*> out;
    if (cfg_.ffs.count >= 2) out.push_back(&ffs1);
    if (cfg_.ffs.count >= 1) out.push_back(&ffs2);
    return out;
  }

  std::vector<double> lambda_values() {
    std::vector<double> out;
    for (auto* b : ffs_blocks()) out.push_back(static_cast<double>(b->lambda.value[0]));
    return out;
  }

  Encoder<T> encoder;
  AspOc<T> aspoc;
  FfsBlock<T> ffs1;
  FfsBlock<T> ffs2;
  nn::Conv2d<T> head;

private:
  ModelConfig cfg_;
  int in_h_ = 0, in_w_ = 0;
  std::array<Tensor<T>, 5> e_;
  Tensor<T> context_;
};

// Exact number of trainable scalars (including one lambda per FFS block).
inline std::size_t count_parameters(const ModelConfig& cfg) {
  DbfNet<float> net(cfg, 0);
  return net.parameter_count();
}

}  // namespace dbf
