#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dbf/labelgen.hpp"
#include "dbf/network.hpp"
#include "dbf/nn/layers.hpp"

namespace dbf {

// How per-pixel BCE weights are derived from the target.
enum class BceWeighting {
  // w = 1 / ln(guarded_beta + p_class), p_class = pixel frequency of the pixel's class
  guarded,
  // w_i = 1 / ln(beta + G_i / sum(G)), denominator clamped to literal_eps
  literal,
  // w = 1
  uniform,
};

inline std::string to_string(BceWeighting w) {
  switch (w) {
    case BceWeighting::guarded: return "guarded";
    case BceWeighting::literal: return "literal";
    case BceWeighting::uniform: return "uniform";
  }
  return "guarded";
}

inline BceWeighting bce_weighting_from_string(const std::string& s) {
  if (s == "guarded") return BceWeighting::guarded;
  if (s == "literal") return BceWeighting::literal;
  if (s == "uniform") return BceWeighting::uniform;
  throw ParameterError("unknown BCE weighting '" + s + "'");
}

struct LossWeights {
  double lambda1 = 1.0;   // weighted BCE
  double lambda2 = 10.0;  // Dice
  double beta = 1.0;      // used by the literal weighting
  double guarded_beta = 1.02;
  double literal_eps = 1e-6;
  double dice_smooth = 1.0;
  BceWeighting weighting = BceWeighting::guarded;
  bool enable_body = true;
  bool enable_bound = true;

  void validate() const {
    if (!(lambda1 >= 0) || !(lambda2 >= 0)) throw ParameterError("loss lambda1/lambda2 must be >= 0");
    if (!(dice_smooth >= 0)) throw ParameterError("dice smoothing must be >= 0");
    if (weighting == BceWeighting::guarded && !(guarded_beta > 1.0))
      throw ParameterError("guarded_beta must be > 1 so that every weight is finite");
    if (weighting == BceWeighting::literal && !(beta > 0) ) throw ParameterError("beta must be > 0");
    if (!(literal_eps > 0)) throw ParameterError("literal_eps must be > 0");
  }
};

template <typename T>
struct LossValue {
  double value = 0;
  Tensor<T> grad;  // d value / d input, same shape as the input
};

struct ClassWeights {
  double foreground = 1;
  double background = 1;
};

// Weights for one target plane of `pixels` values in {0,1}.
template <typename T>
ClassWeights bce_class_weights(const T* target, std::size_t pixels, const LossWeights& lw) {
  double fg = 0;
  for (std::size_t i = 0; i < pixels; ++i) fg += target[i] > T(0.5) ? 1 : 0;
  switch (lw.weighting) {
    case BceWeighting::uniform: return {1.0, 1.0};
    case BceWeighting::guarded: {
      const double p_fg = fg / static_cast<double>(pixels);
      return {1.0 / std::log(lw.guarded_beta + p_fg), 1.0 / std::log(lw.guarded_beta + (1.0 - p_fg))};
    }
    case BceWeighting::literal: {
      const double ratio = fg > 0 ? 1.0 / fg : 0.0;
      return {1.0 / std::max(std::log(lw.beta + ratio), lw.literal_eps),
              1.0 / std::max(std::log(lw.beta), lw.literal_eps)};
    }
  }
  return {};
}

namespace detail {

template <typename T>
void require_target(const Tensor<T>& pred, const Tensor<T>& target, const char* op) {
  if (pred.shape() != target.shape())
    throw ShapeError(std::string(op) + ": prediction " + pred.shape().str() + " vs target " + target.shape().str());
  if (pred.c() != 1) throw ShapeError(std::string(op) + ": expected a single-channel map, got " + pred.shape().str());
}

}  // namespace detail

// Soft Dice on probabilities, averaged over the batch:
//   1 - (2 sum(g p) + smooth) / (sum(g) + sum(p) + smooth)
// grad is with respect to the probabilities.
template <typename T>
LossValue<T> dice_loss(const Tensor<T>& prob, const Tensor<T>& target, double smooth = 1.0) {
  detail::require_target(prob, target, "dice_loss");
  LossValue<T> out{0, Tensor<T>(prob.shape())};
  const std::size_t plane = prob.shape().plane();
  const double batch = prob.n();
  for (int n = 0; n < prob.n(); ++n) {
    const T* p = prob.sample(n);
    const T* g = target.sample(n);
    double inter = 0, total = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      inter += static_cast<double>(g[i]) * p[i];
      total += static_cast<double>(g[i]) + p[i];
    }
    const double num = 2 * inter + smooth;
    const double den = total + smooth;
    if (den == 0) continue;  // both empty with no smoothing: perfect agreement
    out.value += (1.0 - num / den) / batch;
    T* d = out.grad.sample(n);
    for (std::size_t i = 0; i < plane; ++i)
      d[i] = static_cast<T>(-(2.0 * g[i] * den - num) / (den * den) / batch);
  }
  return out;
}

// Dice on sigmoid(logits); grad with respect to the logits.
template <typename T>
LossValue<T> dice_loss_logits(const Tensor<T>& logits, const Tensor<T>& target, double smooth = 1.0) {
  Tensor<T> prob(logits.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) prob[i] = nn::sigmoid(logits[i]);
  LossValue<T> out = dice_loss(prob, target, smooth);
  for (std::size_t i = 0; i < prob.size(); ++i) out.grad[i] *= prob[i] * (T(1) - prob[i]);
  return out;
}

// Class-weighted binary cross-entropy on sigmoid(logits), mean over pixels
// then over the batch. Evaluated in the log-sum-exp form so it stays finite
// for any finite logit.
template <typename T>
LossValue<T> weighted_bce(const Tensor<T>& logits, const Tensor<T>& target, const LossWeights& lw) {
  detail::require_target(logits, target, "weighted_bce");
  LossValue<T> out{0, Tensor<T>(logits.shape())};
  const std::size_t plane = logits.shape().plane();
  const double scale = 1.0 / (static_cast<double>(plane) * logits.n());
  for (int n = 0; n < logits.n(); ++n) {
    const T* z = logits.sample(n);
    const T* g = target.sample(n);
    const ClassWeights cw = bce_class_weights(g, plane, lw);
    T* d = out.grad.sample(n);
    double sum = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double zi = z[i];
      const double gi = g[i];
      const double w = gi > 0.5 ? cw.foreground : cw.background;
      sum += w * (std::max(zi, 0.0) - zi * gi + std::log1p(std::exp(-std::abs(zi))));
      d[i] = static_cast<T>(w * (nn::sigmoid(zi) - gi) * scale);
    }
    out.value += sum * scale;
  }
  return out;
}

// lambda1 * weighted BCE + lambda2 * Dice.
template <typename T>
LossValue<T> stage_loss(const Tensor<T>& logits, const Tensor<T>& target, const LossWeights& lw) {
  LossValue<T> out{0, Tensor<T>(logits.shape())};
  if (lw.lambda1 != 0) {
    auto bce = weighted_bce(logits, target, lw);
    out.value += lw.lambda1 * bce.value;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += static_cast<T>(lw.lambda1) * bce.grad[i];
  }
  if (lw.lambda2 != 0) {
    auto dice = dice_loss_logits(logits, target, lw.dice_smooth);
    out.value += lw.lambda2 * dice.value;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += static_cast<T>(lw.lambda2) * dice.grad[i];
  } else {
    detail::require_target(logits, target, "stage_loss");
  }
  return out;
}

// Batch of supervision targets as N x 1 x H x W tensors of {0,1}.
template <typename T>
struct LabelBatch {
  Tensor<T> final;
  Tensor<T> body;
  Tensor<T> bound;
};

template <typename T>
Tensor<T> mask_tensor(const std::vector<const BinaryMask*>& masks) {
  if (masks.empty()) throw ShapeError("mask_tensor: empty batch");
  const int h = masks.front()->height(), w = masks.front()->width();
  Tensor<T> out(static_cast<int>(masks.size()), 1, h, w);
  for (int n = 0; n < out.n(); ++n) {
    if (masks[n]->height() != h || masks[n]->width() != w) throw ShapeError("mask_tensor: ragged batch");
    T* p = out.sample(n);
    for (std::size_t i = 0; i < masks[n]->size(); ++i) p[i] = (*masks[n])[i] ? T(1) : T(0);
  }
  return out;
}

template <typename T>
LabelBatch<T> label_batch(const std::vector<LabelSet>& labels) {
  std::vector<const BinaryMask*> f, b, d;
  for (const auto& l : labels) {
    f.push_back(&l.final);
    b.push_back(&l.body);
    d.push_back(&l.bound);
  }
  return {mask_tensor<T>(f), mask_tensor<T>(b), mask_tensor<T>(d)};
}

// Nearest-neighbour resize of a {0,1} target (source index floor(i * in / out)).
template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, int out_h, int out_w) {
  if (x.h() == out_h && x.w() == out_w) return x;
  Tensor<T> out(x.n(), x.c(), out_h, out_w);
  for (int n = 0; n < x.n(); ++n)
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.plane(n, c);
      T* q = out.plane(n, c);
      for (int y = 0; y < out_h; ++y) {
        const int sy = static_cast<int>(static_cast<long long>(y) * x.h() / out_h);
        for (int xx = 0; xx < out_w; ++xx) {
          const int sx = static_cast<int>(static_cast<long long>(xx) * x.w() / out_w);
          q[static_cast<std::size_t>(y) * out_w + xx] = p[static_cast<std::size_t>(sy) * x.w() + sx];
        }
      }
    }
  return out;
}

struct LossTerm {
  std::string name;  // "seg", "body_ffs1", "bound_ffs2", ...
  double value = 0;
};

template <typename T>
struct LossBreakdown {
  double total = 0;
  std::vector<LossTerm> terms;
  OutputGrads<T> grads;

  double term(const std::string& name) const {
    for (const auto& t : terms)
      if (t.name == name) return t.value;
    throw ParameterError("no loss term named '" + name + "'");
  }
};

// L = L_seg(final, G_final) + sum over FFS blocks of
//     L_body(body_i, G_body) + L_bound(bound_i, G_bound),
// dropping the terms disabled in `lw`. Body/bound targets are resized to each
// block's resolution by nearest neighbour.
template <typename T>
LossBreakdown<T> total_loss(const ForwardOutputs<T>& outputs, const LabelBatch<T>& labels, const LossWeights& lw) {
  LossBreakdown<T> out;
  auto seg = stage_loss(outputs.final_logits, labels.final, lw);
  out.total = seg.value;
  out.terms.push_back({"seg", seg.value});
  out.grads.final_logits = std::move(seg.grad);
  for (const auto& sup : outputs.supervision) {
    SupervisionMaps<T> g;
    g.level = sup.level;
    const std::string suffix = "_ffs" + std::to_string(sup.level);
    auto apply = [&](bool enabled, const Tensor<T>& logits, const Tensor<T>& full_target, const char* what,
                     Tensor<T>& grad_slot) {
      if (!enabled) return;
      if (logits.empty())
        throw ConfigError(std::string(what) + " loss is enabled but FFS-" + std::to_string(sup.level) +
                          " has no " + what + " supervision head");
      const Tensor<T> target = resize_nearest(full_target, logits.h(), logits.w());
      auto v = stage_loss(logits, target, lw);
      out.total += v.value;
      out.terms.push_back({std::string(what) + suffix, v.value});
      grad_slot = std::move(v.grad);
    };
    apply(lw.enable_body, sup.body_logits, labels.body, "body", g.body_logits);
    apply(lw.enable_bound, sup.bound_logits, labels.bound, "bound", g.bound_logits);
    out.grads.supervision.push_back(std::move(g));
  }
  return out;
}

}  // namespace dbf
