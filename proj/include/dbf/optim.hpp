#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dbf/nn/layers.hpp"

namespace dbf {

// Polynomial decay: lr0 * (1 - step / total_steps)^power.
inline double lr_schedule(std::int64_t step, std::int64_t total_steps, double lr0, double power) {
  if (total_steps <= 0) throw ParameterError("lr_schedule: total_steps must be > 0");
  if (step < 0 || step > total_steps)
    throw ParameterError("lr_schedule: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) +
                         "]");
  return lr0 * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(total_steps), power);
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction; moments are kept per parameter, matched by position.
template <typename T>
class Adam {
public:
  Adam() = default;
  Adam(std::vector<nn::Parameter<T>*> params, AdamOptions opts = {}) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        const double mi = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
        const double vi = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p.value[i] -= static_cast<T>(lr * (mi / c1) / (std::sqrt(vi / c2) + opts_.eps));
      }
    }
  }

  std::int64_t steps() const noexcept { return t_; }
  void set_steps(std::int64_t t) noexcept { t_ = t; }
  std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
  std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }
  const std::vector<nn::Parameter<T>*>& parameters() const noexcept { return params_; }

private:
  std::vector<nn::Parameter<T>*> params_;
  AdamOptions opts_;
  std::vector<Tensor<T>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace dbf
