#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "basilisk/numerics/parameters.hpp"

namespace basilisk::train {

struct OptimizerConfig {
  double learning_rate = 5e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double warmup_ratio = 0.15;
  std::size_t batch_size = 4;
  std::size_t epochs = 10;
  /// Global gradient-norm clip; 0 disables.
  double max_grad_norm = 1.0;

  static OptimizerConfig pretraining() {
    OptimizerConfig c;
    c.learning_rate = 1.41e-5;
    c.batch_size = 16;
    return c;
  }
  static OptimizerConfig fine_tuning() { return OptimizerConfig{}; }

  void validate() const {
    if (!(learning_rate > 0) || !(eps > 0) || weight_decay < 0)
      throw std::invalid_argument("optimizer: rates must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw std::invalid_argument("optimizer: betas must be in [0, 1)");
    if (warmup_ratio < 0 || warmup_ratio > 1) throw std::invalid_argument("optimizer: warmup_ratio must be in [0, 1]");
    if (batch_size == 0 || epochs == 0) throw std::invalid_argument("optimizer: batch_size and epochs must be >= 1");
  }
};

/// Linear warmup to the peak rate over ceil(ratio * total) steps, then linear decay to zero.
class WarmupLinearSchedule {
 public:
  WarmupLinearSchedule(double peak, std::size_t total_steps, double warmup_ratio)
      : peak_(peak),
        total_(total_steps),
        warmup_(static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)))) {}

  double operator()(std::size_t step) const {
    if (step < warmup_) return peak_ * static_cast<double>(step) / static_cast<double>(warmup_);
    if (step >= total_) return 0.0;
    const std::size_t decay_span = total_ - warmup_;
    return peak_ * static_cast<double>(total_ - step) / static_cast<double>(decay_span);
  }

  std::size_t warmup_steps() const noexcept { return warmup_; }
  std::size_t total_steps() const noexcept { return total_; }

 private:
  double peak_;
  std::size_t total_;
  std::size_t warmup_;
};

/// Adam with decoupled weight decay; decay is skipped for parameters whose
/// decay flag is false (biases, normalization weights).
template <class S>
class AdamW {
 public:
  explicit AdamW(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  void step(ParameterStore<S>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& p : params) {
      if (p.grad.size() != p.value.size()) continue;
      auto& st = state_[&p];
      if (st.m.size() != p.value.size()) {
        st.m.assign(p.value.size(), 0.0);
        st.v.assign(p.value.size(), 0.0);
      }
      const double decay = p.decay ? lr * cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        double w = static_cast<double>(p.value[i]);
        w -= decay * w;
        w -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        p.value[i] = static_cast<S>(w);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }
  const OptimizerConfig& config() const noexcept { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::unordered_map<const Parameter<S>*, Moments> state_;
};

/// Scales all gradients so their global L2 norm is at most max_norm; returns the pre-clip norm.
template <class S>
double clip_grad_norm(ParameterStore<S>& params, double max_norm) {
  double total = 0;
  for (const auto& p : params)
    for (S g : p.grad.values()) total += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(total);
  if (max_norm > 0 && norm > max_norm) {
    const S factor = static_cast<S>(max_norm / (norm + 1e-12));
    for (auto& p : params)
      for (auto& g : p.grad.values()) g *= factor;
  }
  return norm;
}

}  // namespace basilisk::train
