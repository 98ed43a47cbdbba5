#pragma once

// Adversarial embedding perturbation for fine-tuning. A perturbation delta,
// drawn with the configured initial magnitude, takes one gradient-ascent step
// on the symmetric KL between clean and perturbed class distributions; the
// divergence at the updated delta is the adversarial loss.

#include <optional>
#include <stdexcept>

#include "basilisk/model/model.hpp"

namespace basilisk::train {

struct SiftConfig {
  bool enabled = true;
  double perturbation_lr = 1e-4;
  double init_magnitude = 1e-2;
  double adversarial_weight = 1.0;
  std::size_t ascent_steps = 1;

  void validate() const {
    if (!(perturbation_lr > 0) || !(init_magnitude > 0) || adversarial_weight < 0)
      throw std::invalid_argument("sift: magnitudes must be positive");
  }
};

/// Symmetric KL between clean logits (held constant) and the logits of
/// embeddings + delta. `dropout_state` replays the clean pass's dropout masks.
template <class S>
S sift_divergence(const model::Model<S>& m, const Tensor<S>& embeddings, const Tensor<S>& delta,
                  const Tensor<S>& clean_logits, const std::optional<Rng>& dropout_state = std::nullopt) {
  Tape<S> tape;
  std::optional<Rng> rng = dropout_state;
  model::ForwardOptions<S> opt;
  opt.dropout_rng = rng ? &*rng : nullptr;
  Var<S> x = ad::add(tape.constant(embeddings), tape.constant(delta));
  Var<S> logits = m.forward_embeddings(tape, x, model::Mode::Classify, opt).logits;
  return ad::symmetric_kl_rows(tape.constant(clean_logits), logits).value().item();
}

/// One ascent step: delta + lr * d(divergence)/d(delta). Parameter gradients are untouched.
template <class S>
Tensor<S> sift_ascent_step(const model::Model<S>& m, const Tensor<S>& embeddings, const Tensor<S>& delta,
                           const Tensor<S>& clean_logits, double lr,
                           const std::optional<Rng>& dropout_state = std::nullopt) {
  Tape<S> tape;
  std::optional<Rng> rng = dropout_state;
  model::ForwardOptions<S> opt;
  opt.dropout_rng = rng ? &*rng : nullptr;
  Var<S> d = tape.watch(delta);
  Var<S> x = ad::add(tape.constant(embeddings), d);
  Var<S> logits = m.forward_embeddings(tape, x, model::Mode::Classify, opt).logits;
  Var<S> div = ad::symmetric_kl_rows(tape.constant(clean_logits), logits);
  tape.backward(div, S{1}, false);
  Tensor<S> g = tape.grad(d);
  Tensor<S> out = delta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += static_cast<S>(lr) * g[i];
  return out;
}

/// Adversarial loss on the caller's tape. `embeddings` and `clean_logits`
/// belong to that tape; `dropout_state` is the dropout RNG as it was before
/// the clean forward pass (nullopt when dropout is off).
template <class S>
Var<S> sift_adversarial_loss(Tape<S>& tape, const model::Model<S>& m, Var<S> embeddings, Var<S> clean_logits,
                             const SiftConfig& cfg, Rng& rng, const std::optional<Rng>& dropout_state) {
  cfg.validate();
  Tensor<S> delta = normal_tensor<S>(embeddings.value().shape(), static_cast<S>(cfg.init_magnitude), rng);
  for (std::size_t s = 0; s < cfg.ascent_steps; ++s)
    delta = sift_ascent_step(m, embeddings.value(), delta, clean_logits.value(), cfg.perturbation_lr, dropout_state);
  std::optional<Rng> replay = dropout_state;
  model::ForwardOptions<S> opt;
  opt.dropout_rng = replay ? &*replay : nullptr;
  Var<S> x = ad::add(embeddings, tape.constant(std::move(delta)));
  Var<S> perturbed = m.forward_embeddings(tape, x, model::Mode::Classify, opt).logits;
  return ad::symmetric_kl_rows(clean_logits, perturbed);
}

}  // namespace basilisk::train
