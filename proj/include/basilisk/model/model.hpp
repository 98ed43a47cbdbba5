#pragma once

// Hybrid sequence model: token embedding, a residual stack of Mamba / MoE /
// segmented-attention layers chosen by build_schedule, a final LayerNorm, and
// either a tied LM head or the two-layer classification head.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "basilisk/model/config.hpp"
#include "basilisk/numerics/autodiff.hpp"
#include "basilisk/numerics/parameters.hpp"

namespace basilisk::model {

enum class Mode { LanguageModel, Classify };

template <class S>
struct ClassifierHeadParams {
  Parameter<S>* w1 = nullptr;  // [hidden1 x d_model]
  Parameter<S>* b1 = nullptr;
  Parameter<S>* w2 = nullptr;  // [hidden2 x hidden1]
  Parameter<S>* b2 = nullptr;
  Parameter<S>* ln_gamma = nullptr;  // [hidden2]
  Parameter<S>* ln_beta = nullptr;
  Parameter<S>* w3 = nullptr;  // [n_classes x hidden2]
  Parameter<S>* b3 = nullptr;
  double dropout = 0.0;
  double ln_eps = 1e-5;
};

template <class S>
ClassifierHeadParams<S> make_classifier_head(ParameterStore<S>& store, const std::string& prefix, std::size_t d_in,
                                             std::size_t h1, std::size_t h2, std::size_t n_classes, double dropout,
                                             Rng& rng) {
  auto lin = [&](std::size_t out, std::size_t in) {
    const S s = S{1} / std::sqrt(static_cast<S>(in));
    return std::pair{uniform_tensor<S>({out, in}, -s, s, rng), uniform_tensor<S>({out}, -s, s, rng)};
  };
  ClassifierHeadParams<S> p;
  auto [w1, b1] = lin(h1, d_in);
  auto [w2, b2] = lin(h2, h1);
  auto [w3, b3] = lin(n_classes, h2);
  p.w1 = &store.add(prefix + ".dense1.weight", std::move(w1));
  p.b1 = &store.add(prefix + ".dense1.bias", std::move(b1), false);
  p.w2 = &store.add(prefix + ".dense2.weight", std::move(w2));
  p.b2 = &store.add(prefix + ".dense2.bias", std::move(b2), false);
  p.ln_gamma = &store.add(prefix + ".norm.weight", Tensor<S>({h2}, S{1}), false);
  p.ln_beta = &store.add(prefix + ".norm.bias", Tensor<S>({h2}, S{0}), false);
  p.w3 = &store.add(prefix + ".out.weight", std::move(w3));
  p.b3 = &store.add(prefix + ".out.bias", std::move(b3), false);
  p.dropout = dropout;
  return p;
}

/// x1 = Dropout(GELU(W1 h + b1)); x2 = Dropout(GELU(W2 x1 + b2));
/// x3 = LayerNorm(x2); y = W3 x3 + b3. Dropout is active only when rng is given.
template <class S>
Var<S> classification_head(Tape<S>& tape, Var<S> h, const ClassifierHeadParams<S>& p, Rng* rng = nullptr) {
  using namespace basilisk::ad;
  if (h.cols() != p.w1->value.cols()) throw ShapeError("classification_head: input width mismatch");
  const S rate = rng ? static_cast<S>(p.dropout) : S{0};
  auto drop = [&](Var<S> v) { return rng ? dropout(v, rate, *rng) : v; };
  Var<S> x1 = drop(gelu(linear(h, tape.parameter(*p.w1), tape.parameter(*p.b1))));
  Var<S> x2 = drop(gelu(linear(x1, tape.parameter(*p.w2), tape.parameter(*p.b2))));
  Var<S> x3 = layer_norm_rows(x2, tape.parameter(*p.ln_gamma), tape.parameter(*p.ln_beta), static_cast<S>(p.ln_eps));
  return linear(x3, tape.parameter(*p.w3), tape.parameter(*p.b3));
}

template <class S>
using LayerParams = std::variant<ssm::MambaParams<S>, moe::MoeParams<S>, attention::AttentionParams<S>>;

/// Optional instrumentation and training switches for one forward pass.
template <class S>
struct ForwardOptions {
  /// Enables head dropout.
  Rng* dropout_rng = nullptr;
  /// Collect MoE load-balancing terms into ForwardResult::aux_loss.
  bool collect_aux = false;
  std::vector<moe::MoeStats>* moe_stats = nullptr;
  std::vector<std::vector<attention::CompressiveMemoryState<S>>>* memory_states = nullptr;
};

template <class S>
struct ForwardResult {
  Var<S> logits;
  Var<S> hidden;  // LayerNorm(h_L), [T x d_model]
  std::optional<Var<S>> aux_loss;
};

template <class S>
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.sync();
    config_.validate();
    schedule_ = config_.schedule();
    Rng rng = derive_rng(seed, 0);
    const std::size_t d = config_.d_model;
    embedding_ = &params_.add("embedding.weight",
                              normal_tensor<S>({config_.vocab_size, d}, static_cast<S>(config_.embedding_std), rng));
    for (std::size_t i = 0; i < schedule_.size(); ++i) {
      const std::string prefix = "layers." + std::to_string(i);
      if (config_.block_norm) {
        block_norms_.emplace_back(&params_.add(prefix + ".norm.weight", Tensor<S>({d}, S{1}), false),
                                  &params_.add(prefix + ".norm.bias", Tensor<S>({d}, S{0}), false));
      }
      switch (schedule_[i]) {
        case LayerKind::Mamba: layers_.emplace_back(ssm::make_mamba<S>(params_, prefix + ".mamba", config_.ssm, rng)); break;
        case LayerKind::MoE: layers_.emplace_back(moe::make_moe<S>(params_, prefix + ".moe", config_.moe, rng)); break;
        case LayerKind::Attention:
          layers_.emplace_back(attention::make_attention<S>(params_, prefix + ".attention", config_.attention, rng));
          break;
      }
    }
    norm_gamma_ = &params_.add("norm.weight", Tensor<S>({d}, S{1}), false);
    norm_beta_ = &params_.add("norm.bias", Tensor<S>({d}, S{0}), false);
    head_ = make_classifier_head<S>(params_, "classifier", d, config_.hidden1(), config_.hidden2(), config_.n_classes,
                                    config_.dropout, rng);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const noexcept { return config_; }
  const LayerSchedule& schedule() const noexcept { return schedule_; }
  ParameterStore<S>& parameters() noexcept { return params_; }
  const ParameterStore<S>& parameters() const noexcept { return params_; }
  const ClassifierHeadParams<S>& head() const noexcept { return head_; }

  void validate_tokens(std::span<const std::uint32_t> tokens) const {
    if (tokens.empty()) throw std::invalid_argument("model_forward: empty token sequence");
    if (tokens.size() > config_.max_length)
      throw std::invalid_argument("model_forward: sequence length " + std::to_string(tokens.size()) +
                                  " exceeds max_length " + std::to_string(config_.max_length));
    for (std::size_t i = 0; i < tokens.size(); ++i)
      if (tokens[i] >= config_.vocab_size)
        throw std::out_of_range("model_forward: token id " + std::to_string(tokens[i]) + " at position " +
                                std::to_string(i) + " outside vocabulary of " +
                                std::to_string(config_.vocab_size));
  }

  Var<S> embed(Tape<S>& tape, std::span<const std::uint32_t> tokens) const {
    validate_tokens(tokens);
    std::vector<std::size_t> idx(tokens.begin(), tokens.end());
    return ad::gather_rows(tape.parameter(*embedding_), std::move(idx));
  }

  /// h_i = Layer_i(LN_i(h_{i-1})) + h_{i-1}, or Layer_i(h_{i-1}) + h_{i-1} without
  /// block_norm; returns LayerNorm(h_L).
  Var<S> encode(Tape<S>& tape, Var<S> h, ForwardOptions<S>& opt, std::optional<Var<S>>* aux_total = nullptr) const {
    if (h.rows() == 0) throw std::invalid_argument("model_forward: empty token sequence");
    if (opt.moe_stats) opt.moe_stats->clear();
    if (opt.memory_states) opt.memory_states->clear();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& layer = layers_[i];
      Var<S> in = h;
      if (config_.block_norm)
        in = ad::layer_norm_rows(h, tape.parameter(*block_norms_[i].first), tape.parameter(*block_norms_[i].second),
                                 static_cast<S>(config_.layer_norm_eps));
      Var<S> out;
      if (const auto* m = std::get_if<ssm::MambaParams<S>>(&layer)) {
        out = ssm::mamba_forward(tape, in, *m);
      } else if (const auto* e = std::get_if<moe::MoeParams<S>>(&layer)) {
        moe::MoeStats stats;
        std::optional<Var<S>> aux;
        out = moe::moe_forward(tape, in, *e, opt.moe_stats ? &stats : nullptr, opt.collect_aux ? &aux : nullptr);
        if (opt.moe_stats) opt.moe_stats->push_back(std::move(stats));
        if (aux && aux_total) *aux_total = *aux_total ? ad::add(**aux_total, *aux) : *aux;
      } else {
        const auto& a = std::get<attention::AttentionParams<S>>(layer);
        std::vector<attention::CompressiveMemoryState<S>> states;
        out = attention::wb_attention_forward(tape, in, a, opt.memory_states ? &states : nullptr);
        if (opt.memory_states) opt.memory_states->push_back(std::move(states));
      }
      h = ad::add(out, h);
    }
    return ad::layer_norm_rows(h, tape.parameter(*norm_gamma_), tape.parameter(*norm_beta_),
                               static_cast<S>(config_.layer_norm_eps));
  }

  /// Logits from pre-computed input embeddings [T x d_model] (SIFT perturbs these).
  ForwardResult<S> forward_embeddings(Tape<S>& tape, Var<S> embeddings, Mode mode, ForwardOptions<S>& opt) const {
    ForwardResult<S> r;
    r.hidden = encode(tape, embeddings, opt, &r.aux_loss);
    if (mode == Mode::LanguageModel) {
      r.logits = ad::matmul_nt(r.hidden, tape.parameter(*embedding_));
    } else {
      r.logits = classification_head(tape, ad::mean_rows(r.hidden), head_, opt.dropout_rng);
    }
    return r;
  }

  ForwardResult<S> forward(Tape<S>& tape, std::span<const std::uint32_t> tokens, Mode mode,
                           ForwardOptions<S>& opt) const {
    return forward_embeddings(tape, embed(tape, tokens), mode, opt);
  }

  /// Evaluation-mode logits: [T x vocab] for LanguageModel, [1 x n_classes] for Classify.
  Tensor<S> logits(std::span<const std::uint32_t> tokens, Mode mode) const {
    Tape<S> tape;
    ForwardOptions<S> opt;
    return forward(tape, tokens, mode, opt).logits.value();
  }

  const std::vector<LayerParams<S>>& layers() const noexcept { return layers_; }

 private:
  ModelConfig config_;
  LayerSchedule schedule_;
  ParameterStore<S> params_;
  Parameter<S>* embedding_ = nullptr;
  std::vector<LayerParams<S>> layers_;
  std::vector<std::pair<Parameter<S>*, Parameter<S>*>> block_norms_;
  Parameter<S>* norm_gamma_ = nullptr;
  Parameter<S>* norm_beta_ = nullptr;
  ClassifierHeadParams<S> head_;
};

/// Scalar parameter count for a configuration without allocating weights.
inline std::size_t count_parameters(const ModelConfig& raw) {
  ModelConfig c = raw;
  c.sync();
  const std::size_t d = c.d_model;
  std::size_t n = c.vocab_size * d + 2 * d + (c.block_norm ? 2 * d * c.n_layers : 0);
  const std::size_t inner = c.ssm.inner(), N = c.ssm.d_state, R = c.ssm.rank(), K = c.ssm.d_conv;
  const std::size_t mamba = 2 * inner * d + inner * K + inner + (R + 2 * N) * inner + inner * R + inner +
                            inner * N + inner + d * inner;
  const std::size_t hidden = c.moe.hidden_mult * d;
  const std::size_t moe = c.moe.n_experts * d + c.moe.n_experts * (hidden * d + hidden + d * hidden + d);
  const std::size_t attn = 4 * d * d + c.attention.n_heads;
  for (LayerKind k : c.schedule()) n += k == LayerKind::Mamba ? mamba : k == LayerKind::MoE ? moe : attn;
  const std::size_t h1 = c.hidden1(), h2 = c.hidden2();
  n += h1 * d + h1 + h2 * h1 + h2 + 2 * h2 + c.n_classes * h2 + c.n_classes;
  return n;
}

}  // namespace basilisk::model
