#pragma once

// Sparse mixture-of-experts feed-forward layer (top-k routing).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "basilisk/numerics/autodiff.hpp"
#include "basilisk/numerics/parameters.hpp"
#include "basilisk/numerics/random.hpp"

namespace basilisk::moe {

struct MoeConfig {
  std::size_t d_model = 64;
  std::size_t n_experts = 8;
  std::size_t k_active = 2;
  std::size_t hidden_mult = 4;
  bool aux_loss = true;
  double aux_loss_weight = 0.01;

  void validate() const {
    if (n_experts == 0 || k_active == 0 || k_active > n_experts)
      throw std::invalid_argument("moe: need 1 <= k_active <= n_experts");
  }
};

template <class S>
struct Route {
  std::vector<std::size_t> experts;  // descending logit order
  std::vector<S> gates;              // softmax over the selected logits
};

/// Top-k selection; equal logits resolve toward the lower expert index.
template <class S>
Route<S> route_from_logits(std::span<const S> logits, std::size_t k) {
  if (k == 0 || k > logits.size()) throw std::invalid_argument("route: invalid k");
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
  Route<S> r;
  r.experts.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  const S mx = logits[r.experts.front()];
  S total = 0;
  for (std::size_t e : r.experts) {
    r.gates.push_back(std::exp(logits[e] - mx));
    total += r.gates.back();
  }
  for (auto& g : r.gates) g /= total;
  return r;
}

/// Routes one token [d_model] through router weights [n_experts x d_model].
template <class S>
Route<S> route(std::span<const S> token, const Tensor<S>& router, std::size_t k) {
  if (token.size() != router.cols()) throw ShapeError("route: token width mismatch");
  for (S v : token)
    if (!std::isfinite(v)) throw NumericError("route: non-finite token");
  std::vector<S> logits(router.rows(), S{0});
  for (std::size_t e = 0; e < router.rows(); ++e)
    for (std::size_t j = 0; j < token.size(); ++j) logits[e] += router(e, j) * token[j];
  return route_from_logits<S>(logits, k);
}

template <class S>
struct ExpertParams {
  Parameter<S>* w1 = nullptr;  // [hidden x d_model]
  Parameter<S>* b1 = nullptr;  // [hidden]
  Parameter<S>* w2 = nullptr;  // [d_model x hidden]
  Parameter<S>* b2 = nullptr;  // [d_model]
};

template <class S>
struct MoeParams {
  MoeConfig config;
  Parameter<S>* router = nullptr;  // [n_experts x d_model]
  std::vector<ExpertParams<S>> experts;
};

/// Per-invocation access counters.
struct MoeStats {
  std::vector<std::size_t> tokens_per_expert;
  std::vector<std::size_t> experts_per_token;
  std::vector<double> gate_sums;

  std::size_t total_assignments() const {
    return std::accumulate(tokens_per_expert.begin(), tokens_per_expert.end(), std::size_t{0});
  }
};

template <class S>
MoeParams<S> make_moe(ParameterStore<S>& store, const std::string& prefix, const MoeConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model, hidden = cfg.hidden_mult * d;
  const S in_scale = S{1} / std::sqrt(static_cast<S>(d));
  const S hid_scale = S{1} / std::sqrt(static_cast<S>(hidden));
  MoeParams<S> p;
  p.config = cfg;
  p.router = &store.add(prefix + ".router.weight", uniform_tensor<S>({cfg.n_experts, d}, -in_scale, in_scale, rng));
  for (std::size_t e = 0; e < cfg.n_experts; ++e) {
    const std::string ep = prefix + ".experts." + std::to_string(e);
    ExpertParams<S> ex;
    ex.w1 = &store.add(ep + ".fc1.weight", uniform_tensor<S>({hidden, d}, -in_scale, in_scale, rng));
    ex.b1 = &store.add(ep + ".fc1.bias", uniform_tensor<S>({hidden}, -in_scale, in_scale, rng), false);
    ex.w2 = &store.add(ep + ".fc2.weight", uniform_tensor<S>({d, hidden}, -hid_scale, hid_scale, rng));
    ex.b2 = &store.add(ep + ".fc2.bias", uniform_tensor<S>({d}, -hid_scale, hid_scale, rng), false);
    p.experts.push_back(ex);
  }
  return p;
}

template <class S>
Var<S> expert_forward(Tape<S>& tape, Var<S> x, const ExpertParams<S>& e) {
  using namespace basilisk::ad;
  Var<S> h = gelu(linear(x, tape.parameter(*e.w1), tape.parameter(*e.b1)));
  return linear(h, tape.parameter(*e.w2), tape.parameter(*e.b2));
}

/// Each token is processed by exactly its k selected experts and combined
/// with the renormalized gates. Gradients flow through the gate values; the
/// selection itself is piecewise constant. When aux_loss is non-null and
/// enabled in the config, it receives the weighted load-balancing term.
template <class S>
Var<S> moe_forward(Tape<S>& tape, Var<S> x, const MoeParams<S>& p, MoeStats* stats = nullptr,
                   std::optional<Var<S>>* aux_loss = nullptr) {
  using namespace basilisk::ad;
  const MoeConfig& cfg = p.config;
  const std::size_t T = x.rows(), E = cfg.n_experts, k = cfg.k_active;
  if (T == 0) throw ShapeError("moe_forward: empty sequence");
  if (x.cols() != cfg.d_model) throw ShapeError("moe_forward: input width mismatch");
  Var<S> logits = linear(x, tape.parameter(*p.router));
  const Tensor<S>& lv = logits.value();
  std::vector<std::size_t> selected(T * k);
  std::vector<std::vector<std::size_t>> tokens(E);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> cells(E);
  for (std::size_t t = 0; t < T; ++t) {
    Route<S> r = route_from_logits<S>(std::span<const S>(lv.row(t), E), k);
    for (std::size_t s = 0; s < k; ++s) {
      selected[t * k + s] = r.experts[s];
      tokens[r.experts[s]].push_back(t);
      cells[r.experts[s]].emplace_back(t, s);
    }
  }
  Var<S> gates = softmax_rows(gather_cols_per_row(logits, selected, k));
  if (stats) {
    stats->tokens_per_expert.assign(E, 0);
    stats->experts_per_token.assign(T, 0);
    stats->gate_sums.assign(T, 0.0);
    const Tensor<S>& gv = gates.value();
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t s = 0; s < k; ++s) stats->gate_sums[t] += static_cast<double>(gv(t, s));
  }
  std::vector<std::pair<Var<S>, std::vector<std::size_t>>> parts;
  for (std::size_t e = 0; e < E; ++e) {
    if (tokens[e].empty()) continue;
    Var<S> xe = gather_rows(x, tokens[e]);
    Var<S> ye = expert_forward(tape, xe, p.experts[e]);
    if (stats) {
      stats->tokens_per_expert[e] += tokens[e].size();
      for (std::size_t t : tokens[e]) ++stats->experts_per_token[t];
    }
    parts.emplace_back(mul_col(ye, pick(gates, cells[e])), tokens[e]);
  }
  if (aux_loss && cfg.aux_loss) {
    Tensor<S> fraction({1, E});
    for (std::size_t e = 0; e < E; ++e)
      fraction[e] = static_cast<S>(tokens[e].size()) / static_cast<S>(T * k);
    Var<S> mean_prob = mean_rows(softmax_rows(logits));
    Var<S> balance = sum(mul(mean_prob, tape.constant(std::move(fraction))));
    *aux_loss = scale(balance, static_cast<S>(cfg.aux_loss_weight * static_cast<double>(E)));
  }
  return scatter_add_rows(parts, tape, T, cfg.d_model);
}

template <class S>
Tensor<S> moe_forward(const Tensor<S>& x, const MoeParams<S>& p, MoeStats* stats = nullptr) {
  Tape<S> tape;
  return moe_forward(tape, tape.constant(x), p, stats).value();
}

}  // namespace basilisk::moe
