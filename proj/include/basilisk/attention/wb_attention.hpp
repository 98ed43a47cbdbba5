#pragma once

// Segmented linear attention with a compressive memory.
//
// The sequence is cut into segments of L tokens. Within a segment each head
// runs causal softmax attention (the "dot" path). Across segments a per-head
// memory (M, z) accumulates feature-mapped key/value sums; each segment first
// reads the memory built from strictly earlier segments, then writes its own
// keys and values into it. A per-head scalar gate sigmoid(beta) mixes the two
// paths. Transient storage per head is O(L*T + d_head^2); no T x T matrix is
// ever formed.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "basilisk/numerics/autodiff.hpp"
#include "basilisk/numerics/parameters.hpp"
#include "basilisk/numerics/random.hpp"

namespace basilisk::attention {

struct AttentionConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 8;
  std::size_t segment_length = 32;
  double epsilon = 1e-6;
  /// false forces the gate to the dot path only (sigmoid(beta) -> 0).
  bool memory_enabled = true;

  std::size_t d_head() const noexcept { return d_model / n_heads; }

  void validate() const {
    if (n_heads == 0 || d_model % n_heads != 0)
      throw std::invalid_argument("attention: n_heads must divide d_model");
    if (segment_length == 0) throw std::invalid_argument("attention: segment_length must be >= 1");
    if (!(epsilon > 0)) throw std::invalid_argument("attention: epsilon must be > 0");
  }
};

/// Per-head compressive memory: M [d_head x d_head] (key feature x value) and z [d_head].
template <class S>
struct CompressiveMemoryState {
  Tensor<S> M;
  Tensor<S> z;

  static CompressiveMemoryState zero(std::size_t d_head) {
    return {Tensor<S>::zeros(d_head, d_head), Tensor<S>::zeros(1, d_head)};
  }
  std::size_t d_head() const noexcept { return z.size(); }
};

/// Causal scaled dot-product attention inside one segment.
template <class S>
Tensor<S> segment_dot_attention(const Tensor<S>& Q, const Tensor<S>& K, const Tensor<S>& V) {
  if (Q.rows() != K.rows() || K.rows() != V.rows() || Q.cols() != K.cols())
    throw ShapeError("segment_dot_attention: shape mismatch Q" + shape_string(Q.shape()) + " K" +
                     shape_string(K.shape()) + " V" + shape_string(V.shape()));
  Tensor<S> scores = ops::matmul_nt(Q, K);
  const S scale = S{1} / std::sqrt(static_cast<S>(Q.cols()));
  for (auto& v : scores.values()) v *= scale;
  return ops::matmul(ops::causal_softmax_rows(scores), V);
}

/// sigma(q) M / (sigma(q) . z + eps) per row, sigma = ELU + 1.
template <class S>
Tensor<S> memory_retrieve(const Tensor<S>& Q, const CompressiveMemoryState<S>& state, S eps) {
  if (Q.cols() != state.d_head()) throw ShapeError("memory_retrieve: d_head mismatch");
  Tensor<S> sq = ops::elu_plus_one(Q);
  Tensor<S> out = ops::matmul(sq, state.M);
  for (std::size_t i = 0; i < sq.rows(); ++i) {
    S den = 0;
    for (std::size_t j = 0; j < sq.cols(); ++j) den += sq(i, j) * state.z[j];
    const S inv = S{1} / (den + eps);
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= inv;
  }
  return out;
}

/// M' = M + sigma(K)^T V, z' = z + column sums of sigma(K).
template <class S>
CompressiveMemoryState<S> memory_update(const CompressiveMemoryState<S>& state, const Tensor<S>& K,
                                        const Tensor<S>& V) {
  if (K.rows() != V.rows()) throw ShapeError("memory_update: K/V length mismatch");
  if (K.rows() == 0) return state;
  if (K.cols() != state.d_head() || V.cols() != state.d_head())
    throw ShapeError("memory_update: d_head mismatch");
  Tensor<S> sk = ops::elu_plus_one(K);
  CompressiveMemoryState<S> next = state;
  next.M += ops::matmul_tn(sk, V);
  for (std::size_t i = 0; i < sk.rows(); ++i)
    for (std::size_t j = 0; j < sk.cols(); ++j) next.z[j] += sk(i, j);
  return next;
}

/// One head of the segmented mechanism on already-projected Q, K, V [T x d_head].
/// Returns the gated per-position output; final_state receives (M, z).
template <class S>
Tensor<S> attention_head_forward(const Tensor<S>& Q, const Tensor<S>& K, const Tensor<S>& V,
                                 std::size_t segment_length, S beta, S eps, bool memory_enabled = true,
                                 CompressiveMemoryState<S>* final_state = nullptr) {
  const std::size_t T = Q.rows(), dh = Q.cols();
  if (T == 0) throw ShapeError("attention_head_forward: empty sequence");
  if (segment_length == 0) throw std::invalid_argument("attention_head_forward: segment_length must be >= 1");
  const S gate = memory_enabled ? ops::sigmoid(beta) : S{0};
  Tensor<S> out = Tensor<S>::zeros(T, dh);
  auto state = CompressiveMemoryState<S>::zero(dh);
  for (std::size_t r0 = 0; r0 < T; r0 += segment_length) {
    const std::size_t r1 = std::min(T, r0 + segment_length), len = r1 - r0;
    Tensor<S> qs({len, dh}, std::span<const S>(Q.row(r0), len * dh));
    Tensor<S> ks({len, dh}, std::span<const S>(K.row(r0), len * dh));
    Tensor<S> vs({len, dh}, std::span<const S>(V.row(r0), len * dh));
    Tensor<S> dot = segment_dot_attention(qs, ks, vs);
    if (memory_enabled) {
      Tensor<S> mem = memory_retrieve(qs, state, eps);
      for (std::size_t i = 0; i < dot.size(); ++i) dot[i] = gate * mem[i] + (S{1} - gate) * dot[i];
    }
    std::copy_n(dot.data(), dot.size(), out.row(r0));
    state = memory_update(state, ks, vs);
  }
  if (final_state) *final_state = std::move(state);
  return out;
}

template <class S>
struct AttentionParams {
  AttentionConfig config;
  Parameter<S>* wq = nullptr;  // [d_model x d_model]
  Parameter<S>* wk = nullptr;
  Parameter<S>* wv = nullptr;
  Parameter<S>* wo = nullptr;
  Parameter<S>* beta = nullptr;  // [n_heads]
};

template <class S>
AttentionParams<S> make_attention(ParameterStore<S>& store, const std::string& prefix, const AttentionConfig& cfg,
                                  Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  const S scale = S{1} / std::sqrt(static_cast<S>(d));
  AttentionParams<S> p;
  p.config = cfg;
  p.wq = &store.add(prefix + ".q_proj.weight", uniform_tensor<S>({d, d}, -scale, scale, rng));
  p.wk = &store.add(prefix + ".k_proj.weight", uniform_tensor<S>({d, d}, -scale, scale, rng));
  p.wv = &store.add(prefix + ".v_proj.weight", uniform_tensor<S>({d, d}, -scale, scale, rng));
  p.wo = &store.add(prefix + ".o_proj.weight", uniform_tensor<S>({d, d}, -scale, scale, rng));
  p.beta = &store.add(prefix + ".beta", Tensor<S>({cfg.n_heads}, S{0}));
  return p;
}

/// Differentiable forward. final_states (optional) receives each head's (M, z).
template <class S>
Var<S> wb_attention_forward(Tape<S>& tape, Var<S> x, const AttentionParams<S>& p,
                            std::vector<CompressiveMemoryState<S>>* final_states = nullptr) {
  using namespace basilisk::ad;
  const AttentionConfig& cfg = p.config;
  const std::size_t T = x.rows(), dh = cfg.d_head(), L = cfg.segment_length;
  if (T == 0) throw ShapeError("wb_attention_forward: empty sequence");
  if (x.cols() != cfg.d_model) throw ShapeError("wb_attention_forward: input width mismatch");
  const S eps = static_cast<S>(cfg.epsilon);
  const S inv_sqrt = S{1} / std::sqrt(static_cast<S>(dh));
  Var<S> Q = linear(x, tape.parameter(*p.wq));
  Var<S> K = linear(x, tape.parameter(*p.wk));
  Var<S> V = linear(x, tape.parameter(*p.wv));
  Var<S> beta = tape.parameter(*p.beta);
  std::vector<Var<S>> heads;
  if (final_states) final_states->clear();
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    Var<S> qh = slice_cols(Q, h * dh, (h + 1) * dh);
    Var<S> kh = slice_cols(K, h * dh, (h + 1) * dh);
    Var<S> vh = slice_cols(V, h * dh, (h + 1) * dh);
    Var<S> beta_h = slice_cols(beta, h, h + 1);
    Var<S> M = tape.constant(Tensor<S>::zeros(dh, dh));
    Var<S> z = tape.constant(Tensor<S>::zeros(1, dh));
    std::vector<Var<S>> segments;
    for (std::size_t r0 = 0; r0 < T; r0 += L) {
      const std::size_t r1 = std::min(T, r0 + L);
      Var<S> qs = slice_rows(qh, r0, r1);
      Var<S> ks = slice_rows(kh, r0, r1);
      Var<S> vs = slice_rows(vh, r0, r1);
      Var<S> probs = causal_softmax_rows(scale(matmul_nt(qs, ks), inv_sqrt));
      Var<S> dot = matmul(probs, vs);
      if (cfg.memory_enabled) {
        Var<S> sq = elu_plus_one(qs);
        Var<S> mem = div_col(matmul(sq, M), matmul_nt(sq, z), eps);
        segments.push_back(gate_mix(mem, dot, beta_h));
        Var<S> sk = elu_plus_one(ks);
        M = add(M, matmul_tn(sk, vs));
        z = add(z, sum_rows(sk));
      } else {
        segments.push_back(dot);
      }
    }
    if (final_states) {
      if (cfg.memory_enabled) {
        final_states->push_back({M.value(), z.value()});
      } else {
        final_states->push_back(CompressiveMemoryState<S>::zero(dh));
      }
    }
    heads.push_back(segments.size() == 1 ? segments.front() : concat_rows(segments));
  }
  Var<S> merged = heads.size() == 1 ? heads.front() : concat_cols(heads);
  return linear(merged, tape.parameter(*p.wo));
}

template <class S>
Tensor<S> wb_attention_forward(const Tensor<S>& x, const AttentionParams<S>& p,
                               std::vector<CompressiveMemoryState<S>>* final_states = nullptr) {
  Tape<S> tape;
  return wb_attention_forward(tape, tape.constant(x), p, final_states).value();
}

}  // namespace basilisk::attention
