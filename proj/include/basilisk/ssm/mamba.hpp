#pragma once

// Selective state-space (Mamba) block.
//
// Discretization: zero-order hold for the transition (exp(delta * A)) and an
// Euler step for the input matrix (delta * B). delta is softplus of a
// low-rank projection plus a learned bias, so it is strictly positive.

#include <cmath>
#include <string>

#include "basilisk/numerics/autodiff.hpp"
#include "basilisk/numerics/parameters.hpp"
#include "basilisk/numerics/random.hpp"

namespace basilisk::ssm {

struct SsmConfig {
  std::size_t d_model = 64;
  std::size_t d_state = 16;
  std::size_t d_conv = 4;
  std::size_t expand = 2;
  /// Rank of the delta projection; 0 selects ceil(d_model / 16).
  std::size_t dt_rank = 0;

  std::size_t inner() const noexcept { return expand * d_model; }
  std::size_t rank() const noexcept { return dt_rank ? dt_rank : (d_model + 15) / 16; }
};

/// Raw recurrence h_t = exp(delta_t A) h_{t-1} + delta_t B_t u_t, y_t = C_t h_t.
///
/// u, delta: [T x inner]; A: [inner x d_state]; B, C: [T x d_state].
template <class S>
Tensor<S> selective_scan(const Tensor<S>& u, const Tensor<S>& delta, const Tensor<S>& A, const Tensor<S>& B,
                         const Tensor<S>& C, Tensor<S>* states = nullptr) {
  const std::size_t T = u.rows(), inner = u.cols(), N = A.cols();
  if (T == 0) throw ShapeError("selective_scan: empty sequence");
  if (delta.rows() != T || delta.cols() != inner || A.rows() != inner || B.rows() != T || B.cols() != N ||
      C.rows() != T || C.cols() != N)
    throw ShapeError("selective_scan: incompatible shapes u" + shape_string(u.shape()) + " delta" +
                     shape_string(delta.shape()) + " A" + shape_string(A.shape()) + " B" +
                     shape_string(B.shape()) + " C" + shape_string(C.shape()));
  for (S d : delta.values())
    if (!(d > S{0})) throw NumericError("selective_scan: delta must be strictly positive");
  Tensor<S> y = Tensor<S>::zeros(T, inner);
  Tensor<S> h = Tensor<S>::zeros(inner, N);
  if (states) *states = Tensor<S>::zeros(T, inner * N);
  for (std::size_t t = 0; t < T; ++t) {
    const S* bt = B.row(t);
    const S* ct = C.row(t);
    for (std::size_t c = 0; c < inner; ++c) {
      const S dt = delta(t, c);
      const S du = dt * u(t, c);
      const S* ac = A.row(c);
      S* hc = h.row(c);
      S acc = 0;
      for (std::size_t n = 0; n < N; ++n) {
        hc[n] = std::exp(dt * ac[n]) * hc[n] + du * bt[n];
        acc += ct[n] * hc[n];
      }
      y(t, c) = acc;
    }
    if (states) std::copy_n(h.data(), inner * N, states->row(t));
  }
  return y;
}

namespace ad {

template <class S>
Var<S> selective_scan(Var<S> u, Var<S> delta, Var<S> A, Var<S> B, Var<S> C) {
  Tensor<S> states;
  Tensor<S> y = ssm::selective_scan(u.value(), delta.value(), A.value(), B.value(), C.value(), &states);
  return u.tape->record(
      std::move(y), {u, delta, A, B, C},
      [u, delta, A, B, C, states = std::move(states)](Tape<S>& t, const Tensor<S>& gy) {
        const Tensor<S>& uv = t.value(u.id);
        const Tensor<S>& dv = t.value(delta.id);
        const Tensor<S>& av = t.value(A.id);
        const Tensor<S>& bv = t.value(B.id);
        const Tensor<S>& cv = t.value(C.id);
        const std::size_t T = uv.rows(), inner = uv.cols(), N = av.cols();
        Tensor<S> du(uv.shape()), dd(dv.shape()), dA(av.shape()), dB(bv.shape()), dC(cv.shape());
        Tensor<S> carry = Tensor<S>::zeros(inner, N);
        for (std::size_t ti = T; ti-- > 0;) {
          const S* ht = states.row(ti);
          const S* hp = ti > 0 ? states.row(ti - 1) : nullptr;
          const S* bt = bv.row(ti);
          const S* ct = cv.row(ti);
          for (std::size_t c = 0; c < inner; ++c) {
            const S dt = dv(ti, c);
            const S uc = uv(ti, c);
            const S g_out = gy(ti, c);
            const S* ac = av.row(c);
            S* cc = carry.row(c);
            S sum_delta = 0, sum_u = 0;
            for (std::size_t n = 0; n < N; ++n) {
              const S hcur = ht[c * N + n];
              const S hprev = hp ? hp[c * N + n] : S{0};
              const S a = std::exp(dt * ac[n]);
              const S g = cc[n] + g_out * ct[n];
              dC(ti, n) += g_out * hcur;
              dA(c, n) += g * hprev * a * dt;
              sum_delta += g * (hprev * a * ac[n] + bt[n] * uc);
              dB(ti, n) += g * dt * uc;
              sum_u += g * bt[n];
              cc[n] = g * a;
            }
            dd(ti, c) += sum_delta;
            du(ti, c) += sum_u * dt;
          }
        }
        t.accumulate(u.id, du);
        t.accumulate(delta.id, dd);
        t.accumulate(A.id, dA);
        t.accumulate(B.id, dB);
        t.accumulate(C.id, dC);
      });
}

/// Depthwise causal convolution, zero left padding. x [T x C], w [C x K], b [C].
template <class S>
Var<S> causal_conv1d(Var<S> x, Var<S> w, Var<S> b) {
  const Tensor<S>& xv = x.value();
  const Tensor<S>& wv = w.value();
  const Tensor<S>& bv = b.value();
  const std::size_t T = xv.rows(), C = xv.cols(), K = wv.cols();
  if (wv.rows() != C || bv.size() != C) throw ShapeError("causal_conv1d: channel mismatch");
  Tensor<S> y = Tensor<S>::zeros(T, C);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < C; ++c) {
      S acc = bv[c];
      for (std::size_t k = 0; k < K; ++k) {
        if (t + k + 1 < K) continue;
        acc += wv(c, k) * xv(t + k + 1 - K, c);
      }
      y(t, c) = acc;
    }
  return x.tape->record(std::move(y), {x, w, b}, [x, w, b](Tape<S>& tp, const Tensor<S>& g) {
    const Tensor<S>& xv = tp.value(x.id);
    const Tensor<S>& wv = tp.value(w.id);
    const std::size_t T = xv.rows(), C = xv.cols(), K = wv.cols();
    Tensor<S> gx(xv.shape()), gw(wv.shape()), gb({C});
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        const S gv = g(t, c);
        gb[c] += gv;
        for (std::size_t k = 0; k < K; ++k) {
          if (t + k + 1 < K) continue;
          const std::size_t s = t + k + 1 - K;
          gx(s, c) += gv * wv(c, k);
          gw(c, k) += gv * xv(s, c);
        }
      }
    tp.accumulate(x.id, gx);
    tp.accumulate(w.id, gw);
    tp.accumulate(b.id, gb.reshaped(tp.value(b.id).shape()));
  });
}

}  // namespace ad

/// Parameter handles for one Mamba block (weights stored [out x in]).
template <class S>
struct MambaParams {
  SsmConfig config;
  Parameter<S>* in_proj = nullptr;    // [2*inner x d_model]
  Parameter<S>* conv_weight = nullptr;  // [inner x d_conv]
  Parameter<S>* conv_bias = nullptr;    // [inner]
  Parameter<S>* x_proj = nullptr;       // [rank + 2*d_state x inner]
  Parameter<S>* dt_weight = nullptr;    // [inner x rank]
  Parameter<S>* dt_bias = nullptr;      // [inner]
  Parameter<S>* a_log = nullptr;        // [inner x d_state]
  Parameter<S>* skip = nullptr;         // [inner]
  Parameter<S>* out_proj = nullptr;     // [d_model x inner]
};

template <class S>
MambaParams<S> make_mamba(ParameterStore<S>& store, const std::string& prefix, const SsmConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.d_model, inner = cfg.inner(), N = cfg.d_state, R = cfg.rank(), K = cfg.d_conv;
  MambaParams<S> p;
  p.config = cfg;
  const S in_scale = S{1} / std::sqrt(static_cast<S>(d));
  const S inner_scale = S{1} / std::sqrt(static_cast<S>(inner));
  p.in_proj = &store.add(prefix + ".in_proj.weight", uniform_tensor<S>({2 * inner, d}, -in_scale, in_scale, rng));
  const S conv_scale = S{1} / std::sqrt(static_cast<S>(K));
  p.conv_weight = &store.add(prefix + ".conv.weight", uniform_tensor<S>({inner, K}, -conv_scale, conv_scale, rng));
  p.conv_bias = &store.add(prefix + ".conv.bias", uniform_tensor<S>({inner}, -conv_scale, conv_scale, rng), false);
  p.x_proj = &store.add(prefix + ".x_proj.weight",
                        uniform_tensor<S>({R + 2 * N, inner}, -inner_scale, inner_scale, rng));
  const S dt_scale = S{1} / std::sqrt(static_cast<S>(R));
  p.dt_weight = &store.add(prefix + ".dt_proj.weight", uniform_tensor<S>({inner, R}, -dt_scale, dt_scale, rng));
  // delta initialized log-uniformly in [1e-3, 1e-1]; the bias stores softplus^-1.
  Tensor<S> dt_bias({inner});
  std::uniform_real_distribution<double> log_dt(std::log(1e-3), std::log(1e-1));
  for (auto& v : dt_bias.values()) {
    const double dt = std::exp(log_dt(rng));
    v = static_cast<S>(dt + std::log(-std::expm1(-dt)));
  }
  p.dt_bias = &store.add(prefix + ".dt_proj.bias", std::move(dt_bias), false);
  Tensor<S> a_log({inner, N});
  for (std::size_t c = 0; c < inner; ++c)
    for (std::size_t n = 0; n < N; ++n) a_log(c, n) = std::log(static_cast<S>(n + 1));
  p.a_log = &store.add(prefix + ".A_log", std::move(a_log));
  p.skip = &store.add(prefix + ".D", Tensor<S>({inner}, S{1}));
  p.out_proj = &store.add(prefix + ".out_proj.weight",
                          uniform_tensor<S>({d, inner}, -inner_scale, inner_scale, rng));
  return p;
}

/// Full block: in-projection, causal conv + SiLU, selective scan with
/// input-dependent B/C/delta, D skip, SiLU gate, out-projection.
template <class S>
Var<S> mamba_forward(Tape<S>& tape, Var<S> x, const MambaParams<S>& p) {
  const SsmConfig& cfg = p.config;
  const std::size_t inner = cfg.inner(), N = cfg.d_state, R = cfg.rank();
  if (x.cols() != cfg.d_model) throw ShapeError("mamba_forward: input width mismatch");
  if (x.rows() == 0) throw ShapeError("mamba_forward: empty sequence");
  using namespace basilisk::ad;
  Var<S> xz = linear(x, tape.parameter(*p.in_proj));
  Var<S> xs = slice_cols(xz, 0, inner);
  Var<S> z = slice_cols(xz, inner, 2 * inner);
  Var<S> xc = silu(ssm::ad::causal_conv1d(xs, tape.parameter(*p.conv_weight), tape.parameter(*p.conv_bias)));
  Var<S> dbc = linear(xc, tape.parameter(*p.x_proj));
  Var<S> dt_low = slice_cols(dbc, 0, R);
  Var<S> B = slice_cols(dbc, R, R + N);
  Var<S> C = slice_cols(dbc, R + N, R + 2 * N);
  Var<S> delta = softplus(linear(dt_low, tape.parameter(*p.dt_weight), tape.parameter(*p.dt_bias)));
  Var<S> A = neg_exp(tape.parameter(*p.a_log));
  Var<S> y = add(ssm::ad::selective_scan(xc, delta, A, B, C), mul_row(xc, tape.parameter(*p.skip)));
  y = mul(y, silu(z));
  return linear(y, tape.parameter(*p.out_proj));
}

/// Inference convenience wrapper (no gradients recorded against parameters).
template <class S>
Tensor<S> mamba_forward(const Tensor<S>& x, const MambaParams<S>& p) {
  Tape<S> tape;
  return mamba_forward(tape, tape.constant(x), p).value();
}

}  // namespace basilisk::ssm
