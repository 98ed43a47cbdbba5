#pragma once

// Differentiable operations recorded on a Tape. Every op here has a
// finite-difference check in tests/unit/test_autodiff.cpp.

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "basilisk/numerics/ops.hpp"
#include "basilisk/numerics/random.hpp"
#include "basilisk/numerics/tape.hpp"

namespace basilisk::ad {

namespace detail {

template <class S>
void require_same(const Var<S>& a, const Var<S>& b, const char* op) {
  a.value().require_same_shape(b.value(), op);
}

template <class S, class F, class G>
Var<S> unary(Var<S> x, F&& forward, G derivative) {
  Tape<S>& t = *x.tape;
  const Tensor<S>& xv = x.value();
  Tensor<S> y(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = forward(xv[i]);
  const std::size_t yid = t.size();
  return t.record(std::move(y), {x}, [x, yid, derivative](Tape<S>& tp, const Tensor<S>& g) {
    const Tensor<S>& xv = tp.value(x.id);
    const Tensor<S>& yv = tp.value(yid);
    Tensor<S>& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * derivative(xv[i], yv[i]);
  });
}

}  // namespace detail

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::require_same(a, b, "add");
  Tensor<S> y = a.value();
  y += b.value();
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape<S>& t, const Tensor<S>& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::require_same(a, b, "sub");
  Tensor<S> y = a.value();
  const Tensor<S>& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape<S>& t, const Tensor<S>& g) {
    t.accumulate(a.id, g);
    if (t.needs_grad(b.id)) {
      Tensor<S>& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Elementwise product.
template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::require_same(a, b, "mul");
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  Tensor<S> y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape<S>& t, const Tensor<S>& g) {
    const Tensor<S>& av = t.value(a.id);
    const Tensor<S>& bv = t.value(b.id);
    if (t.needs_grad(a.id)) {
      Tensor<S>& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b.id)) {
      Tensor<S>& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <class S>
Var<S> scale(Var<S> x, S c) {
  Tensor<S> y = x.value();
  for (auto& v : y.values()) v *= c;
  return x.tape->record(std::move(y), {x}, [x, c](Tape<S>& t, const Tensor<S>& g) {
    Tensor<S>& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
  });
}

/// x [m x n] + b broadcast over rows (b has n entries).
template <class S>
Var<S> add_row(Var<S> x, Var<S> b) {
  const Tensor<S>& bv = b.value();
  const std::size_t n = x.cols();
  if (bv.size() != n) throw ShapeError("add_row: bias width mismatch");
  Tensor<S> y = x.value();
  for (std::size_t i = 0; i < y.rows(); ++i) {
    S* yi = y.row(i);
    for (std::size_t j = 0; j < n; ++j) yi[j] += bv[j];
  }
  return x.tape->record(std::move(y), {x, b}, [x, b, n](Tape<S>& t, const Tensor<S>& g) {
    t.accumulate(x.id, g);
    if (t.needs_grad(b.id)) {
      Tensor<S>& gb = t.grad_buffer(b.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g(i, j);
    }
  });
}

/// x [m x n] scaled column-wise by v (n entries).
template <class S>
Var<S> mul_row(Var<S> x, Var<S> v) {
  const Tensor<S>& vv = v.value();
  const std::size_t n = x.cols();
  if (vv.size() != n) throw ShapeError("mul_row: width mismatch");
  Tensor<S> y = x.value();
  for (std::size_t i = 0; i < y.rows(); ++i) {
    S* yi = y.row(i);
    for (std::size_t j = 0; j < n; ++j) yi[j] *= vv[j];
  }
  return x.tape->record(std::move(y), {x, v}, [x, v, n](Tape<S>& t, const Tensor<S>& g) {
    const Tensor<S>& xv = t.value(x.id);
    const Tensor<S>& vv = t.value(v.id);
    if (t.needs_grad(x.id)) {
      Tensor<S>& gx = t.grad_buffer(x.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) gx(i, j) += g(i, j) * vv[j];
    }
    if (t.needs_grad(v.id)) {
      Tensor<S>& gv = t.grad_buffer(v.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += g(i, j) * xv(i, j);
    }
  });
}

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tensor<S> y = ops::matmul(a.value(), b.value());
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape<S>& t, const Tensor<S>& g) {
    if (t.needs_grad(a.id)) t.accumulate(a.id, ops::matmul_nt(g, t.value(b.id)));
    if (t.needs_grad(b.id)) t.accumulate(b.id, ops::matmul_tn(t.value(a.id), g));
  });
}

/// a^T * b.
template <class S>
Var<S> matmul_tn(Var<S> a, Var<S> b) {
  Tensor<S> y = ops::matmul_tn(a.value(), b.value());
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape<S>& t, const Tensor<S>& g) {
    if (t.needs_grad(a.id)) t.accumulate(a.id, ops::matmul_nt(t.value(b.id), g));
    if (t.needs_grad(b.id)) t.accumulate(b.id, ops::matmul(t.value(a.id), g));
  });
}

/// a * b^T.
template <class S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  Tensor<S> y = ops::matmul_nt(a.value(), b.value());
  return a.tape->record(std::move(y), {a, b}, [a, b](Tape<S>& t, const Tensor<S>& g) {
    if (t.needs_grad(a.id)) t.accumulate(a.id, ops::matmul(g, t.value(b.id)));
    if (t.needs_grad(b.id)) t.accumulate(b.id, ops::matmul_tn(g, t.value(a.id)));
  });
}

/// x * W^T (+ bias). W is stored [out x in].
template <class S>
Var<S> linear(Var<S> x, Var<S> w) {
  return matmul_nt(x, w);
}

template <class S>
Var<S> linear(Var<S> x, Var<S> w, Var<S> bias) {
  return add_row(matmul_nt(x, w), bias);
}

template <class S>
Var<S> sum(Var<S> x) {
  S total = 0;
  for (S v : x.value().values()) total += v;
  return x.tape->record(Tensor<S>::scalar(total), {x}, [x](Tape<S>& t, const Tensor<S>& g) {
    Tensor<S>& gx = t.grad_buffer(x.id);
    const S gv = g[0];
    for (auto& v : gx.values()) v += gv;
  });
}

/// Column sums: [m x n] -> [1 x n].
template <class S>
Var<S> sum_rows(Var<S> x) {
  const Tensor<S>& xv = x.value();
  const std::size_t n = xv.cols();
  Tensor<S> y = Tensor<S>::zeros(1, n);
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) y[j] += xv(i, j);
  return x.tape->record(std::move(y), {x}, [x, n](Tape<S>& t, const Tensor<S>& g) {
    Tensor<S>& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < gx.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) gx(i, j) += g[j];
  });
}

/// Column means: [m x n] -> [1 x n].
template <class S>
Var<S> mean_rows(Var<S> x) {
  return scale(sum_rows(x), S{1} / static_cast<S>(x.rows()));
}

template <class S>
Var<S> elu_plus_one(Var<S> x) {
  ops::require_finite(x.value(), "elu_plus_one");
  return detail::unary(
      x, [](S v) { return ops::elu_plus_one(v); }, [](S v, S) { return ops::elu_plus_one_grad(v); });
}

template <class S>
Var<S> sigmoid(Var<S> x) {
  return detail::unary(
      x, [](S v) { return ops::sigmoid(v); }, [](S, S y) { return y * (S{1} - y); });
}

template <class S>
Var<S> silu(Var<S> x) {
  return detail::unary(
      x, [](S v) { return ops::silu(v); }, [](S v, S) { return ops::silu_grad(v); });
}

template <class S>
Var<S> gelu(Var<S> x) {
  return detail::unary(
      x, [](S v) { return ops::gelu(v); }, [](S v, S) { return ops::gelu_grad(v); });
}

template <class S>
Var<S> softplus(Var<S> x) {
  return detail::unary(
      x, [](S v) { return ops::softplus(v); }, [](S v, S) { return ops::sigmoid(v); });
}

/// y = -exp(x); keeps SSM transition rates strictly negative.
template <class S>
Var<S> neg_exp(Var<S> x) {
  return detail::unary(
      x, [](S v) { return -std::exp(v); }, [](S, S y) { return y; });
}

namespace detail {
template <class S>
Var<S> softmax_impl(Var<S> x, Tensor<S> y) {
  const std::size_t yid = x.tape->size();
  return x.tape->record(std::move(y), {x}, [x, yid](Tape<S>& t, const Tensor<S>& g) {
    const Tensor<S>& yv = t.value(yid);
    Tensor<S>& gx = t.grad_buffer(x.id);
    const std::size_t n = yv.cols();
    for (std::size_t i = 0; i < yv.rows(); ++i) {
      const S* yi = yv.row(i);
      const S* gi = g.row(i);
      S dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
      S* out = gx.row(i);
      for (std::size_t j = 0; j < n; ++j) out[j] += yi[j] * (gi[j] - dot);
    }
  });
}
}  // namespace detail

template <class S>
Var<S> softmax_rows(Var<S> x) {
  return detail::softmax_impl(x, ops::softmax_rows(x.value()));
}

template <class S>
Var<S> causal_softmax_rows(Var<S> x) {
  return detail::softmax_impl(x, ops::causal_softmax_rows(x.value()));
}

template <class S>
Var<S> layer_norm_rows(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S{1e-5}) {
  const Tensor<S>& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gamma.value().size() != n || beta.value().size() != n)
    throw ShapeError("layer_norm_rows: parameter width mismatch");
  Tensor<S> xhat(xv.shape());
  std::vector<S> inv(m);
  for (std::size_t i = 0; i < m; ++i) {
    const S* xi = xv.row(i);
    S mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<S>(n);
    S var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<S>(n);
    inv[i] = S{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) xhat(i, j) = (xi[j] - mean) * inv[i];
  }
  const Tensor<S>& gv = gamma.value();
  const Tensor<S>& bv = beta.value();
  Tensor<S> y(xv.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y(i, j) = xhat(i, j) * gv[j] + bv[j];
  return x.tape->record(
      std::move(y), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv = std::move(inv), m, n](Tape<S>& t,
                                                                           const Tensor<S>& g) {
        const Tensor<S>& gv = t.value(gamma.id);
        if (t.needs_grad(gamma.id)) {
          Tensor<S>& gg = t.grad_buffer(gamma.id);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g(i, j) * xhat(i, j);
        }
        if (t.needs_grad(beta.id)) {
          Tensor<S>& gb = t.grad_buffer(beta.id);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g(i, j);
        }
        if (t.needs_grad(x.id)) {
          Tensor<S>& gx = t.grad_buffer(x.id);
          const S nn = static_cast<S>(n);
          for (std::size_t i = 0; i < m; ++i) {
            S s1 = 0, s2 = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const S d = g(i, j) * gv[j];
              s1 += d;
              s2 += d * xhat(i, j);
            }
            for (std::size_t j = 0; j < n; ++j) {
              const S d = g(i, j) * gv[j];
              gx(i, j) += inv[i] / nn * (nn * d - s1 - xhat(i, j) * s2);
            }
          }
        }
      });
}

template <class S>
Var<S> slice_rows(Var<S> x, std::size_t r0, std::size_t r1) {
  const Tensor<S>& xv = x.value();
  if (r0 > r1 || r1 > xv.rows()) throw ShapeError("slice_rows: range out of bounds");
  const std::size_t n = xv.cols();
  Tensor<S> y({r1 - r0, n}, std::span<const S>(xv.row(r0), (r1 - r0) * n));
  return x.tape->record(std::move(y), {x}, [x, r0](Tape<S>& t, const Tensor<S>& g) {
    Tensor<S>& gx = t.grad_buffer(x.id);
    S* dst = gx.row(r0);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

template <class S>
Var<S> slice_cols(Var<S> x, std::size_t c0, std::size_t c1) {
  const Tensor<S>& xv = x.value();
  if (c0 > c1 || c1 > xv.cols()) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t m = xv.rows(), w = c1 - c0;
  Tensor<S> y = Tensor<S>::zeros(m, w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(xv.row(i) + c0, w, y.row(i));
  return x.tape->record(std::move(y), {x}, [x, c0, m, w](Tape<S>& t, const Tensor<S>& g) {
    Tensor<S>& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < m; ++i) {
      S* dst = gx.row(i) + c0;
      const S* src = g.row(i);
      for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
    }
  });
}

template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw ShapeError("concat_rows: width mismatch");
    m += p.rows();
  }
  Tensor<S> y = Tensor<S>::zeros(m, n);
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), y.row(r));
    r += p.rows();
  }
  return parts.front().tape->record(std::move(y), parts, [parts](Tape<S>& t, const Tensor<S>& g) {
    std::size_t r = 0;
    for (const auto& p : parts) {
      const std::size_t rows = t.value(p.id).rows();
      if (t.needs_grad(p.id)) {
        Tensor<S>& gp = t.grad_buffer(p.id);
        const S* src = g.row(r);
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += src[i];
      }
      r += rows;
    }
  });
}

template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: height mismatch");
    n += p.cols();
  }
  Tensor<S> y = Tensor<S>::zeros(m, n);
  std::size_t c = 0;
  for (const auto& p : parts) {
    const Tensor<S>& pv = p.value();
    const std::size_t w = pv.cols();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(pv.row(i), w, y.row(i) + c);
    c += w;
  }
  return parts.front().tape->record(std::move(y), parts, [parts, m](Tape<S>& t, const Tensor<S>& g) {
    std::size_t c = 0;
    for (const auto& p : parts) {
      const std::size_t w = t.value(p.id).cols();
      if (t.needs_grad(p.id)) {
        Tensor<S>& gp = t.grad_buffer(p.id);
        for (std::size_t i = 0; i < m; ++i) {
          const S* src = g.row(i) + c;
          S* dst = gp.row(i);
          for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
        }
      }
      c += w;
    }
  });
}

/// Row gather: y[i] = x[index[i]] (embedding lookup, expert dispatch).
template <class S>
Var<S> gather_rows(Var<S> x, std::vector<std::size_t> index) {
  const Tensor<S>& xv = x.value();
  const std::size_t n = xv.cols();
  Tensor<S> y = Tensor<S>::zeros(index.size(), n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= xv.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(xv.row(index[i]), n, y.row(i));
  }
  return x.tape->record(std::move(y), {x}, [x, index = std::move(index), n](Tape<S>& t, const Tensor<S>& g) {
    Tensor<S>& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < index.size(); ++i) {
      S* dst = gx.row(index[i]);
      const S* src = g.row(i);
      for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
    }
  });
}

/// Scatter-add: y[index_k[i]] += part_k[i] over all parts, y is [rows x cols].
template <class S>
Var<S> scatter_add_rows(const std::vector<std::pair<Var<S>, std::vector<std::size_t>>>& parts, Tape<S>& tape,
                        std::size_t rows, std::size_t cols) {
  Tensor<S> y = Tensor<S>::zeros(rows, cols);
  std::vector<Var<S>> vars;
  for (const auto& [v, index] : parts) {
    const Tensor<S>& pv = v.value();
    if (pv.cols() != cols || pv.rows() != index.size()) throw ShapeError("scatter_add_rows: part shape mismatch");
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= rows) throw ShapeError("scatter_add_rows: index out of range");
      S* dst = y.row(index[i]);
      const S* src = pv.row(i);
      for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
    }
    vars.push_back(v);
  }
  return tape.record(std::move(y), vars, [parts, cols](Tape<S>& t, const Tensor<S>& g) {
    for (const auto& [v, index] : parts) {
      if (!t.needs_grad(v.id)) continue;
      Tensor<S>& gv = t.grad_buffer(v.id);
      for (std::size_t i = 0; i < index.size(); ++i) {
        const S* src = g.row(index[i]);
        S* dst = gv.row(i);
        for (std::size_t j = 0; j < cols; ++j) dst[j] += src[j];
      }
    }
  });
}

/// Scales each row of x [n x d] by the matching entry of c [n x 1].
template <class S>
Var<S> mul_col(Var<S> x, Var<S> c) {
  const Tensor<S>& xv = x.value();
  const Tensor<S>& cv = c.value();
  if (cv.size() != xv.rows()) throw ShapeError("mul_col: column length mismatch");
  const std::size_t d = xv.cols();
  Tensor<S> y(xv.shape());
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < d; ++j) y(i, j) = xv(i, j) * cv[i];
  return x.tape->record(std::move(y), {x, c}, [x, c, d](Tape<S>& t, const Tensor<S>& g) {
    const Tensor<S>& xv = t.value(x.id);
    const Tensor<S>& cv = t.value(c.id);
    if (t.needs_grad(x.id)) {
      Tensor<S>& gx = t.grad_buffer(x.id);
      for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < d; ++j) gx(i, j) += g(i, j) * cv[i];
    }
    if (t.needs_grad(c.id)) {
      Tensor<S>& gc = t.grad_buffer(c.id);
      for (std::size_t i = 0; i < xv.rows(); ++i) {
        S acc = 0;
        for (std::size_t j = 0; j < d; ++j) acc += g(i, j) * xv(i, j);
        gc[i] += acc;
      }
    }
  });
}

/// y[i, :] = num[i, :] / (den[i] + eps).
template <class S>
Var<S> div_col(Var<S> num, Var<S> den, S eps) {
  const Tensor<S>& nv = num.value();
  const Tensor<S>& dv = den.value();
  if (dv.size() != nv.rows()) throw ShapeError("div_col: column length mismatch");
  const std::size_t d = nv.cols();
  Tensor<S> y(nv.shape());
  for (std::size_t i = 0; i < nv.rows(); ++i) {
    const S inv = S{1} / (dv[i] + eps);
    for (std::size_t j = 0; j < d; ++j) y(i, j) = nv(i, j) * inv;
  }
  return num.tape->record(std::move(y), {num, den}, [num, den, eps, d](Tape<S>& t, const Tensor<S>& g) {
    const Tensor<S>& nv = t.value(num.id);
    const Tensor<S>& dv = t.value(den.id);
    const bool gn = t.needs_grad(num.id), gd = t.needs_grad(den.id);
    for (std::size_t i = 0; i < nv.rows(); ++i) {
      const S inv = S{1} / (dv[i] + eps);
      if (gn) {
        Tensor<S>& gnum = t.grad_buffer(num.id);
        for (std::size_t j = 0; j < d; ++j) gnum(i, j) += g(i, j) * inv;
      }
      if (gd) {
        S acc = 0;
        for (std::size_t j = 0; j < d; ++j) acc += g(i, j) * nv(i, j);
        t.grad_buffer(den.id)[i] -= acc * inv * inv;
      }
    }
  });
}

/// y[i, k] = x[i, index[i * width + k]].
template <class S>
Var<S> gather_cols_per_row(Var<S> x, std::vector<std::size_t> index, std::size_t width) {
  const Tensor<S>& xv = x.value();
  const std::size_t m = xv.rows();
  if (index.size() != m * width) throw ShapeError("gather_cols_per_row: index size mismatch");
  Tensor<S> y = Tensor<S>::zeros(m, width);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < width; ++k) y(i, k) = xv(i, index[i * width + k]);
  return x.tape->record(std::move(y), {x}, [x, index = std::move(index), m, width](Tape<S>& t, const Tensor<S>& g) {
    Tensor<S>& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < width; ++k) gx(i, index[i * width + k]) += g(i, k);
  });
}

/// Picks individual elements into a column: y[i] = x(cells[i]).
template <class S>
Var<S> pick(Var<S> x, std::vector<std::pair<std::size_t, std::size_t>> cells) {
  const Tensor<S>& xv = x.value();
  Tensor<S> y = Tensor<S>::zeros(cells.size(), 1);
  for (std::size_t i = 0; i < cells.size(); ++i) y[i] = xv(cells[i].first, cells[i].second);
  return x.tape->record(std::move(y), {x}, [x, cells = std::move(cells)](Tape<S>& t, const Tensor<S>& g) {
    Tensor<S>& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < cells.size(); ++i) gx(cells[i].first, cells[i].second) += g[i];
  });
}

/// sigmoid(beta) * mem + (1 - sigmoid(beta)) * dot with a scalar beta.
template <class S>
Var<S> gate_mix(Var<S> mem, Var<S> dot, Var<S> beta) {
  detail::require_same(mem, dot, "gate_mix");
  const S s = ops::sigmoid(beta.value().item());
  const Tensor<S>& mv = mem.value();
  const Tensor<S>& dv = dot.value();
  Tensor<S> y(mv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = s * mv[i] + (S{1} - s) * dv[i];
  return mem.tape->record(std::move(y), {mem, dot, beta}, [mem, dot, beta, s](Tape<S>& t, const Tensor<S>& g) {
    const Tensor<S>& mv = t.value(mem.id);
    const Tensor<S>& dv = t.value(dot.id);
    if (t.needs_grad(mem.id)) {
      Tensor<S>& gm = t.grad_buffer(mem.id);
      for (std::size_t i = 0; i < g.size(); ++i) gm[i] += s * g[i];
    }
    if (t.needs_grad(dot.id)) {
      Tensor<S>& gd = t.grad_buffer(dot.id);
      for (std::size_t i = 0; i < g.size(); ++i) gd[i] += (S{1} - s) * g[i];
    }
    if (t.needs_grad(beta.id)) {
      S acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (mv[i] - dv[i]);
      t.grad_buffer(beta.id)[0] += s * (S{1} - s) * acc;
    }
  });
}

/// Inverted dropout; identity when rate is 0.
template <class S>
Var<S> dropout(Var<S> x, S rate, Rng& rng) {
  if (rate <= S{0}) return x;
  if (rate >= S{1}) throw std::invalid_argument("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const S scale_kept = S{1} / (S{1} - rate);
  Tensor<S> mask(x.value().shape());
  for (auto& m : mask.values()) m = keep(rng) ? scale_kept : S{0};
  Var<S> mv = x.tape->constant(std::move(mask));
  return mul(x, mv);
}

/// Mean over rows of weight[i] * -log softmax(logits[i])[target[i]].
template <class S>
Var<S> cross_entropy_rows(Var<S> logits, std::vector<std::size_t> targets, std::vector<S> weights) {
  const Tensor<S>& lv = logits.value();
  const std::size_t m = lv.rows(), n = lv.cols();
  if (targets.size() != m || weights.size() != m) throw ShapeError("cross_entropy_rows: batch size mismatch");
  Tensor<S> p = ops::softmax_rows(lv);
  S loss = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (targets[i] >= n) throw std::invalid_argument("cross_entropy_rows: target out of range");
    const S* li = lv.row(i);
    S mx = *std::max_element(li, li + n);
    S total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(li[j] - mx);
    loss += weights[i] * (mx + std::log(total) - li[targets[i]]);
  }
  loss /= static_cast<S>(m);
  return logits.tape->record(
      Tensor<S>::scalar(loss), {logits},
      [logits, p = std::move(p), targets = std::move(targets), weights = std::move(weights), m, n](
          Tape<S>& t, const Tensor<S>& g) {
        Tensor<S>& gl = t.grad_buffer(logits.id);
        const S base = g[0] / static_cast<S>(m);
        for (std::size_t i = 0; i < m; ++i) {
          const S w = base * weights[i];
          for (std::size_t j = 0; j < n; ++j) gl(i, j) += w * (p(i, j) - (j == targets[i] ? S{1} : S{0}));
        }
      });
}

/// Row-mean symmetric KL between softmax(a) and softmax(b):
/// KL(p||q) + KL(q||p) = sum_j (p_j - q_j)(a_j - b_j).
template <class S>
Var<S> symmetric_kl_rows(Var<S> a, Var<S> b) {
  detail::require_same(a, b, "symmetric_kl_rows");
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  Tensor<S> p = ops::softmax_rows(av);
  Tensor<S> q = ops::softmax_rows(bv);
  const std::size_t m = av.rows(), n = av.cols();
  S total = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) total += (p(i, j) - q(i, j)) * (av(i, j) - bv(i, j));
  total /= static_cast<S>(m);
  return a.tape->record(
      Tensor<S>::scalar(std::max(total, S{0})), {a, b},
      [a, b, p = std::move(p), q = std::move(q), m, n](Tape<S>& t, const Tensor<S>& g) {
        const Tensor<S>& av = t.value(a.id);
        const Tensor<S>& bv = t.value(b.id);
        const S base = g[0] / static_cast<S>(m);
        for (std::size_t i = 0; i < m; ++i) {
          S ep = 0, eq = 0;
          for (std::size_t j = 0; j < n; ++j) {
            ep += p(i, j) * (av(i, j) - bv(i, j));
            eq += q(i, j) * (bv(i, j) - av(i, j));
          }
          if (t.needs_grad(a.id)) {
            Tensor<S>& ga = t.grad_buffer(a.id);
            for (std::size_t j = 0; j < n; ++j)
              ga(i, j) += base * ((p(i, j) - q(i, j)) + p(i, j) * ((av(i, j) - bv(i, j)) - ep));
          }
          if (t.needs_grad(b.id)) {
            Tensor<S>& gb = t.grad_buffer(b.id);
            for (std::size_t j = 0; j < n; ++j)
              gb(i, j) += base * ((q(i, j) - p(i, j)) + q(i, j) * ((bv(i, j) - av(i, j)) - eq));
          }
        }
      });
}

}  // namespace basilisk::ad
