#pragma once

// Plain (non-differentiated) dense kernels. The autodiff tape wraps these;
// inference-only paths such as the memory benchmark call them directly.

#include <cmath>
#include <limits>
#include <string>

#include "basilisk/numerics/tensor.hpp"

namespace basilisk::ops {

template <class S>
void require_finite(const Tensor<S>& x, const char* op) {
  if (!x.all_finite()) throw NumericError(std::string(op) + ": non-finite input");
}

/// C = A * B.
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul: " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  Tensor<S> c = Tensor<S>::zeros(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    S* ci = c.row(i);
    const S* ai = a.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const S av = ai[p];
      if (av == S{0}) continue;
      const S* bp = b.row(p);
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
  return c;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<S> t = Tensor<S>::zeros(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
  return t;
}

/// C = A * B^T.
template <class S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.cols() != b.cols())
    throw ShapeError("matmul_nt: " + shape_string(a.shape()) + " * T" + shape_string(b.shape()));
  return matmul(a, transpose(b));
}

/// C = A^T * B.
template <class S>
Tensor<S> matmul_tn(const Tensor<S>& a, const Tensor<S>& b) {
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw ShapeError("matmul_tn: T" + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  Tensor<S> c = Tensor<S>::zeros(m, n);
  for (std::size_t p = 0; p < k; ++p) {
    const S* ap = a.row(p);
    const S* bp = b.row(p);
    for (std::size_t i = 0; i < m; ++i) {
      const S av = ap[i];
      if (av == S{0}) continue;
      S* ci = c.row(i);
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
  return c;
}

template <class S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
  require_finite(x, "softmax_rows");
  Tensor<S> y(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const S* xi = x.row(i);
    S* yi = y.row(i);
    S mx = -std::numeric_limits<S>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xi[j]);
    S total = 0;
    for (std::size_t j = 0; j < n; ++j) total += (yi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < n; ++j) yi[j] /= total;
  }
  return y;
}

/// Row-wise softmax where row i only sees columns <= i + offset.
template <class S>
Tensor<S> causal_softmax_rows(const Tensor<S>& x, std::size_t offset = 0) {
  require_finite(x, "causal_softmax_rows");
  Tensor<S> y(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const std::size_t last = std::min(n, i + offset + 1);
    const S* xi = x.row(i);
    S* yi = y.row(i);
    S mx = -std::numeric_limits<S>::infinity();
    for (std::size_t j = 0; j < last; ++j) mx = std::max(mx, xi[j]);
    S total = 0;
    for (std::size_t j = 0; j < last; ++j) total += (yi[j] = std::exp(xi[j] - mx));
    for (std::size_t j = 0; j < last; ++j) yi[j] /= total;
  }
  return y;
}

template <class S>
S elu_plus_one(S x) {
  return x >= S{0} ? x + S{1} : std::exp(x);
}

template <class S>
S elu_plus_one_grad(S x) {
  return x >= S{0} ? S{1} : std::exp(x);
}

/// ELU(x) + 1, the positive feature map used by the compressive memory.
template <class S>
Tensor<S> elu_plus_one(const Tensor<S>& x) {
  require_finite(x, "elu_plus_one");
  Tensor<S> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = elu_plus_one(x[i]);
  return y;
}

template <class S>
S sigmoid(S x) {
  if (x >= S{0}) return S{1} / (S{1} + std::exp(-x));
  const S e = std::exp(x);
  return e / (S{1} + e);
}

template <class S>
S silu(S x) {
  return x * sigmoid(x);
}

template <class S>
S silu_grad(S x) {
  const S s = sigmoid(x);
  return s * (S{1} + x * (S{1} - s));
}

template <class S>
S softplus(S x) {
  if (x > S{20}) return x;
  if (x < S{-20}) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <class S>
S gelu(S x) {
  return S{0.5} * x * (S{1} + std::erf(x / std::sqrt(S{2})));
}

template <class S>
S gelu_grad(S x) {
  const S cdf = S{0.5} * (S{1} + std::erf(x / std::sqrt(S{2})));
  const S pdf = std::exp(S{-0.5} * x * x) / std::sqrt(S{2} * static_cast<S>(M_PI));
  return cdf + x * pdf;
}

template <class S, class F>
Tensor<S> map(const Tensor<S>& x, F&& f) {
  Tensor<S> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

template <class S>
Tensor<S> layer_norm_rows(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps) {
  const std::size_t n = x.cols();
  if (gamma.size() != n || beta.size() != n) throw ShapeError("layer_norm_rows: parameter width mismatch");
  Tensor<S> y(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const S* xi = x.row(i);
    S mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += xi[j];
    mean /= static_cast<S>(n);
    S var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<S>(n);
    const S inv = S{1} / std::sqrt(var + eps);
    S* yi = y.row(i);
    for (std::size_t j = 0; j < n; ++j) yi[j] = (xi[j] - mean) * inv * gamma[j] + beta[j];
  }
  return y;
}

}  // namespace basilisk::ops
