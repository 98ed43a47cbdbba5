#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "basilisk/numerics/tensor.hpp"

namespace basilisk {

/// Central-difference gradient of a scalar function, one coordinate at a time.
template <class S, class F>
Tensor<S> finite_diff_gradient(F&& f, const Tensor<S>& x, S eps) {
  if (!(eps > S{0})) throw std::invalid_argument("finite_diff_gradient: eps must be positive");
  Tensor<S> grad(x.shape());
  Tensor<S> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const S orig = probe[i];
    probe[i] = orig + eps;
    const S plus = f(static_cast<const Tensor<S>&>(probe));
    probe[i] = orig - eps;
    const S minus = f(static_cast<const Tensor<S>&>(probe));
    probe[i] = orig;
    if (!std::isfinite(plus) || !std::isfinite(minus))
      throw NumericError("finite_diff_gradient: non-finite function value at coordinate " + std::to_string(i));
    grad[i] = (plus - minus) / (S{2} * eps);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps coordinates
/// whose true gradient is ~0 from dominating through round-off.
template <class S>
S max_relative_error(const Tensor<S>& a, const Tensor<S>& b, S floor = S{1e-6}) {
  a.require_same_shape(b, "max_relative_error");
  S worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const S denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace basilisk
