#pragma once

// Seeded initialization helpers. All randomness in the library flows from
// std::mt19937_64, so a (seed, precision, toolchain) triple reproduces every
// parameter and every sampled batch bit-for-bit.

#include <cstdint>
#include <random>

#include "basilisk/numerics/tensor.hpp"

namespace basilisk {

using Rng = std::mt19937_64;

template <class S>
Tensor<S> uniform_tensor(Shape shape, S lo, S hi, Rng& rng) {
  Tensor<S> t(std::move(shape));
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.values()) v = static_cast<S>(dist(rng));
  return t;
}

template <class S>
Tensor<S> normal_tensor(Shape shape, S stddev, Rng& rng) {
  Tensor<S> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : t.values()) v = static_cast<S>(dist(rng));
  return t;
}

/// Derives an independent stream from a base seed and a stream index.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

}  // namespace basilisk
