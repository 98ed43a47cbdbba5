#pragma once

// Fill-in-the-middle rearrangement for causal pretraining.
//
//   PSM: <PRE> prefix <SUF> suffix <MID> middle
//   SPM: <PRE> <SUF> suffix <MID> prefix middle
//
// Cut points are drawn so the middle span is never empty.

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace basilisk::train {

struct FimConfig {
  double fim_rate = 0.5;
  double spm_rate = 0.5;
  std::uint32_t prefix_token = 259;
  std::uint32_t middle_token = 260;
  std::uint32_t suffix_token = 261;

  void validate() const {
    if (fim_rate < 0 || fim_rate > 1 || spm_rate < 0 || spm_rate > 1)
      throw std::invalid_argument("fim: rates must be in [0, 1]");
  }
};

struct FimResult {
  std::vector<std::uint32_t> tokens;
  bool transformed = false;
  bool spm = false;
};

template <class Rng>
FimResult fim_transform(std::span<const std::uint32_t> tokens, const FimConfig& cfg, Rng& rng) {
  cfg.validate();
  FimResult r;
  std::bernoulli_distribution apply(cfg.fim_rate);
  if (tokens.size() < 3 || !apply(rng)) {
    r.tokens.assign(tokens.begin(), tokens.end());
    return r;
  }
  const std::size_t n = tokens.size();
  std::uniform_int_distribution<std::size_t> cut(0, n);
  std::size_t a = cut(rng), b = cut(rng);
  while (a == b) b = cut(rng);
  if (a > b) std::swap(a, b);
  auto prefix = tokens.subspan(0, a);
  auto middle = tokens.subspan(a, b - a);
  auto suffix = tokens.subspan(b);
  r.transformed = true;
  r.spm = std::bernoulli_distribution(cfg.spm_rate)(rng);
  r.tokens.reserve(n + 3);
  r.tokens.push_back(cfg.prefix_token);
  if (r.spm) {
    r.tokens.push_back(cfg.suffix_token);
    r.tokens.insert(r.tokens.end(), suffix.begin(), suffix.end());
    r.tokens.push_back(cfg.middle_token);
    r.tokens.insert(r.tokens.end(), prefix.begin(), prefix.end());
    r.tokens.insert(r.tokens.end(), middle.begin(), middle.end());
  } else {
    r.tokens.insert(r.tokens.end(), prefix.begin(), prefix.end());
    r.tokens.push_back(cfg.suffix_token);
    r.tokens.insert(r.tokens.end(), suffix.begin(), suffix.end());
    r.tokens.push_back(cfg.middle_token);
    r.tokens.insert(r.tokens.end(), middle.begin(), middle.end());
  }
  return r;
}

}  // namespace basilisk::train
