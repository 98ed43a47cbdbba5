#pragma once

// Synthetic C-like corpus with a planted long-range dependency. Each sample
// declares a buffer, then (after `gap` filler bytes) writes one element:
//
//   void f(){char c[N];<filler>c[I]=0;}
//
// N and I are single digits and the write overflows iff I >= N. Labels are
// drawn first, then (N, I) uniformly among the pairs consistent with the
// label, so neither site alone determines the label. Every sample of a corpus
// has the same byte length.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "basilisk/data/sample.hpp"

namespace basilisk::data {

struct PlantedOptions {
  double positive_fraction = 0.5;
  double test_fraction = 0.25;
  std::string names = "abcdef";
  /// Sizes and indices are drawn from [min_digit, max_digit].
  int min_digit = 1;
  int max_digit = 8;
  std::string cwe = "CWE-787";
};

inline constexpr const char* kPlantedFiller[] = {"i++;", "j--;", "k=i;", "n=j;", "i=k;", "j=n;"};

/// Filler of exactly `bytes` bytes built from complete statements, padded with spaces.
inline std::string planted_filler(std::size_t bytes, std::mt19937_64& rng) {
  std::string out;
  std::uniform_int_distribution<std::size_t> pick(0, std::size(kPlantedFiller) - 1);
  while (out.size() + 4 <= bytes) out += kPlantedFiller[pick(rng)];
  out.append(bytes - out.size(), ' ');
  return out;
}

inline std::vector<LabeledSample> generate_planted_corpus(std::size_t n, std::size_t gap, std::uint64_t seed,
                                                          const PlantedOptions& opt = {}) {
  if (n < 2) throw std::invalid_argument("generate_planted_corpus: n must be >= 2");
  if (opt.positive_fraction < 0 || opt.positive_fraction > 1 || opt.test_fraction < 0 || opt.test_fraction >= 1)
    throw std::invalid_argument("generate_planted_corpus: fractions out of range");
  if (opt.names.empty()) throw std::invalid_argument("generate_planted_corpus: need at least one buffer name");
  if (opt.min_digit < 1 || opt.min_digit >= opt.max_digit || opt.max_digit > 9)
    throw std::invalid_argument("generate_planted_corpus: digit range must satisfy 1 <= min < max <= 9");
  std::mt19937_64 rng(seed);
  const auto n_pos = static_cast<std::size_t>(std::llround(opt.positive_fraction * static_cast<double>(n)));
  std::vector<int> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_pos), 1);
  std::shuffle(labels.begin(), labels.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(opt.test_fraction * static_cast<double>(n)));
  std::vector<std::pair<int, int>> pairs[2];  // (size, index) by label
  for (int size = opt.min_digit; size <= opt.max_digit; ++size)
    for (int index = opt.min_digit; index <= opt.max_digit; ++index) pairs[index >= size ? 1 : 0].emplace_back(size, index);
  std::uniform_int_distribution<std::size_t> name_pick(0, opt.names.size() - 1);
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pool = pairs[labels[i]];
    const auto [size, index] = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    const char name = opt.names[name_pick(rng)];
    LabeledSample s;
    s.code = std::string("void f(){char ") + name + "[" + std::to_string(size) + "];" + planted_filler(gap, rng) + name +
             "[" + std::to_string(index) + "]=0;}";
    s.label = labels[i];
    s.cwe = labels[i] == 1 ? std::optional<std::string>(opt.cwe) : std::nullopt;
    s.split = i + n_test >= n ? Split::Test : Split::Train;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace basilisk::data
