#pragma once

// Class-imbalance handling: per-class weights w_c = N / (C * N_c) (C = 2 for
// the binary task), a sampler drawing examples proportionally to their class
// weight, and the class-weighted cross-entropy.

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "basilisk/numerics/autodiff.hpp"

namespace basilisk::train {

struct ClassWeights {
  std::vector<double> weights;
  std::vector<std::size_t> counts;
  std::size_t total = 0;

  double operator[](std::size_t c) const { return weights.at(c); }
};

inline ClassWeights class_weights(std::span<const std::size_t> counts) {
  if (counts.empty()) throw std::invalid_argument("class_weights: no classes");
  ClassWeights w;
  w.counts.assign(counts.begin(), counts.end());
  for (std::size_t n : counts) w.total += n;
  const double classes = static_cast<double>(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0)
      throw std::invalid_argument("class_weights: class " + std::to_string(c) + " has no samples (weight undefined)");
    w.weights.push_back(static_cast<double>(w.total) / (classes * static_cast<double>(counts[c])));
  }
  return w;
}

inline ClassWeights class_weights_from_labels(std::span<const int> labels, std::size_t n_classes = 2) {
  std::vector<std::size_t> counts(n_classes, 0);
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= n_classes)
      throw std::invalid_argument("class_weights: label " + std::to_string(l) + " out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  return class_weights(counts);
}

/// Draws batches with replacement, each index with probability proportional
/// to the weight of its class.
class WeightedBatchSampler {
 public:
  WeightedBatchSampler(std::span<const int> labels, const ClassWeights& weights, std::size_t batch_size,
                       std::uint64_t seed)
      : batch_size_(batch_size), rng_(seed) {
    if (labels.empty()) throw std::invalid_argument("weighted_batch_sampler: empty dataset");
    if (batch_size == 0) throw std::invalid_argument("weighted_batch_sampler: batch_size must be >= 1");
    std::vector<double> w;
    w.reserve(labels.size());
    for (int l : labels) w.push_back(weights[static_cast<std::size_t>(l)]);
    dist_ = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  }

  std::vector<std::size_t> next_batch() {
    std::vector<std::size_t> batch(batch_size_);
    for (auto& i : batch) i = dist_(rng_);
    return batch;
  }

 private:
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::discrete_distribution<std::size_t> dist_;
};

/// Mean over the batch of w_label * -log softmax(logits)[label]; logits [B x C].
template <class S>
Var<S> weighted_cross_entropy(Var<S> logits, std::span<const int> labels, const ClassWeights& weights) {
  if (labels.size() != logits.rows()) throw ShapeError("weighted_cross_entropy: batch size mismatch");
  std::vector<std::size_t> targets;
  std::vector<S> row_weights;
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= logits.cols() || static_cast<std::size_t>(l) >= weights.weights.size())
      throw std::invalid_argument("weighted_cross_entropy: invalid label " + std::to_string(l));
    targets.push_back(static_cast<std::size_t>(l));
    row_weights.push_back(static_cast<S>(weights[static_cast<std::size_t>(l)]));
  }
  return ad::cross_entropy_rows(logits, std::move(targets), std::move(row_weights));
}

}  // namespace basilisk::train
