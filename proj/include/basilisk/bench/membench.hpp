#pragma once

// Peak-memory scaling benchmark: the segmented linear mechanism against a
// reference that materializes the full causal score matrix. Peak bytes are
// the tracked-allocator high-water mark above the inputs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "basilisk/attention/wb_attention.hpp"
#include "basilisk/numerics/memory.hpp"
#include "basilisk/numerics/random.hpp"
#include "json.hpp"

namespace basilisk::bench {

enum class AttentionKind { Linear, Quadratic };

inline const char* to_string(AttentionKind k) { return k == AttentionKind::Linear ? "linear" : "quadratic"; }

struct BenchResult {
  AttentionKind kind = AttentionKind::Linear;
  std::size_t length = 0;
  std::size_t peak_bytes = 0;
  double seconds = 0;
  bool completed = false;
};

/// Causal softmax(Q K^T / sqrt(d)) V with the T x T score matrix held in memory.
template <class S>
Tensor<S> quadratic_reference_attention(const Tensor<S>& Q, const Tensor<S>& K, const Tensor<S>& V) {
  const std::size_t T = Q.rows();
  if (T == 0) throw ShapeError("quadratic_reference_attention: empty sequence");
  if (K.rows() != T || V.rows() != T || K.cols() != Q.cols())
    throw ShapeError("quadratic_reference_attention: shape mismatch");
  Tensor<S> scores = ops::matmul_nt(Q, K);
  const S scale = S{1} / std::sqrt(static_cast<S>(Q.cols()));
  for (std::size_t i = 0; i < T; ++i) {
    S* r = scores.row(i);
    S mx = -std::numeric_limits<S>::infinity();
    for (std::size_t j = 0; j <= i; ++j) mx = std::max(mx, r[j] * scale);
    S total = 0;
    for (std::size_t j = 0; j <= i; ++j) total += (r[j] = std::exp(r[j] * scale - mx));
    for (std::size_t j = 0; j <= i; ++j) r[j] /= total;
    for (std::size_t j = i + 1; j < T; ++j) r[j] = 0;
  }
  return ops::matmul(scores, V);
}

struct SuiteOptions {
  std::size_t d_head = 32;
  std::size_t segment_length = 256;
  std::size_t budget_bytes = 64ull << 20;
  std::uint64_t seed = 0;
};

/// Runs one kind at one length on random inputs under the byte budget.
inline BenchResult run_one(AttentionKind kind, std::size_t length, const SuiteOptions& opt) {
  Rng rng = derive_rng(opt.seed, length);
  const Tensor<double> Q = normal_tensor<double>({length, opt.d_head}, 1.0, rng);
  const Tensor<double> K = normal_tensor<double>({length, opt.d_head}, 1.0, rng);
  const Tensor<double> V = normal_tensor<double>({length, opt.d_head}, 1.0, rng);
  BenchResult r;
  r.kind = kind;
  r.length = length;
  const std::size_t base = memory::live_bytes();
  memory::reset_peak();
  const auto t0 = std::chrono::steady_clock::now();
  try {
    memory::BudgetScope scope(base + opt.budget_bytes);
    Tensor<double> out = kind == AttentionKind::Linear
                             ? attention::attention_head_forward(Q, K, V, opt.segment_length, 0.0, 1e-6)
                             : quadratic_reference_attention(Q, K, V);
    r.completed = out.size() == length * opt.d_head;
  } catch (const memory::BudgetExceeded&) {
    r.completed = false;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.peak_bytes = memory::peak_bytes() - base;
  return r;
}

/// Every length for both kinds, linear first. Lengths must be ascending.
inline std::vector<BenchResult> run_scaling_suite(const std::vector<std::size_t>& lengths,
                                                  const SuiteOptions& opt = {}) {
  for (std::size_t i = 1; i < lengths.size(); ++i)
    if (lengths[i] <= lengths[i - 1]) throw std::invalid_argument("run_scaling_suite: lengths must be ascending");
  std::vector<BenchResult> out;
  for (AttentionKind kind : {AttentionKind::Linear, AttentionKind::Quadratic})
    for (std::size_t T : lengths) out.push_back(run_one(kind, T, opt));
  return out;
}

/// Aligned table: one row per length, peak MB per kind ("OOM" when over budget).
inline std::string format_table(const std::vector<BenchResult>& results) {
  std::vector<std::size_t> lengths;
  for (const auto& r : results)
    if (std::find(lengths.begin(), lengths.end(), r.length) == lengths.end()) lengths.push_back(r.length);
  auto cell = [&](AttentionKind k, std::size_t T) -> std::string {
    for (const auto& r : results)
      if (r.kind == k && r.length == T) {
        if (!r.completed) return "OOM";
        std::ostringstream c;
        c << std::fixed << std::setprecision(3) << static_cast<double>(r.peak_bytes) / (1024.0 * 1024.0);
        return c.str();
      }
    return "-";
  };
  std::ostringstream os;
  os << std::left << std::setw(10) << "Length" << std::right << std::setw(14) << "Linear MB" << std::setw(14)
     << "Quadratic MB" << '\n'
     << std::string(38, '-') << '\n';
  for (std::size_t T : lengths)
    os << std::left << std::setw(10) << T << std::right << std::setw(14) << cell(AttentionKind::Linear, T)
       << std::setw(14) << cell(AttentionKind::Quadratic, T) << '\n';
  return os.str();
}

inline nlohmann::json to_json(const std::vector<BenchResult>& results) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : results)
    rows.push_back({{"kind", to_string(r.kind)},
                    {"length", r.length},
                    {"peak_bytes", r.peak_bytes},
                    {"seconds", r.seconds},
                    {"completed", r.completed}});
  return {{"schema", "basilisk.membench/1"}, {"results", rows}};
}

}  // namespace basilisk::bench
