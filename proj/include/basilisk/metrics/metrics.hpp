#pragma once

#include <algorithm>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace basilisk::metrics {

struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::size_t total() const noexcept { return tp + tn + fp + fn; }
  std::size_t positives() const noexcept { return tp + fn; }
  std::size_t negatives() const noexcept { return tn + fp; }

  void add(int label, int predicted) {
    if (label == 1)
      (predicted == 1 ? tp : fn) += 1;
    else
      (predicted == 1 ? fp : tn) += 1;
  }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

struct MetricsReport {
  std::string group;  // empty for the headline row
  ConfusionCounts counts;
  double accuracy = 0;
  /// nullopt marks a zero denominator (grouped reports only).
  std::optional<double> precision, recall, f1;
  /// nullopt when the group lacks one of the two classes.
  std::optional<double> vd_s;
};

namespace detail {
inline MetricsReport compute(const ConfusionCounts& c, bool undefined_as_zero) {
  if (c.total() == 0) throw std::invalid_argument("basic_metrics: no evaluated samples");
  MetricsReport r;
  r.counts = c;
  r.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  auto ratio = [&](std::size_t num, std::size_t den) -> std::optional<double> {
    if (den == 0) return undefined_as_zero ? std::optional<double>(0.0) : std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  if (r.precision && r.recall) {
    const double s = *r.precision + *r.recall;
    if (s > 0)
      r.f1 = 2.0 * *r.precision * *r.recall / s;
    else if (undefined_as_zero)
      r.f1 = 0.0;
  } else if (undefined_as_zero) {
    r.f1 = 0.0;
  }
  return r;
}
}  // namespace detail

/// Accuracy, precision, recall and F1; zero denominators yield 0.
inline MetricsReport basic_metrics(const ConfusionCounts& c) { return detail::compute(c, true); }

struct VdsResult {
  double fnr = 1.0;
  double fpr = 0.0;
  /// Positive iff score >= threshold; +inf means "predict all negative".
  double threshold = std::numeric_limits<double>::infinity();
};

/// Minimum false-negative rate over score thresholds whose false-positive
/// rate stays within the budget.
inline VdsResult vd_s_detail(std::span<const double> scores, std::span<const int> labels, double fpr_budget = 0.005) {
  if (scores.size() != labels.size()) throw std::invalid_argument("vd_s: scores/labels length mismatch");
  std::size_t pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg) += 1;
  if (pos == 0 || neg == 0) throw std::invalid_argument("vd_s: need at least one positive and one negative label");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  VdsResult best;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
    if (fpr > fpr_budget) break;
    const double fnr = static_cast<double>(pos - tp) / static_cast<double>(pos);
    if (fnr <= best.fnr) best = {fnr, fpr, s};
  }
  return best;
}

inline double vd_s(std::span<const double> scores, std::span<const int> labels, double fpr_budget = 0.005) {
  return vd_s_detail(scores, labels, fpr_budget).fnr;
}

/// One evaluated sample.
struct Prediction {
  int label = 0;
  double score = 0;  // positive-class probability
  int predicted = 0;
  std::optional<std::string> cwe;
  std::size_t length = 0;  // tokens
};

enum class Grouping { Cwe, LengthBin };

inline Grouping parse_grouping(const std::string& s) {
  if (s == "cwe") return Grouping::Cwe;
  if (s == "length" || s == "length_bin") return Grouping::LengthBin;
  throw std::invalid_argument("unknown grouping '" + s + "' (expected cwe or length)");
}

inline const char* to_string(Grouping g) { return g == Grouping::Cwe ? "cwe" : "length_bin"; }

inline constexpr std::size_t kLengthBinEdges[] = {0, 16384, 32768, 65536, 131072};

inline std::string length_bin_label(std::size_t length) {
  constexpr std::size_t n = std::size(kLengthBinEdges);
  for (std::size_t b = 0; b + 1 < n; ++b)
    if (length < kLengthBinEdges[b + 1])
      return std::to_string(kLengthBinEdges[b]) + "-" + std::to_string(kLengthBinEdges[b + 1]);
  return ">=" + std::to_string(kLengthBinEdges[n - 1]);
}

inline ConfusionCounts confusion(std::span<const Prediction> preds) {
  ConfusionCounts c;
  for (const auto& p : preds) c.add(p.label, p.predicted);
  return c;
}

inline std::optional<double> vd_s_if_defined(std::span<const Prediction> preds) {
  std::vector<double> scores;
  std::vector<int> labels;
  bool has_pos = false, has_neg = false;
  for (const auto& p : preds) {
    scores.push_back(p.score);
    labels.push_back(p.label);
    (p.label == 1 ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) return std::nullopt;
  return vd_s(scores, labels);
}

/// Headline metrics (zero denominators as 0) plus VD-S where defined.
inline MetricsReport overall_report(std::span<const Prediction> preds) {
  MetricsReport r = basic_metrics(confusion(preds));
  r.group = "overall";
  r.vd_s = vd_s_if_defined(preds);
  return r;
}

struct GroupedReport {
  Grouping grouping = Grouping::Cwe;
  std::vector<MetricsReport> groups;  // sorted by key (length bins in ascending order)
  MetricsReport overall;
};

inline GroupedReport grouped_report(std::span<const Prediction> preds, Grouping grouping) {
  if (preds.empty()) throw std::invalid_argument("grouped_report: no predictions");
  std::map<std::string, std::vector<Prediction>> groups;
  for (const auto& p : preds) {
    const std::string key = grouping == Grouping::Cwe ? p.cwe.value_or("none") : length_bin_label(p.length);
    groups[key].push_back(p);
  }
  GroupedReport out;
  out.grouping = grouping;
  for (auto& [key, members] : groups) {
    MetricsReport r = detail::compute(confusion(members), false);
    r.group = key;
    r.vd_s = vd_s_if_defined(members);
    out.groups.push_back(std::move(r));
  }
  if (grouping == Grouping::LengthBin) {
    auto lower = [](const std::string& k) -> std::size_t {
      return k.rfind(">=", 0) == 0 ? std::stoull(k.substr(2)) : std::stoull(k.substr(0, k.find('-')));
    };
    std::sort(out.groups.begin(), out.groups.end(),
              [&](const MetricsReport& a, const MetricsReport& b) { return lower(a.group) < lower(b.group); });
  }
  out.overall = overall_report(preds);
  return out;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"group", r.group},
          {"n", r.counts.total()},
          {"tp", r.counts.tp},
          {"tn", r.counts.tn},
          {"fp", r.counts.fp},
          {"fn", r.counts.fn},
          {"accuracy", r.accuracy},
          {"precision", opt(r.precision)},
          {"recall", opt(r.recall)},
          {"f1", opt(r.f1)},
          {"vd_s", opt(r.vd_s)}};
}

/// Report document: {"schema": "basilisk.metrics/1", "grouping": ..., "groups": [...], "overall": {...}}.
inline nlohmann::json to_json(const GroupedReport& g) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : g.groups) rows.push_back(to_json(r));
  return {{"schema", "basilisk.metrics/1"}, {"grouping", to_string(g.grouping)}, {"groups", rows},
          {"overall", to_json(g.overall)}};
}

/// Aligned plain-text table, one row per group followed by the overall row.
inline std::string format_table(std::span<const MetricsReport> rows, const std::string& key_header = "Group") {
  std::size_t key_width = key_header.size();
  for (const auto& r : rows) key_width = std::max(key_width, r.group.size());
  std::ostringstream os;
  auto cell = [&](const std::optional<double>& v) {
    std::ostringstream c;
    if (v)
      c << std::fixed << std::setprecision(4) << *v;
    else
      c << "-";
    return c.str();
  };
  os << std::left << std::setw(static_cast<int>(key_width)) << key_header << std::right << std::setw(8) << "N"
     << std::setw(10) << "Acc" << std::setw(10) << "Prec" << std::setw(10) << "Rec" << std::setw(10) << "F1"
     << std::setw(10) << "VD-S" << '\n';
  os << std::string(key_width + 58, '-') << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(key_width)) << r.group << std::right << std::setw(8)
       << r.counts.total() << std::setw(10) << cell(r.accuracy) << std::setw(10) << cell(r.precision)
       << std::setw(10) << cell(r.recall) << std::setw(10) << cell(r.f1) << std::setw(10) << cell(r.vd_s) << '\n';
  }
  return os.str();
}

inline std::string format_table(const GroupedReport& g) {
  std::vector<MetricsReport> rows = g.groups;
  rows.push_back(g.overall);
  return format_table(rows, g.grouping == Grouping::Cwe ? "CWE" : "Length bin");
}

}  // namespace basilisk::metrics
