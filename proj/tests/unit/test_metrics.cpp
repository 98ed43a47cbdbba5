#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <map>
#include <random>
#include <set>

#include "test_util.hpp"

using namespace basilisk;
using metrics::ConfusionCounts;
using metrics::Prediction;

namespace {

// Exhaustive sweep over "predict positive iff score >= t" for every distinct score and +inf.
double brute_force_vds(const std::vector<double>& scores, const std::vector<int>& labels, double budget = 0.005) {
  std::set<double> thresholds(scores.begin(), scores.end());
  thresholds.insert(std::numeric_limits<double>::infinity());
  double pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg) += 1;
  double best = 1.0;
  for (double t : thresholds) {
    double fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool predicted = scores[i] >= t;
      if (predicted && labels[i] == 0) fp += 1;
      if (!predicted && labels[i] == 1) fn += 1;
    }
    if (fp / neg <= budget) best = std::min(best, fn / pos);
  }
  return best;
}

void random_set(std::mt19937_64& rng, std::size_t n, std::vector<double>& scores, std::vector<int>& labels) {
  std::uniform_int_distribution<int> coarse(0, 20);
  std::uniform_real_distribution<double> u(0, 1);
  scores.assign(n, 0);
  labels.assign(n, 0);
  do {
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = u(rng) < 0.3 ? 1 : 0;
      // Coarse grid forces ties; positives skew high.
      scores[i] = coarse(rng) / 20.0 * 0.7 + (labels[i] ? 0.3 * u(rng) : 0.0);
    }
  } while (std::count(labels.begin(), labels.end(), 1) == 0 || std::count(labels.begin(), labels.end(), 0) == 0);
}

Prediction pred(int label, int predicted, std::string cwe = "CWE-1", std::size_t length = 10, double score = 0.5) {
  Prediction p;
  p.label = label;
  p.predicted = predicted;
  p.cwe = std::move(cwe);
  p.length = length;
  p.score = score;
  return p;
}

}  // namespace

TEST(BasicMetrics, Example) {
  ConfusionCounts c;
  c.tp = 3;
  c.fp = 1;
  c.fn = 2;
  c.tn = 94;
  auto r = metrics::basic_metrics(c);
  EXPECT_DOUBLE_EQ(*r.precision, 0.75);
  EXPECT_DOUBLE_EQ(*r.recall, 0.6);
  EXPECT_NEAR(*r.f1, 2.0 * 0.75 * 0.6 / 1.35, 1e-15);
  EXPECT_NEAR(*r.f1, 0.6667, 5e-5);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.97);
}

TEST(BasicMetrics, SinglePerfectPositive) {
  ConfusionCounts c;
  c.tp = 1;
  auto r = metrics::basic_metrics(c);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(*r.precision, 1.0);
  EXPECT_EQ(*r.recall, 1.0);
  EXPECT_EQ(*r.f1, 1.0);
}

TEST(BasicMetrics, AllNegativePredictionsGiveZero) {
  ConfusionCounts c;
  c.fn = 4;
  c.tn = 6;
  auto r = metrics::basic_metrics(c);
  EXPECT_EQ(*r.recall, 0.0);
  EXPECT_EQ(*r.precision, 0.0);
  EXPECT_EQ(*r.f1, 0.0);
  EXPECT_THROW(metrics::basic_metrics(ConfusionCounts{}), std::invalid_argument);
}

TEST(BasicMetrics, MatchesIndependentRecomputation) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> d(0, 50);
  for (int trial = 0; trial < 1000; ++trial) {
    ConfusionCounts c;
    c.tp = d(rng);
    c.tn = d(rng);
    c.fp = d(rng);
    c.fn = d(rng);
    if (c.total() == 0) c.tn = 1;
    auto r = metrics::basic_metrics(c);
    const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn), fp = static_cast<double>(c.fp),
                 fn = static_cast<double>(c.fn);
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0, rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f1 = p + rec > 0 ? 2 * p * rec / (p + rec) : 0.0;
    ASSERT_NEAR(r.accuracy, (tp + tn) / (tp + tn + fp + fn), 1e-15);
    ASSERT_NEAR(*r.precision, p, 1e-15);
    ASSERT_NEAR(*r.recall, rec, 1e-15);
    ASSERT_NEAR(*r.f1, f1, 1e-15);
    for (double v : {r.accuracy, *r.precision, *r.recall, *r.f1}) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(VdS, MatchesBruteForceOn200Sets) {
  std::mt19937_64 rng(2024);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int trial = 0; trial < 200; ++trial) {
    random_set(rng, 100, scores, labels);
    ASSERT_EQ(metrics::vd_s(scores, labels), brute_force_vds(scores, labels)) << "trial " << trial;
  }
}

TEST(VdS, LargerBudgetsMatchBruteForce) {
  std::mt19937_64 rng(7);
  std::vector<double> scores;
  std::vector<int> labels;
  for (double budget : {0.0, 0.02, 0.1, 0.5}) {
    for (int trial = 0; trial < 50; ++trial) {
      random_set(rng, 60, scores, labels);
      ASSERT_EQ(metrics::vd_s(scores, labels, budget), brute_force_vds(scores, labels, budget));
    }
  }
}

TEST(VdS, DegenerateCases) {
  std::vector<double> sep{0.9, 0.8, 0.7, 0.2, 0.1};
  std::vector<int> sep_labels{1, 1, 1, 0, 0};
  EXPECT_EQ(metrics::vd_s(sep, sep_labels), 0.0);
  std::vector<double> flat(10, 0.4);
  std::vector<int> mixed{1, 0, 1, 0, 0, 0, 1, 0, 0, 0};
  EXPECT_EQ(metrics::vd_s(flat, mixed), 1.0);
  std::vector<int> single(5, 1);
  EXPECT_THROW(metrics::vd_s(sep, single), std::invalid_argument);
}

TEST(VdS, TiesPreferLowerThreshold) {
  std::vector<double> scores{0.9, 0.5, 0.2, 0.1};
  std::vector<int> labels{1, 0, 0, 1};
  auto d = metrics::vd_s_detail(scores, labels, 0.5);
  EXPECT_EQ(d.fnr, 0.5);
  EXPECT_EQ(d.threshold, 0.5);
  std::vector<double> s2{0.9, 0.9, 0.5, 0.1};
  std::vector<int> l2{1, 1, 0, 0};
  auto e = metrics::vd_s_detail(s2, l2);
  EXPECT_EQ(e.fnr, 0.0);
  EXPECT_EQ(e.threshold, 0.9);
}

TEST(VdS, MonotoneUnderAddedCorrectPositive) {
  std::mt19937_64 rng(99);
  std::vector<double> scores;
  std::vector<int> labels;
  for (int trial = 0; trial < 200; ++trial) {
    random_set(rng, 80, scores, labels);
    const double before = metrics::vd_s(scores, labels);
    double top_negative = -1;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (labels[i] == 0) top_negative = std::max(top_negative, scores[i]);
    scores.push_back(top_negative + 0.5);
    labels.push_back(1);
    const double after = metrics::vd_s(scores, labels);
    ASSERT_LE(after, before) << "trial " << trial;
    ASSERT_EQ(after, brute_force_vds(scores, labels));
  }
}

TEST(GroupedReport, PartitionSumsToOverall) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> bit(0, 1), cwe(0, 4);
  std::uniform_int_distribution<std::size_t> len(1, 200000);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Prediction> preds;
    for (int i = 0; i < 300; ++i)
      preds.push_back(pred(bit(rng), bit(rng), "CWE-" + std::to_string(cwe(rng)), len(rng), 0.3));
    for (auto g : {metrics::Grouping::Cwe, metrics::Grouping::LengthBin}) {
      auto rep = metrics::grouped_report(preds, g);
      ConfusionCounts sum;
      std::size_t n = 0;
      for (const auto& r : rep.groups) {
        sum += r.counts;
        n += r.counts.total();
      }
      EXPECT_EQ(sum, rep.overall.counts);
      EXPECT_EQ(n, preds.size());
    }
  }
}

TEST(GroupedReport, ThreeCweHandComputed) {
  std::vector<Prediction> preds;
  // CWE-119: TP 2, FP 1, FN 1, TN 1.
  for (auto [l, p] : {std::pair{1, 1}, {1, 1}, {0, 1}, {1, 0}, {0, 0}}) preds.push_back(pred(l, p, "CWE-119"));
  // CWE-787: TP 1, TN 3.
  for (auto [l, p] : {std::pair{1, 1}, {0, 0}, {0, 0}, {0, 0}}) preds.push_back(pred(l, p, "CWE-787"));
  // CWE-20: negatives only, FP 1, TN 2.
  for (auto [l, p] : {std::pair{0, 1}, {0, 0}, {0, 0}}) preds.push_back(pred(l, p, "CWE-20"));
  auto rep = metrics::grouped_report(preds, metrics::Grouping::Cwe);
  ASSERT_EQ(rep.groups.size(), 3u);
  std::map<std::string, metrics::MetricsReport> by;
  for (const auto& r : rep.groups) by[r.group] = r;
  const auto& a = by.at("CWE-119");
  EXPECT_DOUBLE_EQ(a.accuracy, 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(*a.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*a.recall, 2.0 / 3.0);
  EXPECT_NEAR(*a.f1, 2.0 / 3.0, 1e-15);
  const auto& b = by.at("CWE-787");
  EXPECT_DOUBLE_EQ(b.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(*b.precision, 1.0);
  EXPECT_DOUBLE_EQ(*b.recall, 1.0);
  const auto& c = by.at("CWE-20");
  EXPECT_DOUBLE_EQ(c.accuracy, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(*c.precision, 0.0);
  EXPECT_FALSE(c.recall.has_value());
  EXPECT_FALSE(c.f1.has_value());
  EXPECT_FALSE(c.vd_s.has_value());
  EXPECT_EQ(rep.overall.counts.tp, 3u);
  EXPECT_EQ(rep.overall.counts.fp, 2u);
  EXPECT_EQ(rep.overall.counts.fn, 1u);
  EXPECT_EQ(rep.overall.counts.tn, 6u);
}

TEST(GroupedReport, SingleBinEqualsOverall) {
  std::vector<Prediction> preds;
  for (int i = 0; i < 40; ++i) preds.push_back(pred(i % 3 == 0, i % 2, "CWE-1", 100 + i, i / 40.0));
  auto rep = metrics::grouped_report(preds, metrics::Grouping::LengthBin);
  ASSERT_EQ(rep.groups.size(), 1u);
  EXPECT_EQ(rep.groups[0].group, "0-16384");
  EXPECT_EQ(rep.groups[0].counts, rep.overall.counts);
  EXPECT_EQ(*rep.groups[0].f1, *rep.overall.f1);
  EXPECT_EQ(*rep.groups[0].vd_s, *rep.overall.vd_s);
}

TEST(GroupedReport, LengthBinEdges) {
  EXPECT_EQ(metrics::length_bin_label(0), "0-16384");
  EXPECT_EQ(metrics::length_bin_label(16383), "0-16384");
  EXPECT_EQ(metrics::length_bin_label(16384), "16384-32768");
  EXPECT_EQ(metrics::length_bin_label(65535), "32768-65536");
  EXPECT_EQ(metrics::length_bin_label(131071), "65536-131072");
  EXPECT_EQ(metrics::length_bin_label(131072), ">=131072");
  std::vector<Prediction> preds{pred(1, 1, "a", 70000), pred(0, 0, "a", 5), pred(1, 0, "a", 20000)};
  auto rep = metrics::grouped_report(preds, metrics::Grouping::LengthBin);
  ASSERT_EQ(rep.groups.size(), 3u);
  EXPECT_EQ(rep.groups[0].group, "0-16384");
  EXPECT_EQ(rep.groups[1].group, "16384-32768");
  EXPECT_EQ(rep.groups[2].group, "65536-131072");
}

TEST(GroupedReport, UnknownGroupingAndEmpty) {
  EXPECT_THROW(metrics::parse_grouping("file"), std::invalid_argument);
  EXPECT_EQ(metrics::parse_grouping("cwe"), metrics::Grouping::Cwe);
  EXPECT_EQ(metrics::parse_grouping("length"), metrics::Grouping::LengthBin);
  EXPECT_THROW(metrics::grouped_report({}, metrics::Grouping::Cwe), std::invalid_argument);
}

TEST(GroupedReport, JsonSchemaAndTable) {
  std::vector<Prediction> preds{pred(1, 1, "CWE-1", 1, 0.9), pred(0, 0, "CWE-2", 1, 0.1)};
  auto rep = metrics::grouped_report(preds, metrics::Grouping::Cwe);
  auto j = metrics::to_json(rep);
  EXPECT_EQ(j["schema"], "basilisk.metrics/1");
  EXPECT_EQ(j["grouping"], "cwe");
  ASSERT_EQ(j["groups"].size(), 2u);
  EXPECT_TRUE(j["groups"][1]["recall"].is_null());
  EXPECT_EQ(j["overall"]["n"], 2);
  EXPECT_EQ(j["overall"]["vd_s"], 0.0);
  auto table = metrics::format_table(rep);
  EXPECT_NE(table.find("CWE-1"), std::string::npos);
  EXPECT_NE(table.find("overall"), std::string::npos);
}
