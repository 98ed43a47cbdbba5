#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

using namespace basilisk;
using test_util::random;
using State = attention::CompressiveMemoryState<double>;

namespace {

constexpr double kEps = 1e-6;

double sigmoid(double x) { return 1 / (1 + std::exp(-x)); }
double sigma(double x) { return x > 0 ? x + 1 : std::exp(x); }

// softmax(q_i . k_j / sqrt(d)) over j <= i, written with explicit loops.
Tensor<double> naive_causal_attention(const Tensor<double>& Q, const Tensor<double>& K, const Tensor<double>& V) {
  const std::size_t T = Q.rows(), d = Q.cols();
  Tensor<double> out = Tensor<double>::zeros(T, V.cols());
  for (std::size_t i = 0; i < T; ++i) {
    std::vector<double> w(i + 1);
    double mx = -1e300, z = 0;
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += Q(i, c) * K(j, c);
      w[j] = s / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, w[j]);
    }
    for (auto& v : w) z += (v = std::exp(v - mx));
    for (std::size_t j = 0; j <= i; ++j)
      for (std::size_t c = 0; c < V.cols(); ++c) out(i, c) += w[j] / z * V(j, c);
  }
  return out;
}

Tensor<double> rows(const Tensor<double>& x, std::size_t r0, std::size_t r1) {
  Tensor<double> y = Tensor<double>::zeros(r1 - r0, x.cols());
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) y(i - r0, j) = x(i, j);
  return y;
}

// Segment-by-segment reference with memory read before each segment's write.
Tensor<double> reference_head(const Tensor<double>& Q, const Tensor<double>& K, const Tensor<double>& V,
                              std::size_t L, double beta, State* final_state = nullptr) {
  const std::size_t T = Q.rows(), d = Q.cols();
  const double g = sigmoid(beta);
  std::vector<double> M(d * d, 0.0), z(d, 0.0);
  Tensor<double> out = Tensor<double>::zeros(T, d);
  for (std::size_t r0 = 0; r0 < T; r0 += L) {
    const std::size_t r1 = std::min(T, r0 + L);
    auto dot = naive_causal_attention(rows(Q, r0, r1), rows(K, r0, r1), rows(V, r0, r1));
    for (std::size_t i = r0; i < r1; ++i) {
      double den = kEps;
      for (std::size_t a = 0; a < d; ++a) den += sigma(Q(i, a)) * z[a];
      for (std::size_t c = 0; c < d; ++c) {
        double num = 0;
        for (std::size_t a = 0; a < d; ++a) num += sigma(Q(i, a)) * M[a * d + c];
        out(i, c) = g * num / den + (1 - g) * dot(i - r0, c);
      }
    }
    for (std::size_t i = r0; i < r1; ++i)
      for (std::size_t a = 0; a < d; ++a) {
        z[a] += sigma(K(i, a));
        for (std::size_t c = 0; c < d; ++c) M[a * d + c] += sigma(K(i, a)) * V(i, c);
      }
  }
  if (final_state) {
    *final_state = State::zero(d);
    for (std::size_t i = 0; i < d * d; ++i) final_state->M[i] = M[i];
    for (std::size_t i = 0; i < d; ++i) final_state->z[i] = z[i];
  }
  return out;
}

}  // namespace

TEST(SegmentDot, SingleTokenReturnsValue) {
  auto q = random(1, 4, 1), k = random(1, 4, 2), v = random(1, 4, 3);
  auto y = attention::segment_dot_attention(q, k, v);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[i], v[i]);
}

TEST(SegmentDot, LengthOneSegmentsReturnValues) {
  auto Q = random(6, 3, 1), K = random(6, 3, 2), V = random(6, 3, 3);
  auto y = attention::attention_head_forward(Q, K, V, 1, 0.0, kEps, false);
  for (std::size_t i = 0; i < V.size(); ++i) EXPECT_NEAR(y[i], V[i], 1e-15);
}

TEST(SegmentDot, IdenticalKeysGiveRunningMean) {
  auto Q = random(5, 2, 1);
  Tensor<double> K = Tensor<double>::filled(5, 2, 0.7);
  auto V = random(5, 3, 2);
  auto y = attention::segment_dot_attention(Q, K, V);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0;
      for (std::size_t j = 0; j <= i; ++j) mean += V(j, c);
      EXPECT_NEAR(y(i, c), mean / static_cast<double>(i + 1), 1e-14);
    }
}

TEST(SegmentDot, MatchesHandOracle3x2) {
  Tensor<double> Q({3, 2}, {0.1, -0.4, 1.2, 0.3, -0.7, 0.8});
  Tensor<double> K({3, 2}, {0.5, 0.5, -1.0, 2.0, 0.25, -0.3});
  Tensor<double> V({3, 2}, {1.0, 2.0, -3.0, 0.5, 4.0, -1.0});
  auto y = attention::segment_dot_attention(Q, K, V);
  auto ref = naive_causal_attention(Q, K, V);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(y[i], ref[i], 1e-10);
  // Row 0 sees only key 0.
  EXPECT_NEAR(y(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(y(0, 1), 2.0, 1e-15);
}

TEST(MemoryRetrieve, ZeroStateGivesZero) {
  auto y = attention::memory_retrieve(random(4, 3, 1, -3, 3), State::zero(3), kEps);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(MemoryRetrieve, ScalarExample) {
  State s = State::zero(1);
  s.M[0] = 5.0;
  s.z[0] = 1.0;
  Tensor<double> q({1, 1}, {0.0});
  auto y = attention::memory_retrieve(q, s, kEps);
  EXPECT_NEAR(y[0], 5.0 / (1.0 + kEps), 1e-15);
}

TEST(MemoryUpdate, ZeroKeysOnesValues) {
  auto s = attention::memory_update(State::zero(2), Tensor<double>::zeros(3, 2), Tensor<double>::filled(3, 2, 1.0));
  for (double v : s.M.values()) EXPECT_DOUBLE_EQ(v, 3.0);
  for (double v : s.z.values()) EXPECT_DOUBLE_EQ(v, 3.0);
}

TEST(MemoryUpdate, EmptySegmentIsIdentity) {
  State s = State::zero(2);
  s.M = random(2, 2, 1);
  s.z = random(1, 2, 2, 0.1, 1);
  auto n = attention::memory_update(s, Tensor<double>::zeros(0, 2), Tensor<double>::zeros(0, 2));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(n.M[i], s.M[i]);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(n.z[i], s.z[i]);
}

TEST(MemoryUpdate, Additive) {
  auto K1 = random(4, 3, 1, -2, 2), V1 = random(4, 3, 2), K2 = random(5, 3, 3, -2, 2), V2 = random(5, 3, 4);
  auto two_step = attention::memory_update(attention::memory_update(State::zero(3), K1, V1), K2, V2);
  Tensor<double> K = Tensor<double>::zeros(9, 3), V = Tensor<double>::zeros(9, 3);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      K(i, j) = i < 4 ? K1(i, j) : K2(i - 4, j);
      V(i, j) = i < 4 ? V1(i, j) : V2(i - 4, j);
    }
  auto one_step = attention::memory_update(State::zero(3), K, V);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(two_step.M[i], one_step.M[i], 1e-12);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(two_step.z[i], one_step.z[i], 1e-12);
}

TEST(AttentionHead, MatchesSegmentReference) {
  auto Q = random(11, 3, 1), K = random(11, 3, 2), V = random(11, 3, 3);
  for (std::size_t L : {1u, 3u, 4u, 11u, 20u}) {
    State got, want;
    auto y = attention::attention_head_forward(Q, K, V, L, 0.4, kEps, true, &got);
    auto ref = reference_head(Q, K, V, L, 0.4, &want);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12) << "L=" << L;
    for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(got.M[i], want.M[i], 1e-12);
  }
}

TEST(AttentionHead, SingleSegmentIsScaledDotPath) {
  auto Q = random(6, 4, 1), K = random(6, 4, 2), V = random(6, 4, 3);
  const double beta = 0.8;
  auto y = attention::attention_head_forward(Q, K, V, 8, beta, kEps);
  auto dot = naive_causal_attention(Q, K, V);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], (1 - sigmoid(beta)) * dot[i], 1e-12);
}

TEST(AttentionHead, VeryNegativeGateIsPureDotPath) {
  auto Q = random(10, 3, 1), K = random(10, 3, 2), V = random(10, 3, 3);
  auto y = attention::attention_head_forward(Q, K, V, 3, -60.0, kEps);
  auto off = attention::attention_head_forward(Q, K, V, 3, 0.0, kEps, false);
  for (std::size_t r0 = 0; r0 < 10; r0 += 3) {
    const std::size_t r1 = std::min<std::size_t>(10, r0 + 3);
    auto dot = naive_causal_attention(rows(Q, r0, r1), rows(K, r0, r1), rows(V, r0, r1));
    for (std::size_t i = r0; i < r1; ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_NEAR(y(i, c), dot(i - r0, c), 1e-12);
        EXPECT_NEAR(off(i, c), dot(i - r0, c), 1e-12);
      }
  }
}

TEST(AttentionHead, FinalMemoryIndependentOfSegmentLength) {
  auto Q = random(64, 4, 1), K = random(64, 4, 2), V = random(64, 4, 3);
  State ref;
  attention::attention_head_forward(Q, K, V, 64, 0.0, kEps, true, &ref);
  for (std::size_t L : {1u, 5u, 16u, 32u}) {
    State s;
    attention::attention_head_forward(Q, K, V, L, 0.0, kEps, true, &s);
    for (std::size_t i = 0; i < ref.M.size(); ++i) EXPECT_NEAR(s.M[i], ref.M[i], 1e-5);
    for (std::size_t i = 0; i < ref.z.size(); ++i) EXPECT_NEAR(s.z[i], ref.z[i], 1e-5);
  }
}

TEST(AttentionHead, NormalizerIsMonotone) {
  auto K = random(40, 3, 1, -6, 6), V = random(40, 3, 2);
  State s = State::zero(3);
  for (std::size_t r0 = 0; r0 < 40; r0 += 4) {
    auto next = attention::memory_update(s, rows(K, r0, r0 + 4), rows(V, r0, r0 + 4));
    for (std::size_t j = 0; j < 3; ++j) EXPECT_GT(next.z[j], s.z[j]);
    s = next;
  }
}

TEST(AttentionHead, SegmentsAreCausal) {
  auto Q = random(12, 3, 1), K = random(12, 3, 2), V = random(12, 3, 3);
  auto base = attention::attention_head_forward(Q, K, V, 4, 0.3, kEps);
  auto K2 = K, V2 = V, Q2 = Q;
  for (std::size_t j = 0; j < 3; ++j) {
    K2(8, j) += 1;
    V2(8, j) -= 2;
    Q2(8, j) += 0.5;
  }
  auto y = attention::attention_head_forward(Q2, K2, V2, 4, 0.3, kEps);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(y(i, c), base(i, c));
}

namespace {

attention::AttentionConfig small_attention(std::size_t L, bool memory = true) {
  attention::AttentionConfig c;
  c.d_model = 4;
  c.n_heads = 2;
  c.segment_length = L;
  c.memory_enabled = memory;
  return c;
}

}  // namespace

TEST(WbAttention, MatchesPerHeadComposition) {
  ParameterStore<double> store;
  Rng rng(4);
  auto p = attention::make_attention(store, "a", small_attention(3), rng);
  p.beta->value[0] = -0.5;
  p.beta->value[1] = 1.5;
  auto x = random(8, 4, 5);
  std::vector<State> states;
  auto y = attention::wb_attention_forward(x, p, &states);
  auto Q = ops::matmul_nt(x, p.wq->value), K = ops::matmul_nt(x, p.wk->value), V = ops::matmul_nt(x, p.wv->value);
  Tensor<double> merged = Tensor<double>::zeros(8, 4);
  for (std::size_t h = 0; h < 2; ++h) {
    Tensor<double> qh = Tensor<double>::zeros(8, 2), kh = qh, vh = qh;
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t c = 0; c < 2; ++c) {
        qh(i, c) = Q(i, 2 * h + c);
        kh(i, c) = K(i, 2 * h + c);
        vh(i, c) = V(i, 2 * h + c);
      }
    State want;
    auto oh = reference_head(qh, kh, vh, 3, p.beta->value[h], &want);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t c = 0; c < 2; ++c) merged(i, 2 * h + c) = oh(i, c);
    ASSERT_EQ(states.size(), 2u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(states[h].M[i], want.M[i], 1e-12);
  }
  auto expect = ops::matmul_nt(merged, p.wo->value);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], expect[i], 1e-12);
}

TEST(WbAttention, GradientCheck) {
  for (std::size_t T : {1u, 5u, 12u}) {
    ParameterStore<double> store;
    Rng rng(T);
    auto p = attention::make_attention(store, "a", small_attention(4), rng);
    p.beta->value[0] = 0.3;
    p.beta->value[1] = -0.7;
    const auto x = random(T, 4, 10 + T);
    EXPECT_LT(test_util::gradient_error(
                  [&](Tape<double>& t, const std::vector<Var<double>>& v) {
                    return test_util::probe_sum(attention::wb_attention_forward(t, v[0], p));
                  },
                  {x}),
              1e-4)
        << "T=" << T;
    EXPECT_LT(test_util::parameter_gradient_error(store,
                                                  [&](Tape<double>& t) {
                                                    return test_util::probe_sum(
                                                        attention::wb_attention_forward(t, t.constant(x), p));
                                                  }),
              1e-4)
        << "T=" << T;
  }
}

TEST(WbAttention, MemoryDisabledIgnoresBeta) {
  ParameterStore<double> store;
  Rng rng(2);
  auto p = attention::make_attention(store, "a", small_attention(3, false), rng);
  auto x = random(9, 4, 1);
  auto y0 = attention::wb_attention_forward(x, p);
  p.beta->value.fill(5.0);
  auto y1 = attention::wb_attention_forward(x, p);
  for (std::size_t i = 0; i < y0.size(); ++i) EXPECT_EQ(y0[i], y1[i]);
}

TEST(WbAttention, ConfigValidation) {
  auto c = small_attention(4);
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_attention(0);
  EXPECT_THROW(c.validate(), std::invalid_argument);
}
