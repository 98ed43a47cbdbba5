#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"

using namespace basilisk;
using test_util::gradient_error;
using test_util::probe_sum;
using test_util::random;
using V = Var<double>;
using Vs = std::vector<V>;

TEST(Softmax, UniformPair) {
  Tensor<double> x({1, 2}, {0.0, 0.0});
  auto y = ops::softmax_rows(x);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  Tensor<double> x({1, 2}, {1e9, 0.0});
  auto y = ops::softmax_rows(x);
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 0.0, 1e-12);
}

TEST(Softmax, ThreeValues) {
  Tensor<double> x({1, 3}, {1.0, 2.0, 3.0});
  auto y = ops::softmax_rows(x);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(y[0], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(y[1], std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(y[2], std::exp(3.0) / z, 1e-15);
  EXPECT_NEAR(y[0], 0.0900, 5e-5);
  EXPECT_NEAR(y[1], 0.2447, 5e-5);
  EXPECT_NEAR(y[2], 0.6652, 5e-5);
}

TEST(Softmax, RowsSumToOneOverWideRange) {
  Rng rng(3);
  std::uniform_real_distribution<double> mag(-9.0, 9.0);
  Tensor<double> x({50, 7});
  for (auto& v : x.values()) v = std::copysign(std::pow(10.0, mag(rng)), mag(rng));
  auto y = ops::softmax_rows(x);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < y.cols(); ++j) {
      EXPECT_GE(y(i, j), 0.0);
      s += y(i, j);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, RejectsNonFinite) {
  Tensor<double> x({1, 2}, {std::numeric_limits<double>::quiet_NaN(), 0.0});
  EXPECT_THROW(ops::softmax_rows(x), NumericError);
  Tensor<double> y({1, 2}, {std::numeric_limits<double>::infinity(), 0.0});
  EXPECT_THROW(ops::softmax_rows(y), NumericError);
}

TEST(EluPlusOne, Examples) {
  EXPECT_DOUBLE_EQ(ops::elu_plus_one(0.0), 1.0);
  EXPECT_DOUBLE_EQ(ops::elu_plus_one(3.0), 4.0);
  EXPECT_NEAR(ops::elu_plus_one(-1.0), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(ops::elu_plus_one(-1.0), 0.3679, 5e-5);
}

TEST(EluPlusOne, StrictlyPositive) {
  for (double x : {-700.0, -50.0, -1e-3, 0.0, 1e-3, 10.0, 1e6}) EXPECT_GT(ops::elu_plus_one(x), 0.0) << x;
  auto t = ops::elu_plus_one(random(8, 8, 1, -30, 30));
  for (double v : t.values()) EXPECT_GT(v, 0.0);
}

TEST(FiniteDiff, Square) {
  Tensor<double> x({1, 1}, {3.0});
  auto g = finite_diff_gradient<double>([](const Tensor<double>& t) { return t[0] * t[0]; }, x, 1e-5);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDiff, SumIsAllOnes) {
  auto x = random(3, 4, 7);
  auto g = finite_diff_gradient<double>(
      [](const Tensor<double>& t) {
        double s = 0;
        for (double v : t.values()) s += v;
        return s;
      },
      x, 1e-5);
  for (double v : g.values()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDiff, NonFiniteNamesCoordinate) {
  Tensor<double> x({1, 3}, {1.0, 1e-7, 2.0});
  auto f = [](const Tensor<double>& t) { return std::log(t[1]); };
  try {
    finite_diff_gradient<double>(f, x, 1e-5);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("coordinate 1"), std::string::npos) << e.what();
  }
}

TEST(FiniteDiff, RejectsNonPositiveEps) {
  Tensor<double> x({1, 1}, {1.0});
  EXPECT_THROW(finite_diff_gradient<double>([](const Tensor<double>& t) { return t[0]; }, x, 0.0),
               std::invalid_argument);
}

// Every differentiable op against central differences on randomized shapes up to 8x8.
class OpGradient : public ::testing::TestWithParam<int> {
 protected:
  std::size_t rows() const { return 1 + static_cast<std::size_t>(GetParam() * 5 % 8); }
  std::size_t cols() const { return 1 + static_cast<std::size_t>(GetParam() * 3 % 8); }
  std::uint64_t seed() const { return 100 + static_cast<std::uint64_t>(GetParam()); }
};

TEST_P(OpGradient, Elementwise) {
  const std::size_t m = rows(), n = cols();
  auto a = random(m, n, seed()), b = random(m, n, seed() + 1);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::add(v[0], v[1])); }, {a, b}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::sub(v[0], v[1])); }, {a, b}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::mul(v[0], v[1])); }, {a, b}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::scale(v[0], 1.7)); }, {a}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::elu_plus_one(v[0])); }, {a}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::sigmoid(v[0])); }, {a}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::silu(v[0])); }, {a}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::gelu(v[0])); }, {a}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::softplus(v[0])); }, {a}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::neg_exp(v[0])); }, {a}), 1e-4);
}

TEST_P(OpGradient, RowBroadcasts) {
  const std::size_t m = rows(), n = cols();
  auto x = random(m, n, seed()), r = random(1, n, seed() + 2);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::add_row(v[0], v[1])); }, {x, r}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::mul_row(v[0], v[1])); }, {x, r}), 1e-4);
  auto c = random(m, 1, seed() + 3);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::mul_col(v[0], v[1])); }, {x, c}), 1e-4);
  auto den = random(m, 1, seed() + 4, 0.5, 2.0);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::div_col(v[0], v[1], 1e-6)); }, {x, den}),
            1e-4);
}

TEST_P(OpGradient, Matmuls) {
  const std::size_t m = rows(), n = cols(), k = 1 + (static_cast<std::size_t>(GetParam()) % 5);
  auto a = random(m, k, seed()), b = random(k, n, seed() + 1);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::matmul(v[0], v[1])); }, {a, b}), 1e-4);
  auto bt = random(n, k, seed() + 2);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::matmul_nt(v[0], v[1])); }, {a, bt}), 1e-4);
  auto at = random(k, m, seed() + 3);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::matmul_tn(v[0], v[1])); }, {at, b}), 1e-4);
  auto w = random(n, k, seed() + 4), bias = random(1, n, seed() + 5);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::linear(v[0], v[1], v[2])); }, {a, w, bias}),
            1e-4);
}

TEST_P(OpGradient, ReductionsAndNormalization) {
  const std::size_t m = rows(), n = cols();
  auto x = random(m, n, seed(), -3, 3);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return ad::sum(v[0]); }, {x}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::sum_rows(v[0])); }, {x}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::mean_rows(v[0])); }, {x}), 1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::softmax_rows(v[0])); }, {x}), 1e-4);
  auto sq = random(m, m, seed() + 1, -3, 3);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::causal_softmax_rows(v[0])); }, {sq}), 1e-4);
  if (n >= 2) {
    auto g = random(1, n, seed() + 2, 0.5, 1.5), b = random(1, n, seed() + 3);
    EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::layer_norm_rows(v[0], v[1], v[2])); },
                             {x, g, b}),
              1e-4);
  }
}

TEST_P(OpGradient, Indexing) {
  const std::size_t m = rows(), n = cols();
  auto x = random(m, n, seed()), y = random(m, n, seed() + 1);
  EXPECT_LT(gradient_error([m](auto&, const Vs& v) { return probe_sum(ad::slice_rows(v[0], m / 2, m)); }, {x}), 1e-4);
  EXPECT_LT(gradient_error([n](auto&, const Vs& v) { return probe_sum(ad::slice_cols(v[0], 0, (n + 1) / 2)); }, {x}),
            1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::concat_rows<double>({v[0], v[1]})); }, {x, y}),
            1e-4);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::concat_cols<double>({v[0], v[1]})); }, {x, y}),
            1e-4);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m + 2; ++i) idx.push_back((i * 3) % m);
  EXPECT_LT(gradient_error([idx](auto&, const Vs& v) { return probe_sum(ad::gather_rows(v[0], idx)); }, {x}), 1e-4);
  std::vector<std::size_t> cols_idx;
  for (std::size_t i = 0; i < m; ++i) cols_idx.push_back(i % n);
  EXPECT_LT(
      gradient_error([cols_idx](auto&, const Vs& v) { return probe_sum(ad::gather_cols_per_row(v[0], cols_idx, 1)); },
                     {x}),
      1e-4);
  EXPECT_LT(gradient_error(
                [m, n](auto& t, const Vs& v) {
                  std::vector<std::size_t> r0{0}, r1;
                  for (std::size_t i = 0; i < m; ++i) r1.push_back(m - 1 - i);
                  return probe_sum(ad::scatter_add_rows<double>({{ad::slice_rows(v[0], 0, 1), r0}, {v[1], r1}}, t, m, n));
                },
                {x, y}),
            1e-4);
}

TEST_P(OpGradient, GateAndLosses) {
  const std::size_t m = rows(), n = cols();
  auto a = random(m, n, seed()), b = random(m, n, seed() + 1), beta = random(1, 1, seed() + 2, -2, 2);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return probe_sum(ad::gate_mix(v[0], v[1], v[2])); }, {a, b, beta}),
            1e-4);
  const std::size_t c = std::max<std::size_t>(n, 2);
  auto logits = random(m, c, seed() + 3, -2, 2);
  std::vector<std::size_t> targets;
  std::vector<double> weights;
  for (std::size_t i = 0; i < m; ++i) {
    targets.push_back(i % c);
    weights.push_back(0.5 + static_cast<double>(i));
  }
  EXPECT_LT(gradient_error([&](auto&, const Vs& v) { return ad::cross_entropy_rows(v[0], targets, weights); }, {logits}),
            1e-4);
  auto other = random(m, c, seed() + 4, -2, 2);
  EXPECT_LT(gradient_error([](auto&, const Vs& v) { return ad::symmetric_kl_rows(v[0], v[1]); }, {logits, other}), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, OpGradient, ::testing::Range(0, 6));

TEST(Tape, ParameterGradientsHaveParameterShape) {
  ParameterStore<double> store;
  auto& w = store.add("w", random(3, 4, 1));
  auto& b = store.add("b", random(1, 3, 2), false);
  Tape<double> tape;
  V x = tape.constant(random(5, 4, 3));
  tape.backward(probe_sum(ad::linear(x, tape.parameter(w), tape.parameter(b))));
  EXPECT_EQ(w.grad.shape(), w.value.shape());
  EXPECT_EQ(b.grad.shape(), b.value.shape());
  EXPECT_FALSE(b.decay);
}

TEST(Tape, RepeatedParameterUseAccumulates) {
  ParameterStore<double> store;
  auto& w = store.add("w", Tensor<double>({1, 1}, {2.0}));
  Tape<double> tape;
  V p = tape.parameter(w);
  tape.backward(ad::sum(ad::mul(p, tape.parameter(w))));  // w^2
  EXPECT_DOUBLE_EQ(w.grad[0], 4.0);
}

TEST(Tape, BackwardWithoutParameterAccumulation) {
  ParameterStore<double> store;
  auto& w = store.add("w", Tensor<double>({1, 1}, {3.0}));
  Tape<double> tape;
  V x = tape.watch(Tensor<double>({1, 1}, {2.0}));
  tape.backward(ad::sum(ad::mul(x, tape.parameter(w))), 1.0, false);
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 3.0);
  EXPECT_EQ(w.grad.size(), 0u);
}

TEST(Tape, RejectsNonScalarLoss) {
  Tape<double> tape;
  V x = tape.watch(random(2, 2, 1));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Tensor, ShapeErrors) {
  EXPECT_THROW(ops::matmul(random(2, 3, 1), random(2, 3, 2)), ShapeError);
  Tape<double> tape;
  EXPECT_THROW(ad::add(tape.constant(random(2, 3, 1)), tape.constant(random(3, 2, 1))), ShapeError);
}

TEST(Tensor, FloatAndDoubleAgree) {
  auto a = random(4, 5, 1), b = random(5, 3, 2);
  auto d = ops::matmul(a, b);
  auto f = ops::matmul(a.cast<float>(), b.cast<float>());
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(static_cast<double>(f[i]), d[i], 1e-5);
}

TEST(Memory, TracksLiveAndPeakBytes) {
  const std::size_t base = memory::live_bytes();
  memory::reset_peak();
  {
    Tensor<double> t({100, 10});
    EXPECT_EQ(memory::live_bytes(), base + 8000);
  }
  EXPECT_EQ(memory::live_bytes(), base);
  EXPECT_GE(memory::peak_bytes(), base + 8000);
}

TEST(Memory, BudgetThrows) {
  const std::size_t base = memory::live_bytes();
  memory::BudgetScope scope(base + 1000);
  EXPECT_THROW(Tensor<double>({200, 1}), memory::BudgetExceeded);
  EXPECT_NO_THROW(Tensor<double>({100, 1}));
}

TEST(Parameters, RejectsDuplicateNames) {
  ParameterStore<double> store;
  store.add("w", random(1, 1, 1));
  EXPECT_THROW(store.add("w", random(1, 1, 1)), std::invalid_argument);
  EXPECT_EQ(store.scalar_count(), 1u);
}
