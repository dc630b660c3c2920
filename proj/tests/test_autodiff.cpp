#include <gtest/gtest.h>

#include <cmath>

#include "upt/autodiff.hpp"
#include "upt/gradcheck.hpp"

using namespace upt;
using Td = Tensor<double>;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Td({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Td({0, 2}), DimensionError);
  Td t({2, 3});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
}

TEST(Matmul, IdentityAndHandArithmetic) {
  Graph<double> g;
  auto I = g.constant(Td::matrix(2, 2, {1, 0, 0, 1}));
  auto B = g.constant(Td::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(matmul(I, B).value(), B.value());
  auto a = g.constant(Td::matrix(1, 2, {1, 2}));
  auto b = g.constant(Td::matrix(2, 1, {3, 4}));
  EXPECT_DOUBLE_EQ(matmul(a, b).value()[0], 11.0);
}

TEST(Matmul, ShapeMismatchThrows) {
  Graph<double> g;
  auto a = g.constant(Td({2, 3}));
  auto b = g.constant(Td({2, 3}));
  EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  Rng rng(3);
  Graph<double> g;
  auto a = g.variable(random_tensor({3, 4}, rng));
  auto b = g.constant(random_tensor({4, 2}, rng));
  g.backward(sum(matmul(a, b)));
  const auto& ga = g.grad(a);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(ga(i, j), b.value()(j, 0) + b.value()(j, 1), 1e-15);
}

TEST(Softmax, UniformAndOverflowSafe) {
  Graph<double> g;
  auto y = softmax(g.constant(Td::matrix(1, 3, {0, 0, 0}))).value();
  for (auto v : y.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  auto z = softmax(g.constant(Td::matrix(1, 2, {1000, 0}))).value();
  EXPECT_TRUE(z.all_finite());
  EXPECT_NEAR(z[0], 1.0, 1e-15);
  EXPECT_LT(z[1], 1e-300 + 1e-400);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(5);
  Graph<double> g;
  auto y = softmax(g.constant(random_tensor({20, 7}, rng, -30, 30))).value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double s = 0;
    for (auto v : y.row(r)) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(LayerNorm, ConstantRowCollapsesToBias) {
  Graph<double> g;
  auto x = g.constant(Td::matrix(1, 3, {4, 4, 4}));
  auto gain = g.constant(Td::vector({1, 1, 1}));
  auto bias = g.constant(Td::vector({0, 0, 0}));
  for (auto v : layer_norm(x, gain, bias, 1e-6).value().values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, AlreadyNormalizedRowIsUnchanged) {
  Graph<double> g;
  auto y = layer_norm(g.constant(Td::matrix(1, 2, {-1, 1})), 1e-14).value();
  EXPECT_NEAR(y[0], -1.0, 1e-12);
  EXPECT_NEAR(y[1], 1.0, 1e-12);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  Rng rng(8);
  Graph<double> g;
  auto y = layer_norm(g.constant(random_tensor({10, 16}, rng, -5, 9)), 1e-12).value();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double m = 0, v = 0;
    for (auto x : y.row(r)) m += x;
    m /= 16;
    for (auto x : y.row(r)) v += (x - m) * (x - m);
    EXPECT_LE(std::abs(m), 1e-10);
    EXPECT_NEAR(v / 16, 1.0, 1e-9);
  }
}

TEST(Gelu, ZeroAtOrigin) {
  Graph<double> g;
  EXPECT_EQ(gelu(g.constant(Td::vector({0}))).value()[0], 0.0);
}

TEST(GatherRows, SelectsAndValidates) {
  Graph<double> g;
  auto x = g.constant(Td::matrix(3, 1, {10, 20, 30}));
  auto y = gather_rows(x, {2, 0}).value();
  EXPECT_EQ(y[0], 30);
  EXPECT_EQ(y[1], 10);
  EXPECT_THROW(gather_rows(x, {3}), IndexError);
}

TEST(ScatterMean, MeansAndEmptyGroups) {
  Graph<double> g;
  auto m = g.constant(Td::matrix(2, 1, {1, 3}));
  EXPECT_EQ(scatter_mean(m, {0, 0}, 1).value()[0], 2.0);
  auto y = scatter_mean(g.constant(Td::matrix(2, 2, {1, 2, 3, 4})), {0, 0}, 2).value();
  EXPECT_EQ(y(1, 0), 0.0);
  EXPECT_EQ(y(1, 1), 0.0);
}

TEST(ScatterMean, GradientIsOneOverCount) {
  Graph<double> g;
  auto m = g.variable(Td::matrix(3, 1, {1, 2, 3}));
  g.backward(sum(scatter_mean(m, {0, 0, 1}, 2)));
  EXPECT_DOUBLE_EQ(g.grad(m)[0], 0.5);
  EXPECT_DOUBLE_EQ(g.grad(m)[1], 0.5);
  EXPECT_DOUBLE_EQ(g.grad(m)[2], 1.0);
}

TEST(Mse, Values) {
  Graph<double> g;
  auto p = g.constant(Td::vector({0, 2}));
  auto t = g.constant(Td::vector({0, 0}));
  EXPECT_EQ(mse(p, p).value()[0], 0.0);
  EXPECT_EQ(mse(p, t).value()[0], 2.0);
  EXPECT_THROW(mse(p, g.constant(Td::vector({1, 2, 3}))), DimensionError);
}

TEST(Mse, GradientIsTwiceResidualOverN) {
  Graph<double> g;
  auto p = g.variable(Td::vector({1, -2, 4}));
  auto t = g.constant(Td::vector({0, 1, 1}));
  g.backward(mse(p, t));
  EXPECT_DOUBLE_EQ(g.grad(p)[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(g.grad(p)[1], -2.0);
  EXPECT_DOUBLE_EQ(g.grad(p)[2], 2.0);
}

TEST(Backward, SumGivesOnes) {
  Graph<double> g;
  auto x = g.variable(Td({2, 3}, 5.0));
  g.backward(sum(x));
  for (auto v : g.grad(x).values()) EXPECT_EQ(v, 1.0);
}

TEST(Backward, DiamondAccumulates) {
  Graph<double> g;
  auto x = g.variable(Td::vector({3}));
  g.backward(sum(add(x, x)));
  EXPECT_EQ(g.grad(x)[0], 2.0);
}

TEST(Backward, NonScalarLossThrows) {
  Graph<double> g;
  auto x = g.variable(Td::vector({1, 2}));
  EXPECT_THROW(g.backward(x), DimensionError);
}

TEST(Backward, Deterministic) {
  auto run = [] {
    Rng rng(11);
    Graph<double> g;
    auto a = g.variable(random_tensor({5, 6}, rng));
    auto b = g.variable(random_tensor({6, 4}, rng));
    auto y = softmax(gelu(matmul(a, b)));
    g.backward(random_projection(g, layer_norm(y, 1e-6), 4));
    return std::make_pair(g.grad(a), g.grad(b));
  };
  auto r1 = run();
  auto r2 = run();
  EXPECT_EQ(r1.first, r2.first);
  EXPECT_EQ(r1.second, r2.second);
}

TEST(Backward, ConstantsReceiveNoGradientClosures) {
  Graph<double> g;
  auto c = g.constant(Td::vector({1, 2}));
  auto y = scale(c, 2.0);
  EXPECT_FALSE(y.requires_grad());
}

TEST(GradCheck, EveryOpMatchesFiniteDifferences) {
  for (const auto& r : op_gradient_suite(1e-6)) {
    SCOPED_TRACE(r.name);
    EXPECT_TRUE(r.passed) << r.name << " rel err " << r.max_rel_error;
    EXPECT_GT(r.entries_checked, 0u);
  }
}
