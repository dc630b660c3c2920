#include <gtest/gtest.h>

#include "upt/blocks.hpp"
#include "upt/gradcheck.hpp"

using namespace upt;
using Td = Tensor<double>;

namespace {

void randomize(ParameterSet<double>& ps, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (auto& p : ps)
    for (auto& v : p->value.values()) v = (p->name.find("gain") != std::string::npos ? 1.0 : 0.0) + rng.uniform(-scale, scale);
}

Td rows_of(const Td& m, const Index& idx) {
  Td out({idx.size(), m.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) out(i, c) = m(idx[i], c);
  return out;
}

}  // namespace

TEST(Attention, SingleKeyIgnoresQuery) {
  ParameterSet<double> ps;
  Rng rng(1);
  auto attn = Attention<double>::make(ps, "a", 8, 6, 8, 2, rng);
  Graph<double> g;
  auto kv = g.constant(random_tensor({1, 6}, rng));
  auto y = attn(g, g.constant(random_tensor({3, 8}, rng)), kv).value();
  auto ref = attn.o(g, attn.v(g, kv)).value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(y(r, c), ref(0, c), 1e-12);
}

TEST(Attention, DuplicatedKeysChangeNothing) {
  ParameterSet<double> ps;
  Rng rng(2);
  auto attn = Attention<double>::make(ps, "a", 8, 8, 8, 2, rng);
  Graph<double> g;
  auto q = g.constant(random_tensor({4, 8}, rng));
  auto row = random_tensor({1, 8}, rng);
  Td twice({2, 8});
  for (std::size_t c = 0; c < 8; ++c) twice(0, c) = twice(1, c) = row[c];
  EXPECT_LE(max_abs_diff(attn(g, q, g.constant(row)).value(), attn(g, q, g.constant(twice)).value()), 1e-12);
}

TEST(Attention, QueryRowsAreIndependent) {
  ParameterSet<double> ps;
  Rng rng(3);
  auto attn = Attention<double>::make(ps, "a", 8, 8, 8, 4, rng);
  Graph<double> g;
  auto kv = g.constant(random_tensor({5, 8}, rng));
  auto q = random_tensor({2, 8}, rng);
  auto both = attn(g, g.constant(q), kv).value();
  auto first = attn(g, g.constant(rows_of(q, {0})), kv).value();
  auto second = attn(g, g.constant(rows_of(q, {1})), kv).value();
  EXPECT_LE(max_rel_diff(rows_of(both, {0}), first), 1e-6);
  EXPECT_LE(max_rel_diff(rows_of(both, {1}), second), 1e-6);
}

TEST(Attention, HeadDivisibility) {
  ParameterSet<double> ps;
  Rng rng(0);
  EXPECT_THROW(Attention<double>::make(ps, "a", 8, 8, 8, 3, rng), ValueError);
}

TEST(TransformerBlock, ZeroInitModulationIsIdentity) {
  ParameterSet<double> ps;
  Rng rng(4);
  auto block = TransformerBlock<double>::make(ps, "b", 8, 2, 6, rng);
  Graph<double> g;
  auto x = random_tensor({5, 8}, rng);
  auto y = block(g, g.constant(x), g.constant(random_tensor({1, 6}, rng))).value();
  EXPECT_EQ(y, x);
}

TEST(TransformerBlock, RequiresConditionWhenConditioned) {
  ParameterSet<double> ps;
  Rng rng(4);
  auto block = TransformerBlock<double>::make(ps, "b", 8, 2, 6, rng);
  Graph<double> g;
  EXPECT_THROW(block(g, g.constant(Td({2, 8})), std::nullopt), ValueError);
}

TEST(TransformerBlock, RowPermutationEquivariant) {
  for (std::size_t cond_dim : {0u, 6u}) {
    ParameterSet<double> ps;
    Rng rng(5);
    auto block = TransformerBlock<double>::make(ps, "b", 8, 2, cond_dim, rng);
    randomize(ps, 6);
    Graph<double> g;
    auto x = random_tensor({6, 8}, rng);
    std::optional<Var<double>> c;
    if (cond_dim) c = g.constant(random_tensor({1, cond_dim}, rng));
    Index perm{3, 0, 5, 1, 4, 2};
    auto y = block(g, g.constant(x), c).value();
    auto yp = block(g, g.constant(rows_of(x, perm)), c).value();
    EXPECT_LE(max_rel_diff(yp, rows_of(y, perm)), 1e-12);
  }
}

TEST(TransformerBlock, GradientsMatchFiniteDifferences) {
  ParameterSet<double> ps;
  Rng rng(7);
  auto block = TransformerBlock<double>::make(ps, "b", 8, 2, 6, rng);
  randomize(ps, 8);
  auto x = random_tensor({4, 8}, rng);
  auto c = random_tensor({1, 6}, rng);
  auto res = check_param_gradients(
      "transformer_block", ps,
      [&](Graph<double>& g) { return random_projection(g, block(g, g.constant(x), g.constant(c)), 5); }, 1e-4);
  EXPECT_TRUE(res.passed) << res.max_rel_error;
  auto in = check_input_gradients("transformer_block_inputs", {x, c}, [&](Graph<double>& g, const auto& v) {
    return random_projection(g, block(g, v[0], v[1]), 5);
  }, 1e-4);
  EXPECT_TRUE(in.passed) << in.max_rel_error;
}

TEST(PerceiverBlock, ZeroInitIsIdentityOnQueries) {
  ParameterSet<double> ps;
  Rng rng(9);
  auto block = PerceiverBlock<double>::make(ps, "p", 8, 4, 2, 6, rng);
  Graph<double> g;
  auto q = random_tensor({3, 8}, rng);
  auto y = block(g, g.constant(q), g.constant(random_tensor({5, 4}, rng)), g.constant(random_tensor({1, 6}, rng)));
  EXPECT_EQ(y.value(), q);
}

TEST(PerceiverBlock, IdenticalContextRowsGiveSameMixture) {
  ParameterSet<double> ps;
  Rng rng(10);
  auto block = PerceiverBlock<double>::make(ps, "p", 8, 4, 2, 0, rng);
  randomize(ps, 11);
  Graph<double> g;
  auto row = random_tensor({1, 4}, rng);
  Td ctx({5, 4});
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < 4; ++c) ctx(r, c) = row[c];
  // With all context rows equal, attention output is the same vector for
  // every query, so it equals the single-row-context result.
  auto q = g.constant(random_tensor({3, 8}, rng));
  EXPECT_LE(max_abs_diff(block(g, q, g.constant(ctx), std::nullopt).value(),
                         block(g, q, g.constant(row), std::nullopt).value()),
            1e-12);
}

TEST(PerceiverBlock, ContextPermutationInvariant) {
  ParameterSet<double> ps;
  Rng rng(12);
  auto block = PerceiverBlock<double>::make(ps, "p", 8, 4, 2, 6, rng);
  randomize(ps, 13);
  Graph<double> g;
  auto q = g.constant(random_tensor({3, 8}, rng));
  auto c = g.constant(random_tensor({1, 6}, rng));
  auto ctx = random_tensor({7, 4}, rng);
  auto y = block(g, q, g.constant(ctx), c).value();
  auto yp = block(g, q, g.constant(rows_of(ctx, {6, 2, 0, 4, 1, 5, 3})), c).value();
  EXPECT_LE(max_rel_diff(y, yp), 1e-6);
}

TEST(PerceiverBlock, GradientsMatchFiniteDifferences) {
  ParameterSet<double> ps;
  Rng rng(14);
  auto block = PerceiverBlock<double>::make(ps, "p", 8, 4, 2, 6, rng);
  randomize(ps, 15);
  auto q = random_tensor({3, 8}, rng);
  auto ctx = random_tensor({5, 4}, rng);
  auto c = random_tensor({1, 6}, rng);
  auto res = check_param_gradients(
      "perceiver_block", ps,
      [&](Graph<double>& g) {
        return random_projection(g, block(g, g.constant(q), g.constant(ctx), g.constant(c)), 3);
      },
      1e-4);
  EXPECT_TRUE(res.passed) << res.max_rel_error;
}
