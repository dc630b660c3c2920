#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "upt/geometry.hpp"

using namespace upt;
using Td = Tensor<double>;

namespace {

Td random_points(std::size_t k, std::size_t dim, Rng& rng, double lo = 0, double hi = 1) {
  Td t({k, dim});
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

void check_graph_invariants(const SupernodeGraph& g, const Td& pos, double radius, std::size_t max_degree) {
  const std::size_t ns = g.num_supernodes();
  ASSERT_EQ(g.edges_from.size(), g.edges_to.size());
  std::vector<std::size_t> degree(ns, 0);
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    ASSERT_LT(g.edges_to[e], ns);
    ASSERT_LT(g.edges_from[e], pos.rows());
    ++degree[g.edges_to[e]];
    EXPECT_LE(std::sqrt(squared_distance(pos, g.edges_from[e], g.supernode_idx[g.edges_to[e]])), radius);
  }
  for (auto d : degree) {
    EXPECT_LE(d, max_degree);
    EXPECT_GE(d, 1u);
  }
}

}  // namespace

TEST(Rng, StreamIsPinned) {
  // mt19937_64 default-seed value mandated by the standard (10000th output).
  std::mt19937_64 e;
  e.discard(9999);
  EXPECT_EQ(e(), 9981545732273789042ULL);
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());
}

TEST(Rng, BelowIsInRange) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) EXPECT_LT(r.below(7), 7u);
}

TEST(Rescale, EndpointsAndMidpoint) {
  Td p = Td::matrix(3, 1, {-0.5, 0.5, 0.0});
  auto y = rescale_positions(p, {{-0.5, 0.5}});
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 200.0);
  EXPECT_DOUBLE_EQ(y[2], 100.0);
}

TEST(Rescale, DegenerateBoundsThrow) {
  Td p = Td::matrix(1, 1, {0.0});
  EXPECT_THROW(rescale_positions(p, {{1.0, 1.0}}), ValueError);
}

TEST(Rescale, MonotonePerDimension) {
  Rng rng(2);
  Td p = random_points(200, 2, rng, 0, 2 * std::numbers::pi);
  auto y = rescale_positions(p, {{0, 2 * std::numbers::pi}, {0, 2 * std::numbers::pi}});
  for (std::size_t i = 0; i < 200; ++i)
    for (std::size_t j = 0; j < 200; ++j)
      for (std::size_t c = 0; c < 2; ++c)
        if (p(i, c) < p(j, c)) EXPECT_LE(y(i, c), y(j, c));
}

TEST(RadiusGraph, SimpleLine) {
  Td p = Td::matrix(3, 2, {0, 0, 1, 0, 5, 0});
  Rng rng(0);
  auto g = build_radius_graph(p, {0}, 1.5, 32, rng);
  EXPECT_EQ(g.edges_from, (Index{0, 1}));
  EXPECT_EQ(g.edges_to, (Index{0, 0}));
}

TEST(RadiusGraph, DegreeCapKeepsSelfEdge) {
  Td p({3, 2}, 0.0);
  Rng rng(0);
  auto g = build_radius_graph(p, {0}, 1.0, 1, rng);
  ASSERT_EQ(g.num_edges(), 1u);
  EXPECT_EQ(g.edges_from[0], 0u);
}

TEST(RadiusGraph, CapSubsetIsUniformish) {
  // 11 coincident points, cap 3 -> self + 2 of 10 others; each other point
  // should be kept with probability 0.2.
  Td p({11, 2}, 0.0);
  Rng rng(9);
  std::vector<int> hits(11, 0);
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    auto g = build_radius_graph(p, {0}, 1.0, 3, rng);
    ASSERT_EQ(g.num_edges(), 3u);
    for (auto f : g.edges_from) ++hits[f];
  }
  EXPECT_EQ(hits[0], trials);
  for (int i = 1; i < 11; ++i) EXPECT_NEAR(hits[i] / double(trials), 0.2, 0.015);
}

TEST(RadiusGraph, UncappedEqualsBruteForce) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t k = 100 + 100 * trial;
    Td p = random_points(k, 2, rng);
    auto idx = sample_supernodes(k, 20, rng);
    const double r = 0.15;
    auto g = build_radius_graph(p, idx, r, k + 1, rng);
    std::set<std::pair<std::size_t, std::size_t>> got, want;
    for (std::size_t e = 0; e < g.num_edges(); ++e) got.insert({g.edges_from[e], g.edges_to[e]});
    for (std::size_t s = 0; s < idx.size(); ++s)
      for (std::size_t q = 0; q < k; ++q) {
        double d = 0;
        for (std::size_t c = 0; c < 2; ++c) d += (p(q, c) - p(idx[s], c)) * (p(q, c) - p(idx[s], c));
        if (std::sqrt(d) <= r) want.insert({q, s});
      }
    EXPECT_EQ(got, want);
    EXPECT_EQ(got.size(), g.num_edges());
  }
}

TEST(RadiusGraph, InvariantsUnderCapping) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    Td p = random_points(300, 2, rng);
    auto idx = sample_supernodes(300, 40, rng);
    const double r = rng.uniform(0.05, 0.4);
    const std::size_t cap = 1 + rng.below(32);
    check_graph_invariants(build_radius_graph(p, idx, r, cap, rng), p, r, cap);
  }
}

TEST(RadiusGraph, RejectsBadArguments) {
  Td p = Td::matrix(2, 1, {0, 1});
  Rng rng(0);
  EXPECT_THROW(build_radius_graph(p, {0}, 0.0, 4, rng), ValueError);
  EXPECT_THROW(build_radius_graph(p, {0, 0}, 1.0, 4, rng), ValueError);
  EXPECT_THROW(build_radius_graph(p, {5}, 1.0, 4, rng), IndexError);
}

TEST(CalibrateRadius, UnitLine) {
  Td p({50, 1});
  for (std::size_t i = 0; i < 50; ++i) p[i] = double(i);
  // Brute force: the smallest radius reaching mean degree 2 among candidate radii.
  double brute = 0;
  for (double r = 0.01; r < 3; r += 0.01) {
    double total = 0;
    for (std::size_t i = 0; i < 50; ++i)
      for (std::size_t j = 0; j < 50; ++j)
        if (i != j && std::abs(p[i] - p[j]) <= r) total += 1;
    if (total / 50 >= 2.0 - 0.2 * 2.0) {
      brute = r;
      break;
    }
  }
  const double r = calibrate_radius(p, 2.0);
  EXPECT_GE(r, 1.0);
  EXPECT_LE(r, 1.5);
  EXPECT_NEAR(r, brute, 0.011);
}

TEST(CalibrateRadius, ScaleEquivariant) {
  Rng rng(3);
  Td p = random_points(200, 2, rng);
  Td p2 = p;
  for (auto& v : p2.values()) v *= 2;
  EXPECT_DOUBLE_EQ(calibrate_radius(p2, 10.0), 2 * calibrate_radius(p, 10.0));
}

TEST(CalibrateRadius, TgvSizedCloudHitsTargetDegree) {
  Rng rng(12);
  Td p = random_points(2500, 2, rng, 0, 2 * std::numbers::pi);
  const double r = calibrate_radius(p, 24.0, 2500);
  // Brute-force neighbour count over every point.
  double total = 0;
  for (std::size_t i = 0; i < 2500; ++i)
    for (std::size_t j = 0; j < 2500; ++j)
      if (i != j && squared_distance(p, i, j) <= r * r) total += 1;
  const double mean = total / 2500;
  EXPECT_GE(mean, 19.2);
  EXPECT_LE(mean, 28.8);
}

TEST(CalibrateRadius, CoincidentPointsThrow) {
  Td p({5, 2}, 1.0);
  EXPECT_THROW(calibrate_radius(p), ValueError);
  EXPECT_THROW(calibrate_radius(Td({1, 2})), ValueError);
}

TEST(SampleSupernodes, FullDrawIsPermutation) {
  Rng rng(1);
  auto idx = sample_supernodes(50, 50, rng);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(idx[i], i);
  EXPECT_THROW(sample_supernodes(5, 6, rng), ValueError);
}

TEST(SampleSupernodes, SeedDeterminism) {
  Rng a(77), b(77);
  EXPECT_EQ(sample_supernodes(100, 10, a), sample_supernodes(100, 10, b));
}

TEST(SampleSupernodes, MonteCarloUniformity) {
  Rng rng(2024);
  std::vector<int> count(100, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i)
    for (auto j : sample_supernodes(100, 10, rng)) ++count[j];
  for (auto c : count) EXPECT_NEAR(c / double(draws), 0.1, 0.01);
}

TEST(Subsample, IdentityAndExactFraction) {
  Rng rng(5);
  PointCloudFrame f;
  f.positions = random_points(100, 2, rng);
  f.features = random_points(100, 3, rng);
  auto same = subsample_points(f, 1.0, 1.0, rng);
  EXPECT_EQ(same.positions, f.positions);
  EXPECT_EQ(same.features, f.features);
  auto half = subsample_points(f, 0.5, 0.5, rng);
  EXPECT_EQ(half.size(), 50u);
  EXPECT_NO_THROW(half.validate());
  // Rows stay aligned: each kept position row matches its feature row.
  for (std::size_t i = 0; i < half.size(); ++i) {
    bool found = false;
    for (std::size_t j = 0; j < 100 && !found; ++j)
      found = half.positions(i, 0) == f.positions(j, 0) && half.features(i, 2) == f.features(j, 2);
    EXPECT_TRUE(found);
  }
  EXPECT_THROW(subsample_points(f, 0.0, 0.5, rng), ValueError);
}

TEST(Frame, ValidateCatchesMismatch) {
  PointCloudFrame f;
  f.positions = Td({3, 2});
  f.features = Td({2, 1});
  EXPECT_THROW(f.validate(), ValueError);
}
