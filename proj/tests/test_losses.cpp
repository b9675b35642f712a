#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "isogcn/gradcheck.hpp"
#include "isogcn/losses.hpp"
#include "oracles.hpp"

using namespace isogcn;

namespace {

TypedGraph edge_graph(std::size_t num_edges, std::size_t relations, std::mt19937_64& rng) {
  return oracle::random_graph(std::max<std::size_t>(4, num_edges / 4), relations,
                              num_edges, 1, rng);
}

IsostericityMatrix random_iso(std::size_t r, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 2.0);
  Tensor t(Shape{r, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = i + 1; j < r; ++j) t(i, j) = t(j, i) = u(rng);
  return IsostericityMatrix(t);
}

}  // namespace

TEST(SampleEdgeSwaps, FullFractionCoversEveryEdge) {
  std::mt19937_64 rng(1);
  const TypedGraph g = oracle::random_graph(4, 3, 5, 1, rng);
  const EdgeSwapSample s = sample_edge_swaps(g, 1.0, 42);
  ASSERT_EQ(s.size(), 5u);
  std::set<std::size_t> edges;
  for (const auto& sw : s.swaps) {
    edges.insert(sw.edge);
    EXPECT_EQ(sw.original, g.edges()[sw.edge].relation);
    EXPECT_NE(sw.swapped, sw.original);
    EXPECT_LT(sw.swapped, 3u);
  }
  EXPECT_EQ(edges.size(), 5u);
}

TEST(SampleEdgeSwaps, TwoRelationsForceTheOther) {
  std::mt19937_64 rng(2);
  const TypedGraph g = edge_graph(40, 2, rng);
  for (const auto& sw : sample_edge_swaps(g, 0.5, 7).swaps)
    EXPECT_EQ(sw.swapped, 1 - sw.original);
}

TEST(SampleEdgeSwaps, SizeIsCeilingOfFraction) {
  std::mt19937_64 rng(3);
  const TypedGraph g = edge_graph(10, 3, rng);
  EXPECT_EQ(sample_edge_swaps(g, 0.25, 1).size(), 3u);
  EXPECT_EQ(sample_edge_swaps(g, 0.1, 1).size(), 1u);
  EXPECT_EQ(sample_edge_swaps(g, 0.01, 1).size(), 1u);
}

TEST(SampleEdgeSwaps, DeterministicUnderSeed) {
  std::mt19937_64 rng(4);
  const TypedGraph g = edge_graph(50, 4, rng);
  const auto a = sample_edge_swaps(g, 0.3, 11), b = sample_edge_swaps(g, 0.3, 11);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.swaps[i].edge, b.swaps[i].edge);
    EXPECT_EQ(a.swaps[i].swapped, b.swaps[i].swapped);
  }
}

TEST(SampleEdgeSwaps, ConfigurationErrors) {
  std::mt19937_64 rng(5);
  const TypedGraph one_rel = edge_graph(8, 1, rng);
  EXPECT_THROW(sample_edge_swaps(one_rel, 0.5, 1), ConfigError);
  const TypedGraph empty(3, 2, Tensor::zeros({3, 1}), {});
  EXPECT_THROW(sample_edge_swaps(empty, 0.5, 1), ConfigError);
  const TypedGraph g = edge_graph(8, 2, rng);
  EXPECT_THROW(sample_edge_swaps(g, 0.0, 1), ConfigError);
  EXPECT_THROW(sample_edge_swaps(g, 1.5, 1), ConfigError);
}

TEST(SampleEdgeSwaps, SwapTargetsUniformWithinThreeSigma) {
  std::mt19937_64 rng(6);
  const std::size_t relations = 5;
  const TypedGraph g = edge_graph(1000, relations, rng);
  const EdgeSwapSample s = sample_edge_swaps(g, 0.5, 2024);
  ASSERT_EQ(s.size(), 500u);
  // Per original relation, sigma is uniform over the R - 1 alternatives.
  std::map<std::size_t, std::map<std::size_t, std::size_t>> hist;
  std::map<std::size_t, std::size_t> totals;
  for (const auto& sw : s.swaps) {
    ++hist[sw.original][sw.swapped];
    ++totals[sw.original];
  }
  for (const auto& [r, n] : totals) {
    const double p = 1.0 / static_cast<double>(relations - 1);
    const double mean = static_cast<double>(n) * p;
    const double sd = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
    for (std::size_t t = 0; t < relations; ++t) {
      if (t == r) {
        EXPECT_EQ(hist[r][t], 0u);
        continue;
      }
      EXPECT_LE(std::abs(static_cast<double>(hist[r][t]) - mean), 3.0 * sd)
          << "relation " << r << " -> " << t;
    }
  }
}

TEST(IsoLoss, PerfectEmbeddingIsZero) {
  // Rows on a line at 0, 1, 3: distances 1, 3, 2.
  const Tensor alpha = Tensor::matrix({{0, 0}, {1, 0}, {3, 0}});
  const IsostericityMatrix iso(Tensor::matrix({{0, 1, 3}, {1, 0, 2}, {3, 2, 0}}));
  EXPECT_EQ(iso_loss(alpha, full_pair_sample(3), iso).item(), 0.0);
}

TEST(IsoLoss, SinglePairArithmetic) {
  const Tensor alpha = Tensor::matrix({{1, 0}, {0, 0}});
  const IsostericityMatrix iso(Tensor::matrix({{0, 0.5}, {0.5, 0}}));
  EdgeSwapSample s;
  s.swaps = {{0, 0, 1}};
  EXPECT_DOUBLE_EQ(iso_loss(alpha, s, iso).item(), 0.25);
  EXPECT_DOUBLE_EQ(scaled_iso_loss(alpha, s, iso).item(), iso_loss(alpha, s, iso).item());
}

TEST(IsoLoss, MatchesPerEdgeOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor alpha = oracle::random_normal({4, 3}, rng);
    const IsostericityMatrix iso = random_iso(4, rng);
    const EdgeSwapSample s = full_pair_sample(4);
    EXPECT_NEAR(iso_loss(alpha, s, iso).item(), oracle::iso_loss(alpha, s, iso), 1e-12);
    EXPECT_NEAR(scaled_iso_loss(alpha, s, iso).item(),
                oracle::scaled_iso_loss(alpha, s, iso), 1e-12);
  }
}

TEST(IsoLoss, RepeatedPairsMatchOracle) {
  std::mt19937_64 rng(8);
  const TypedGraph g = edge_graph(60, 3, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor alpha = oracle::random_normal({3, 4}, rng);
    const IsostericityMatrix iso = random_iso(3, rng);
    const EdgeSwapSample s = sample_edge_swaps(g, 0.5, trial);
    const double want = oracle::iso_loss(alpha, s, iso);
    EXPECT_LE(relative_discrepancy(iso_loss(alpha, s, iso).item(), want), 1e-12);
    const double want_scaled = oracle::scaled_iso_loss(alpha, s, iso);
    EXPECT_LE(relative_discrepancy(scaled_iso_loss(alpha, s, iso).item(), want_scaled), 1e-12);
  }
}

TEST(IsoLoss, NonnegativeAndZeroOnlyWhenFitted) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor alpha = oracle::random_normal({3, 2}, rng);
    const IsostericityMatrix iso = random_iso(3, rng);
    EXPECT_GT(iso_loss(alpha, full_pair_sample(3), iso).item(), 0.0);
  }
}

TEST(IsoLoss, ShapeMismatch) {
  const IsostericityMatrix iso(Tensor::zeros({3, 3}));
  EXPECT_THROW(iso_loss(Tensor::zeros({2, 2}), full_pair_sample(2), iso), ShapeError);
}

TEST(SwapWeights, EqualNormsGiveOnes) {
  const Tensor alpha = Tensor::matrix({{1, 0}, {0, 1}, {0.6, 0.8}});
  for (double w : swap_weights(alpha, full_pair_sample(3))) EXPECT_NEAR(w, 1.0, 1e-15);
}

TEST(SwapWeights, TwoPairArithmetic) {
  // Norms 2, 1, 1: products 2 (pair 0-1) and 1 (pair 1-2).
  const Tensor alpha = Tensor::matrix({{2, 0}, {1, 0}, {0, 1}});
  EdgeSwapSample s;
  s.swaps = {{0, 0, 1}, {1, 1, 2}};
  const auto w = swap_weights(alpha, s);
  EXPECT_NEAR(w[0], 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 2.0 / 3.0, 1e-15);
}

TEST(SwapWeights, MeanIsOne) {
  std::mt19937_64 rng(10);
  const TypedGraph g = edge_graph(80, 5, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor alpha = oracle::random_normal({5, 3}, rng);
    const auto w = swap_weights(alpha, sample_edge_swaps(g, 0.3, trial));
    double mean = 0.0;
    for (double x : w) mean += x;
    mean /= static_cast<double>(w.size());
    EXPECT_NEAR(mean, 1.0, 1e-12);
  }
}

TEST(SwapWeights, DegenerateAttention) {
  EXPECT_THROW(swap_weights(Tensor::zeros({2, 2}), full_pair_sample(2)),
               DegenerateAttentionError);
  const IsostericityMatrix iso(Tensor::matrix({{0, 1}, {1, 0}}));
  // Falls back to the unscaled loss: two pairs each with residual 1.
  EXPECT_EQ(scaled_iso_loss(Tensor::zeros({2, 2}), full_pair_sample(2), iso).item(), 2.0);
}

TEST(ScaledIsoLoss, EqualNormsMatchUnscaled) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor alpha = oracle::random_normal({4, 3}, rng);
    for (std::size_t r = 0; r < 4; ++r) {
      const double n = oracle::row_norm(alpha, r);
      for (std::size_t k = 0; k < 3; ++k) alpha(r, k) *= 1.5 / n;
    }
    const IsostericityMatrix iso = random_iso(4, rng);
    const auto s = full_pair_sample(4);
    EXPECT_LE(relative_discrepancy(scaled_iso_loss(alpha, s, iso).item(),
                                   iso_loss(alpha, s, iso).item()),
              1e-12);
  }
}

TEST(IsoLoss, OrderInvariantWithTwoRelations) {
  std::mt19937_64 rng(12);
  const TypedGraph g = edge_graph(30, 2, rng);
  const Tensor alpha = oracle::random_normal({2, 3}, rng);
  const IsostericityMatrix iso = random_iso(2, rng);
  const EdgeSwapSample a = sample_edge_swaps(g, 1.0, 1);
  EdgeSwapSample b = sample_edge_swaps(g, 1.0, 99);
  std::reverse(b.swaps.begin(), b.swaps.end());
  EXPECT_EQ(iso_loss(alpha, a, iso).item(), iso_loss(alpha, b, iso).item());
  EXPECT_EQ(scaled_iso_loss(alpha, a, iso).item(), scaled_iso_loss(alpha, b, iso).item());
}

TEST(IsoLoss, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  const TypedGraph g = edge_graph(40, 4, rng);
  const IsostericityMatrix iso = random_iso(4, rng);
  const EdgeSwapSample s = sample_edge_swaps(g, 0.5, 5);
  const ScalarBuilder plain = [&](Tape&, const std::vector<Var>& p) {
    return iso_loss(p[0], s, iso);
  };
  const ScalarBuilder scaled = [&](Tape&, const std::vector<Var>& p) {
    return scaled_iso_loss(p[0], s, iso);
  };
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor alpha = oracle::random_normal({4, 3}, rng);
    EXPECT_LT(grad_check(plain, {alpha}, 1e-6).max_rel_error, 1e-4);
    EXPECT_LT(grad_check(scaled, {alpha}, 1e-6).max_rel_error, 1e-4);
  }
}

TEST(ScaledIsoLoss, WeightPathContributesToGradient) {
  // If w(e) were treated as a constant the gradient would differ.
  std::mt19937_64 rng(14);
  const Tensor alpha = oracle::random_normal({3, 2}, rng);
  const IsostericityMatrix iso = random_iso(3, rng);
  EdgeSwapSample s;
  s.swaps = {{0, 0, 1}, {1, 1, 2}, {2, 0, 2}, {3, 0, 1}};
  Tape t1;
  const Var scaled = scaled_iso_loss(t1.param(alpha), s, iso);
  const auto full = t1.backward(scaled)[0];
  const auto w = swap_weights(alpha, s);
  Tape t2;
  const Var a = t2.param(alpha);
  Var frozen = t2.constant(Tensor::scalar(0.0));
  for (std::size_t i = 0; i < s.size(); ++i) {
    EdgeSwapSample one;
    one.swaps = {s.swaps[i]};
    frozen = add(frozen, scale(iso_loss(a, one, iso), w[i]));
  }
  EXPECT_NEAR(t2.value(frozen).item(), t1.value(scaled).item(), 1e-12);
  EXPECT_GT(max_abs_diff(full, t2.backward(frozen)[0]), 1e-6);
}

TEST(Bce, MaxEntropyPoint) {
  NodeLabelSet l{{0, 1, 1, 0}, {0, 1, 2, 3}};
  EXPECT_NEAR(node_bce_loss(Tensor::zeros({4}), l).item(), std::log(2.0), 1e-15);
}

TEST(Bce, Saturation) {
  NodeLabelSet l{{1}, {0}};
  EXPECT_LT(node_bce_loss(Tensor::vector({30.0}), l).item(), 1e-9);
  NodeLabelSet l0{{0}, {0}};
  EXPECT_LT(node_bce_loss(Tensor::vector({-30.0}), l0).item(), 1e-9);
  EXPECT_NEAR(node_bce_loss(Tensor::vector({-800.0}), l).item(), 800.0, 1e-9);
}

TEST(Bce, MatchesNaiveFormula) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = oracle::random_normal({20}, rng, 3.0);
    NodeLabelSet l;
    for (std::size_t i = 0; i < 20; ++i) l.labels.push_back(static_cast<int>(rng() % 2));
    for (std::size_t i = 0; i < 20; i += 1 + trial % 3) l.mask.push_back(i);
    EXPECT_NEAR(node_bce_loss(z, l).item(), oracle::bce(z, l.labels, l.mask), 1e-10);
  }
}

TEST(Bce, EmptyMaskIsArgumentError) {
  NodeLabelSet l{{0, 1}, {}};
  EXPECT_THROW(node_bce_loss(Tensor::zeros({2}), l), ArgumentError);
}

TEST(Bce, FusedGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(16);
  NodeLabelSet l{{1, 0, 1, 1, 0, 0}, {0, 2, 3, 5}};
  const ScalarBuilder f = [&](Tape&, const std::vector<Var>& p) {
    return node_bce_loss(p[0], l);
  };
  EXPECT_LT(grad_check(f, {oracle::random_normal({6}, rng)}, 1e-6).max_rel_error, 1e-4);
}

TEST(TotalLoss, Composition) {
  EXPECT_EQ(total_loss(0.7, 0.25, 0.0).total, 0.7);
  EXPECT_NEAR(total_loss(0.7, 0.25, 1.0).total, 0.95, 1e-15);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  const double task = u(rng), iso = u(rng);
  const LossReport r = total_loss(task, iso, 2.0);
  EXPECT_EQ(r.total, task + 2.0 * iso);
  EXPECT_EQ(r.lambda, 2.0);
  EXPECT_THROW(total_loss(1.0, 1.0, -1.0), ArgumentError);
}
