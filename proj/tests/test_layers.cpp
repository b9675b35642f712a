#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "isogcn/gradcheck.hpp"
#include "isogcn/layers.hpp"
#include "oracles.hpp"

using namespace isogcn;

namespace {

RgcnLayerParams random_rgcn(std::size_t d_in, std::size_t d_out, std::size_t relations,
                            std::mt19937_64& rng) {
  RgcnLayerParams p;
  p.self_kernel = oracle::random_normal({d_out, d_in}, rng);
  for (std::size_t r = 0; r < relations; ++r)
    p.relation_kernels.push_back(oracle::random_normal({d_out, d_in}, rng));
  for (std::size_t r = 0; r < relations; ++r)
    p.relation_scale.push_back(std::uniform_real_distribution<double>(0.5, 2.0)(rng));
  return p;
}

IsoAttnLayerParams random_isoattn(std::size_t d_in, std::size_t d_msg, std::size_t heads,
                                  std::size_t relations, std::mt19937_64& rng) {
  IsoAttnLayerParams p;
  p.self_kernel = oracle::random_normal({heads * d_msg, d_in}, rng);
  p.shared_kernel = oracle::random_normal({d_msg, d_in}, rng);
  p.attention = oracle::random_normal({relations, heads}, rng);
  return p;
}

}  // namespace

TEST(BasisExpand, SingleUnitCoefficientCopiesBasis) {
  std::mt19937_64 rng(1);
  BasisParams b;
  b.bases.push_back(oracle::random_normal({3, 2}, rng));
  b.coefficients = Tensor::filled({4, 1}, 1.0);
  for (const Tensor& w : basis_expand(b)) EXPECT_EQ(w, b.bases[0]);
}

TEST(BasisExpand, ZeroCoefficientsGiveZeroKernels) {
  std::mt19937_64 rng(2);
  BasisParams b;
  b.bases = {oracle::random_normal({2, 2}, rng), oracle::random_normal({2, 2}, rng)};
  b.coefficients = Tensor::zeros({3, 2});
  for (const Tensor& w : basis_expand(b)) EXPECT_EQ(w, Tensor::zeros({2, 2}));
}

TEST(BasisExpand, MatchesDoubleLoop) {
  std::mt19937_64 rng(3);
  BasisParams b;
  b.bases = {oracle::random_normal({3, 4}, rng), oracle::random_normal({3, 4}, rng)};
  b.coefficients = oracle::random_normal({5, 2}, rng);
  const auto kernels = basis_expand(b);
  ASSERT_EQ(kernels.size(), 5u);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 2; ++k) s += b.coefficients(r, k) * b.bases[k](i, j);
        EXPECT_NEAR(kernels[r](i, j), s, 1e-12);
      }
  }
}

TEST(BasisExpand, ShapeMismatch) {
  BasisParams b;
  b.bases = {Tensor::zeros({2, 2}), Tensor::zeros({2, 3})};
  b.coefficients = Tensor::zeros({3, 2});
  EXPECT_THROW(basis_expand(b), ShapeError);
  b.bases = {Tensor::zeros({2, 2})};
  EXPECT_THROW(basis_expand(b), ShapeError);
}

TEST(Rgcn, IsolatedNodeKeepsOnlySelfTerm) {
  std::mt19937_64 rng(4);
  const TypedGraph g(3, 1, oracle::random_normal({3, 2}, rng), {{0, 1, 0}});
  const RgcnLayerParams p = random_rgcn(2, 3, 1, rng);
  const Tensor out = rgcn_forward(g, g.features(), p);
  const auto self = oracle::apply(p.self_kernel, g.features(), 2);
  for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(out(2, a), std::max(0.0, self[a]));
}

TEST(Rgcn, IdentityKernelsAddNeighbor) {
  const Tensor h = Tensor::matrix({{1, 2}, {3, 0.5}});
  const TypedGraph g(2, 1, h, {{0, 1, 0}});
  RgcnLayerParams p;
  p.self_kernel = Tensor::identity(2);
  p.relation_kernels = {Tensor::identity(2)};
  p.relation_scale = {1.0};
  const Tensor out = rgcn_forward(g, h, p);
  EXPECT_EQ(out(1, 0), 4.0);
  EXPECT_EQ(out(1, 1), 2.5);
  EXPECT_EQ(out(0, 0), 1.0);
}

TEST(Rgcn, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const TypedGraph g = oracle::random_graph(8, 3, 20, 4, rng);
    const RgcnLayerParams p = random_rgcn(4, 5, 3, rng);
    const Tensor got = rgcn_forward(g, g.features(), p);
    const Tensor want = oracle::rgcn(g, g.features(), p.self_kernel, p.relation_kernels,
                                     p.relation_scale);
    EXPECT_LE(max_abs_diff(got, want), 1e-12);
  }
}

TEST(Rgcn, BasisKernelsMatchExpandedKernels) {
  std::mt19937_64 rng(6);
  const TypedGraph g = oracle::random_graph(8, 3, 20, 4, rng);
  RgcnLayerParams p = init_rgcn_layer(4, 5, 3, 2, rng);
  const auto kernels = basis_expand(*p.basis);
  const Tensor want = oracle::rgcn(g, g.features(), p.self_kernel, kernels,
                                   std::vector<double>(3, 1.0));
  EXPECT_LE(max_abs_diff(rgcn_forward(g, g.features(), p), want), 1e-12);
}

TEST(Rgcn, DegreeNormAveragesPerRelation) {
  const Tensor h = Tensor::matrix({{1}, {3}, {0}});
  const TypedGraph g(3, 1, h, {{0, 2, 0}, {1, 2, 0}});
  RgcnLayerParams p;
  p.self_kernel = Tensor::zeros({1, 1});
  p.relation_kernels = {Tensor::identity(1)};
  LayerOptions opts;
  opts.degree_norm = true;
  EXPECT_EQ(rgcn_forward(g, h, p, opts)(2, 0), 2.0);
  EXPECT_EQ(rgcn_forward(g, h, p)(2, 0), 4.0);
}

TEST(Rgcn, DimensionMismatch) {
  std::mt19937_64 rng(7);
  const TypedGraph g = oracle::random_graph(4, 2, 5, 3, rng);
  RgcnLayerParams p = random_rgcn(2, 3, 2, rng);
  EXPECT_THROW(rgcn_forward(g, g.features(), p), ShapeError);
  p = random_rgcn(3, 3, 1, rng);
  EXPECT_THROW(rgcn_forward(g, g.features(), p), ShapeError);
  p = random_rgcn(3, 3, 2, rng);
  EXPECT_THROW(rgcn_forward(g, Tensor::zeros({3, 3}), p), ShapeError);
}

TEST(IsoAttn, ReducesToTiedRgcnExactly) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const TypedGraph g = oracle::random_graph(10, 3, 25, 4, rng);
    IsoAttnLayerParams a = random_isoattn(4, 5, 1, 3, rng);
    a.attention = Tensor::filled({3, 1}, 1.0);
    RgcnLayerParams r;
    r.self_kernel = a.self_kernel;
    r.relation_kernels.assign(3, a.shared_kernel);
    r.relation_scale.assign(3, 1.0);
    EXPECT_EQ(isoattn_forward(g, g.features(), a), rgcn_forward(g, g.features(), r));
  }
}

TEST(IsoAttn, SingleMessageIsConcatenatedScaledMessage) {
  const Tensor h = Tensor::matrix({{1, 2}, {0.5, 0}});
  const TypedGraph g(2, 2, h, {{0, 1, 1}});
  IsoAttnLayerParams p;
  p.self_kernel = Tensor::zeros({6, 2});
  p.shared_kernel = Tensor::matrix({{1, 0}, {0.5, 1}});
  p.attention = Tensor::matrix({{9, 9, 9}, {1, 2, 0.5}});
  const Tensor out = isoattn_forward(g, h, p);
  // W h_0 = [1, 2.5]
  const std::vector<double> want = {1, 2.5, 2, 5, 0.5, 1.25};
  for (std::size_t a = 0; a < 6; ++a) EXPECT_EQ(out(1, a), want[a]);
}

TEST(IsoAttn, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const TypedGraph g = oracle::random_graph(9, 4, 25, 3, rng);
    const IsoAttnLayerParams p = random_isoattn(3, 4, 3, 4, rng);
    const Tensor got = isoattn_forward(g, g.features(), p);
    const Tensor want =
        oracle::isoattn(g, g.features(), p.self_kernel, p.shared_kernel, p.attention);
    EXPECT_LE(max_abs_diff(got, want), 1e-12);
  }
}

TEST(IsoAttn, DimensionMismatch) {
  std::mt19937_64 rng(10);
  const TypedGraph g = oracle::random_graph(5, 2, 6, 3, rng);
  IsoAttnLayerParams p = random_isoattn(3, 4, 2, 3, rng);
  EXPECT_THROW(isoattn_forward(g, g.features(), p), ShapeError);
  p = random_isoattn(3, 4, 2, 2, rng);
  p.self_kernel = Tensor::zeros({7, 3});
  EXPECT_THROW(isoattn_forward(g, g.features(), p), ShapeError);
}

TEST(Layers, PermutationEquivariance) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 12;
    const TypedGraph g = oracle::random_graph(n, 3, 30, 4, rng);
    std::vector<std::size_t> pi(n);
    std::iota(pi.begin(), pi.end(), 0);
    std::shuffle(pi.begin(), pi.end(), rng);
    Tensor h2(Shape{n, 4});
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t j = 0; j < 4; ++j) h2(pi[v], j) = g.features()(v, j);
    std::vector<Edge> e2;
    for (const Edge& e : g.edges()) e2.push_back({pi[e.source], pi[e.target], e.relation});
    const TypedGraph g2(n, 3, h2, e2);

    const RgcnLayerParams rp = random_rgcn(4, 5, 3, rng);
    const IsoAttnLayerParams ap = random_isoattn(4, 3, 2, 3, rng);
    const Tensor r1 = rgcn_forward(g, g.features(), rp), r2 = rgcn_forward(g2, h2, rp);
    const Tensor a1 = isoattn_forward(g, g.features(), ap), a2 = isoattn_forward(g2, h2, ap);
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t j = 0; j < r1.cols(); ++j) EXPECT_NEAR(r1(v, j), r2(pi[v], j), 1e-12);
      for (std::size_t j = 0; j < a1.cols(); ++j) EXPECT_NEAR(a1(v, j), a2(pi[v], j), 1e-12);
    }
  }
}

TEST(IsoAttn, MessageSwapLaw) {
  std::mt19937_64 rng(12);
  LayerOptions raw;
  raw.apply_relu = false;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t heads = 1 + trial % 6, d_msg = 1 + trial % 5;
    const TypedGraph g = oracle::random_graph(7, 4, 15, 3, rng);
    IsoAttnLayerParams p = random_isoattn(3, d_msg, heads, 4, rng);
    p.self_kernel = Tensor::zeros({heads * d_msg, 3});
    const std::size_t e = trial % g.edges().size();
    const Edge edge = g.edges()[e];
    const std::size_t r1 = edge.relation, r2 = (r1 + 1 + trial % 3) % 4;
    const Tensor before = isoattn_forward(g, g.features(), p, raw);
    const Tensor after =
        isoattn_forward(g.with_edge_relation(e, r2), g.features(), p, raw);

    const auto wh = oracle::apply(p.shared_kernel, g.features(), edge.source);
    double delta_sq = 0.0, alpha_sq = 0.0, wh_sq = 0.0;
    for (std::size_t k = 0; k < heads; ++k) {
      const double da = p.attention(r2, k) - p.attention(r1, k);
      alpha_sq += da * da;
      for (std::size_t a = 0; a < d_msg; ++a) {
        const double d = after(edge.target, k * d_msg + a) - before(edge.target, k * d_msg + a);
        EXPECT_NEAR(d, da * wh[a], 1e-10 * (1.0 + std::abs(da * wh[a])));
        delta_sq += d * d;
      }
    }
    for (double x : wh) wh_sq += x * x;
    EXPECT_LE(relative_discrepancy(delta_sq, alpha_sq * wh_sq), 1e-10);
  }
}

TEST(Layers, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  const TypedGraph g = oracle::random_graph(6, 3, 14, 3, rng);
  const Tensor h = g.features();
  const Tensor readout_rgcn = oracle::random_normal({6, 4}, rng);
  const Tensor readout_attn = oracle::random_normal({6, 4}, rng);

  const ScalarBuilder rgcn_f = [&](Tape& t, const std::vector<Var>& p) {
    RgcnLayer<Var> layer{p[0], {p[1], p[2], p[3]}, std::nullopt, {1.0, 1.0, 1.0}};
    return sum(mul(rgcn_forward(g, t.constant(h), layer), t.constant(readout_rgcn)));
  };
  const auto r1 = grad_check(rgcn_f,
                             {oracle::random_normal({4, 3}, rng), oracle::random_normal({4, 3}, rng),
                              oracle::random_normal({4, 3}, rng), oracle::random_normal({4, 3}, rng)},
                             1e-5);
  EXPECT_LT(r1.max_rel_error, 1e-4);

  const ScalarBuilder basis_f = [&](Tape& t, const std::vector<Var>& p) {
    RgcnLayer<Var> layer{p[0], {}, BasisKernels<Var>{{p[1], p[2]}, p[3]}, {}};
    return sum(mul(rgcn_forward(g, t.constant(h), layer), t.constant(readout_rgcn)));
  };
  const auto r2 = grad_check(basis_f,
                             {oracle::random_normal({4, 3}, rng), oracle::random_normal({4, 3}, rng),
                              oracle::random_normal({4, 3}, rng), oracle::random_normal({3, 2}, rng)},
                             1e-5);
  EXPECT_LT(r2.max_rel_error, 1e-4);

  const ScalarBuilder attn_f = [&](Tape& t, const std::vector<Var>& p) {
    IsoAttnLayer<Var> layer{p[0], p[1], p[2]};
    return sum(mul(isoattn_forward(g, t.constant(h), layer), t.constant(readout_attn)));
  };
  const auto r3 = grad_check(attn_f,
                             {oracle::random_normal({4, 3}, rng), oracle::random_normal({2, 3}, rng),
                              oracle::random_normal({3, 2}, rng)},
                             1e-5);
  EXPECT_LT(r3.max_rel_error, 1e-4);
}

TEST(Init, SeededAndInRange) {
  std::mt19937_64 a(99), b(99);
  const IsoAttnLayerParams p = init_isoattn_layer(4, 3, 2, 5, a);
  const IsoAttnLayerParams q = init_isoattn_layer(4, 3, 2, 5, b);
  EXPECT_EQ(p.attention, q.attention);
  EXPECT_EQ(p.shared_kernel, q.shared_kernel);
  for (double v : p.attention.values()) {
    EXPECT_GE(v, 0.5);
    EXPECT_LE(v, 1.5);
  }
  const double limit = std::sqrt(6.0 / 7.0);
  for (double v : p.shared_kernel.values()) EXPECT_LE(std::abs(v), limit);
  EXPECT_EQ(p.self_kernel.shape(), (Shape{6, 4}));
  std::mt19937_64 c(1);
  EXPECT_THROW(init_isoattn_layer(4, 3, 0, 5, c), ConfigError);
}
