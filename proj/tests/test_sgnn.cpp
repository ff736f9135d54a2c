#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"

using namespace lanetopo;

namespace {

const SgnnDims kSmall{6, 5, 7};

DenseMatrix random_matrix(CounterRng& rng, std::size_t r, std::size_t c, double lo = -1, double hi = 1) {
  DenseMatrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

LayerState random_state(CounterRng& rng, std::size_t n_l, std::size_t n_t) {
  return {random_matrix(rng, n_l, n_l, 0, 1), random_matrix(rng, n_l, n_t, 0, 1),
          random_matrix(rng, kNumAttributes, n_t, 0, 1)};
}

double max_diff(const DenseMatrix& a, const DenseMatrix& b) {
  EXPECT_TRUE(a.same_shape(b)) << a.shape_string() << " vs " << b.shape_string();
  double m = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i)
    m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

bool all_zero(const DenseMatrix& m) {
  return std::all_of(m.values().begin(), m.values().end(), [](double v) { return v == 0.0; });
}

// Straight-line reference implementations, one scalar at a time.

DenseMatrix ref_linear(const DenseMatrix& x, const Linear& l) {
  DenseMatrix y(x.rows(), l.out());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t o = 0; o < l.out(); ++o) {
      double s = l.has_bias() ? l.bias(0, o) : 0.0;
      for (std::size_t i = 0; i < l.in(); ++i) s += x(r, i) * l.weight(i, o);
      y(r, o) = s;
    }
  return y;
}

DenseMatrix ref_relu(DenseMatrix m) {
  for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
  return m;
}

DenseMatrix ref_embed(const DenseMatrix& q_t, const SgnnParams& p) {
  return ref_linear(ref_relu(ref_linear(q_t, p.embed_in)), p.embed_out);
}

DenseMatrix ref_gcn(const DenseMatrix& q, const DenseMatrix& t, const DenseMatrix& w, bool relu = true) {
  DenseMatrix out(t.rows(), w.cols());
  for (std::size_t x = 0; x < t.rows(); ++x)
    for (std::size_t f = 0; f < w.cols(); ++f) {
      double s = 0.0;
      for (std::size_t y = 0; y < t.cols(); ++y)
        for (std::size_t g = 0; g < q.cols(); ++g) s += t(x, y) * q(y, g) * w(g, f);
      out(x, f) = relu && s < 0.0 ? 0.0 : s;
    }
  return out;
}

DenseMatrix ref_skg_lt(const DenseMatrix& q_t, const LayerState& st, const SgnnParams& p) {
  const std::size_t n_l = st.a_lt_prev.rows(), n_t = q_t.rows();
  DenseMatrix out(n_l, p.dims.lane_dim);
  for (std::size_t x = 0; x < n_l; ++x)
    for (std::size_t f = 0; f < p.dims.lane_dim; ++f)
      for (std::size_t y = 0; y < n_t; ++y)
        for (std::size_t c = 0; c < kNumAttributes; ++c)
          for (std::size_t g = 0; g < p.dims.te_dim; ++g)
            out(x, f) += p.beta_lt * st.te_scores(c, y) * st.a_lt_prev(x, y) * p.w_lt[c](f, g) * q_t(y, g);
  return out;
}

DenseMatrix ref_skg_ll(const DenseMatrix& q_l, const DenseMatrix& a, const SgnnParams& p,
                       bool layer_zero = false) {
  const std::size_t n = q_l.rows();
  auto k = [&](std::size_t c, std::size_t x, std::size_t y) {
    if (c == 2) return x == y ? 1.0 : 0.0;
    if (layer_zero) return 0.0;
    return c == 0 ? a(x, y) : a(y, x);
  };
  DenseMatrix out(n, p.dims.lane_dim);
  for (std::size_t x = 0; x < n; ++x)
    for (std::size_t f = 0; f < p.dims.lane_dim; ++f)
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t g = 0; g < p.dims.lane_dim; ++g)
            out(x, f) += p.beta_ll * k(c, x, y) * p.w_ll[c](f, g) * q_l(y, g);
  return out;
}

DenseMatrix ref_layer(const DenseMatrix& q_l, const DenseMatrix& q_t, const LayerState& st,
                      const SgnnParams& p, SgnnVariant v) {
  const std::size_t n_l = q_l.rows();
  const DenseMatrix emb = ref_embed(q_t, p);
  DenseMatrix a, b;
  if (v == SgnnVariant::kSceneGraph) {
    DenseMatrix t_ll(n_l, n_l), t_lt(n_l, q_t.rows());
    for (std::size_t i = 0; i < n_l; ++i)
      for (std::size_t j = 0; j < n_l; ++j)
        t_ll(i, j) = (i == j) + p.beta_ll * (st.a_ll_prev(i, j) + st.a_ll_prev(j, i));
    for (std::size_t i = 0; i < n_l; ++i)
      for (std::size_t j = 0; j < q_t.rows(); ++j) t_lt(i, j) = p.beta_lt * st.a_lt_prev(i, j);
    a = ref_gcn(q_l, t_ll, p.gcn_ll);
    b = ref_gcn(emb, t_lt, p.gcn_lt);
  } else {
    a = ref_skg_ll(q_l, st.a_ll_prev, p);
    b = ref_skg_lt(emb, st, p);
  }
  DenseMatrix cat(n_l, 2 * p.dims.lane_dim);
  for (std::size_t i = 0; i < n_l; ++i)
    for (std::size_t f = 0; f < p.dims.lane_dim; ++f) {
      cat(i, f) = a(i, f);
      cat(i, p.dims.lane_dim + f) = b(i, f);
    }
  DenseMatrix out = ref_linear(ref_relu(cat), p.adapter);
  for (std::size_t i = 0; i < out.values().size(); ++i) out.values()[i] += q_l.values()[i];
  return out;
}

}  // namespace

TEST(EmbedTe, ZeroInputZeroBias) {
  SgnnParams p = SgnnParams::make(kSmall, 1);
  p.embed_in.bias *= 0.0;
  p.embed_out.bias *= 0.0;
  EXPECT_TRUE(all_zero(embed_te(DenseMatrix(3, kSmall.te_dim), p)));
}

TEST(EmbedTe, IdentityConstructionReproducesInput) {
  // W1 = [I, -I], W2 = [I; -I] gives relu(x) - relu(-x) = x.
  SgnnParams p = SgnnParams::make({4, 256, 512}, 2);
  p.embed_in.weight = DenseMatrix(256, 512);
  p.embed_out.weight = DenseMatrix(512, 256);
  p.embed_in.bias = DenseMatrix(1, 512);
  p.embed_out.bias = DenseMatrix(1, 256);
  for (std::size_t i = 0; i < 256; ++i) {
    p.embed_in.weight(i, i) = 1.0;
    p.embed_in.weight(i, 256 + i) = -1.0;
    p.embed_out.weight(i, i) = 1.0;
    p.embed_out.weight(256 + i, i) = -1.0;
  }
  CounterRng rng(3);
  const DenseMatrix q = random_matrix(rng, 1, 256);
  EXPECT_LT(max_diff(embed_te(q, p), q), 1e-15);
}

TEST(EmbedTe, MatchesStraightLineOracle) {
  CounterRng rng(4);
  const SgnnParams p = SgnnParams::make(kSmall, 4);
  const DenseMatrix q = random_matrix(rng, 5, kSmall.te_dim);
  EXPECT_LT(max_diff(embed_te(q, p), ref_embed(q, p)), 1e-14);
}

TEST(EmbedTe, RejectsWrongWidth) {
  EXPECT_THROW(embed_te(DenseMatrix(2, 3), SgnnParams::make(kSmall, 1)), ShapeError);
}

TEST(BuildT, LaneLaneExamples) {
  const DenseMatrix a{{0, 1}, {0, 0}};
  EXPECT_EQ(build_t_ll(a, 0.5, 0), DenseMatrix::identity(2));
  EXPECT_EQ(build_t_ll(a, 0.0, 3), DenseMatrix::identity(2));
  EXPECT_EQ(build_t_ll(a, 0.5, 1), (DenseMatrix{{1, 0.5}, {0.5, 1}}));
  EXPECT_THROW(build_t_ll(DenseMatrix(2, 3), 0.5, 1), ShapeError);
}

TEST(BuildT, LaneTeExamples) {
  const DenseMatrix a{{0.8, 0.0}};
  EXPECT_EQ(build_t_lt(a, 0.5, 0, 1, 2), DenseMatrix(1, 2));
  EXPECT_EQ(build_t_lt(a, 0.5, 1, 1, 2), (DenseMatrix{{0.4, 0.0}}));
  EXPECT_EQ(build_t_lt(DenseMatrix(1, 2), 0.5, 1, 1, 2), DenseMatrix(1, 2));
  EXPECT_THROW(build_t_lt(a, 0.5, 1, 2, 2), ShapeError);
}

TEST(Gcn, Examples) {
  const DenseMatrix q{{1, 2}, {3, 0.5}};
  EXPECT_EQ(gcn_propagate(q, DenseMatrix::identity(2), DenseMatrix::identity(2)), q);
  EXPECT_TRUE(all_zero(gcn_propagate(q, DenseMatrix(2, 2), DenseMatrix::identity(2))));
  CounterRng rng(5);
  const DenseMatrix q4 = random_matrix(rng, 4, 8), t = random_matrix(rng, 4, 4), w = random_matrix(rng, 8, 8);
  EXPECT_LT(max_diff(gcn_propagate(q4, t, w), ref_gcn(q4, t, w)), 1e-14);
  EXPECT_LT(max_diff(gcn_propagate(q4, t, w, Activation::kIdentity), ref_gcn(q4, t, w, false)), 1e-14);
  EXPECT_THROW(gcn_propagate(q4, DenseMatrix(4, 3), w), ShapeError);
}

TEST(SkgLt, NoNeighboursNoUpdate) {
  CounterRng rng(6);
  const SgnnParams p = SgnnParams::make(kSmall, 6);
  LayerState st = random_state(rng, 3, 2);
  st.a_lt_prev = DenseMatrix(3, 2);
  EXPECT_TRUE(all_zero(skg_lt_propagate(random_matrix(rng, 3, kSmall.lane_dim),
                                        random_matrix(rng, 2, kSmall.te_dim), st, p)));
}

TEST(SkgLt, SingleTermSum) {
  CounterRng rng(7);
  const SgnnParams p = SgnnParams::make(kSmall, 7);
  const std::size_t c = static_cast<std::size_t>(Attribute::kTurnLeft);
  LayerState st{DenseMatrix(1, 1), DenseMatrix{{1.0}}, DenseMatrix(kNumAttributes, 1)};
  st.te_scores(c, 0) = 1.0;
  const DenseMatrix qt = random_matrix(rng, 1, kSmall.te_dim);
  const DenseMatrix out = skg_lt_propagate(random_matrix(rng, 1, kSmall.lane_dim), qt, st, p);
  for (std::size_t f = 0; f < kSmall.lane_dim; ++f) {
    double expect = 0.0;
    for (std::size_t g = 0; g < kSmall.te_dim; ++g) expect += p.w_lt[c](f, g) * qt(0, g);
    EXPECT_NEAR(out(0, f), 0.5 * expect, 1e-15);
  }
}

TEST(SkgLt, MatchesLoopOracle) {
  CounterRng rng(8);
  const SgnnParams p = SgnnParams::make(kSmall, 8);
  const LayerState st = random_state(rng, 3, 2);
  const DenseMatrix qt = random_matrix(rng, 2, kSmall.te_dim);
  EXPECT_LT(max_diff(skg_lt_propagate(random_matrix(rng, 3, kSmall.lane_dim), qt, st, p),
                         ref_skg_lt(qt, st, p)),
            1e-14);
}

TEST(SkgLl, SelfLoopOnlyWithoutEdges) {
  CounterRng rng(9);
  SgnnParams p = SgnnParams::make(kSmall, 9);
  p.beta_ll = 1.0;
  LayerState st = LayerState::empty(3, 1);
  const DenseMatrix q = random_matrix(rng, 3, kSmall.lane_dim);
  EXPECT_LT(max_diff(skg_ll_propagate(q, st, p), matmul_nt(q, p.w_ll[2])), 1e-15);
}

TEST(SkgLl, SingleEdgeRoles) {
  CounterRng rng(10);
  SgnnParams p = SgnnParams::make(kSmall, 10);
  p.w_ll[2] *= 0.0;  // isolate the two edge roles
  const LayerState st{DenseMatrix{{0, 1}, {0, 0}}, DenseMatrix(2, 1), DenseMatrix(kNumAttributes, 1)};
  const DenseMatrix q = random_matrix(rng, 2, kSmall.lane_dim);
  const DenseMatrix out = skg_ll_propagate(q, st, p);
  const DenseMatrix succ = matmul_nt(q, p.w_ll[0]), pred = matmul_nt(q, p.w_ll[1]);
  for (std::size_t f = 0; f < kSmall.lane_dim; ++f) {
    EXPECT_NEAR(out(0, f), 0.5 * succ(1, f), 1e-15);  // lane 0 hears its successor
    EXPECT_NEAR(out(1, f), 0.5 * pred(0, f), 1e-15);  // lane 1 hears its predecessor
  }
}

TEST(SkgLl, MatchesLoopOracleAndLayerZero) {
  CounterRng rng(11);
  const SgnnParams p = SgnnParams::make(kSmall, 11);
  const LayerState st = random_state(rng, 4, 1);
  const DenseMatrix q = random_matrix(rng, 4, kSmall.lane_dim);
  EXPECT_LT(max_diff(skg_ll_propagate(q, st, p), ref_skg_ll(q, st.a_ll_prev, p)), 1e-14);
  EXPECT_LT(max_diff(skg_ll_propagate(q, st, p, 0), ref_skg_ll(q, st.a_ll_prev, p, true)), 1e-14);
}

TEST(SgnnLayer, MatchesNaiveImplementation) {
  for (auto v : {SgnnVariant::kSceneGraph, SgnnVariant::kKnowledgeGraph}) {
    CounterRng rng(12);
    const SgnnParams p = SgnnParams::make(kSmall, 12);
    const LayerState st = random_state(rng, 4, 3);
    const DenseMatrix ql = random_matrix(rng, 4, kSmall.lane_dim);
    const DenseMatrix qt = random_matrix(rng, 3, kSmall.te_dim);
    const SgnnForward f = sgnn_layer(ql, qt, st, p, {v, Activation::kRelu});
    EXPECT_LT(max_diff(f.lanes, ref_layer(ql, qt, st, p, v)), 1e-13);
    EXPECT_EQ(f.te_queries, qt);
    EXPECT_LT(max_diff(f.te_embedding, ref_embed(qt, p)), 1e-14);
  }
}

TEST(SgnnLayer, BaselineDegeneration) {
  CounterRng rng(13);
  SgnnParams p = SgnnParams::make(kSmall, 13);
  p.beta_ll = p.beta_lt = 0.0;
  p.gcn_ll *= 0.0;
  p.adapter.bias *= 0.0;
  const LayerState st = random_state(rng, 4, 3);
  const DenseMatrix ql = random_matrix(rng, 4, kSmall.lane_dim);
  const SgnnForward f = sgnn_layer(ql, random_matrix(rng, 3, kSmall.te_dim), st, p,
                                   {SgnnVariant::kSceneGraph, Activation::kRelu});
  EXPECT_EQ(f.lanes, ql);
}

TEST(SgnnLayer, ZeroBetaIsSelfLoopGcn) {
  CounterRng rng(14);
  SgnnParams p = SgnnParams::make(kSmall, 14);
  p.beta_ll = p.beta_lt = 0.0;
  const LayerState st = random_state(rng, 4, 3);
  const DenseMatrix ql = random_matrix(rng, 4, kSmall.lane_dim);
  const DenseMatrix qt = random_matrix(rng, 3, kSmall.te_dim);
  const SgnnForward sg = sgnn_layer(ql, qt, st, p, {SgnnVariant::kSceneGraph, Activation::kRelu});
  const DenseMatrix self_only = gcn_propagate(ql, DenseMatrix::identity(4), p.gcn_ll);
  EXPECT_LT(max_diff(column_block(sg.concat_pre, 0, kSmall.lane_dim), self_only), 1e-12);
  EXPECT_TRUE(all_zero(column_block(sg.concat_pre, kSmall.lane_dim, kSmall.lane_dim)));

  // The knowledge-graph edge slices vanish, so the adjacency no longer matters.
  const SgnnForward skg = sgnn_layer(ql, qt, st, p);
  const SgnnForward skg_empty = sgnn_layer(ql, qt, LayerState::empty(4, 3), p);
  EXPECT_EQ(skg.lanes, skg_empty.lanes);
  EXPECT_TRUE(all_zero(skg.concat_pre));
}

TEST(SgnnLayer, LayerZeroKnowledgeGraphWithoutSelfWeight) {
  CounterRng rng(15);
  SgnnParams p = SgnnParams::make(kSmall, 15);
  p.w_ll[2] *= 0.0;
  const DenseMatrix ql = random_matrix(rng, 3, kSmall.lane_dim);
  const SgnnForward f =
      sgnn_layer(ql, random_matrix(rng, 2, kSmall.te_dim), random_state(rng, 3, 2), p, {}, 0);
  EXPECT_TRUE(all_zero(f.concat_pre));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < kSmall.lane_dim; ++c)
      EXPECT_DOUBLE_EQ(f.lanes(i, c), ql(i, c) + p.adapter.bias(0, c));
}

TEST(SgnnLayer, LocalityOfIsolatedLane) {
  CounterRng rng(16);
  const SgnnParams p = SgnnParams::make(kSmall, 16);
  LayerState st = random_state(rng, 4, 3);
  const std::size_t x = 2;
  for (std::size_t j = 0; j < 4; ++j) st.a_ll_prev(x, j) = st.a_ll_prev(j, x) = 0.0;
  for (std::size_t k = 0; k < 3; ++k) st.a_lt_prev(x, k) = 0.0;
  const DenseMatrix ql = random_matrix(rng, 4, kSmall.lane_dim);
  const DenseMatrix qt = random_matrix(rng, 3, kSmall.te_dim);
  for (auto v : {SgnnVariant::kSceneGraph, SgnnVariant::kKnowledgeGraph}) {
    const SgnnForward base = sgnn_layer(ql, qt, st, p, {v, Activation::kRelu});
    DenseMatrix ql2 = ql;
    for (std::size_t i = 0; i < 4; ++i)
      if (i != x)
        for (std::size_t c = 0; c < kSmall.lane_dim; ++c) ql2(i, c) += rng.uniform(-3, 3);
    const DenseMatrix qt2 = random_matrix(rng, 3, kSmall.te_dim);
    const SgnnForward moved = sgnn_layer(ql2, qt2, st, p, {v, Activation::kRelu});
    for (std::size_t c = 0; c < kSmall.lane_dim; ++c) EXPECT_EQ(base.lanes(x, c), moved.lanes(x, c));
  }
}

TEST(SgnnLayer, PermutationEquivariance) {
  CounterRng rng(17);
  const SgnnParams p = SgnnParams::make(kSmall, 17);
  const std::size_t n = 5;
  const LayerState st = random_state(rng, n, 3);
  const DenseMatrix ql = random_matrix(rng, n, kSmall.lane_dim);
  const DenseMatrix qt = random_matrix(rng, 3, kSmall.te_dim);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  LayerState ps = st;
  DenseMatrix pql(n, kSmall.lane_dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) ps.a_ll_prev(i, j) = st.a_ll_prev(perm[i], perm[j]);
    for (std::size_t k = 0; k < 3; ++k) ps.a_lt_prev(i, k) = st.a_lt_prev(perm[i], k);
    for (std::size_t c = 0; c < kSmall.lane_dim; ++c) pql(i, c) = ql(perm[i], c);
  }
  for (auto v : {SgnnVariant::kSceneGraph, SgnnVariant::kKnowledgeGraph}) {
    const DenseMatrix a = sgnn_layer(ql, qt, st, p, {v, Activation::kRelu}).lanes;
    const DenseMatrix b = sgnn_layer(pql, qt, ps, p, {v, Activation::kRelu}).lanes;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < kSmall.lane_dim; ++c) EXPECT_NEAR(b(i, c), a(perm[i], c), 1e-13);
  }
}

TEST(SgnnLayer, PropagationIsLinearInBeta) {
  CounterRng rng(18);
  SgnnParams p = SgnnParams::make(kSmall, 18);
  const LayerState st = random_state(rng, 4, 3);
  const DenseMatrix ql = random_matrix(rng, 4, kSmall.lane_dim);
  const DenseMatrix qt = random_matrix(rng, 3, kSmall.te_dim);
  auto prop = [&](SgnnVariant v, double beta) {
    p.beta_ll = p.beta_lt = beta;
    return sgnn_layer(ql, qt, st, p, {v, Activation::kIdentity}).concat_pre;
  };
  // Knowledge graph: every term carries beta.
  const DenseMatrix k1 = prop(SgnnVariant::kKnowledgeGraph, 0.3);
  EXPECT_LT(max_diff(prop(SgnnVariant::kKnowledgeGraph, 0.9), 3.0 * k1), 1e-13);
  // Scene graph: the identity term is beta-free, the edge terms are linear.
  const DenseMatrix s0 = prop(SgnnVariant::kSceneGraph, 0.0);
  DenseMatrix d1 = prop(SgnnVariant::kSceneGraph, 0.3);
  DenseMatrix d3 = prop(SgnnVariant::kSceneGraph, 0.9);
  d1 -= s0;
  d3 -= s0;
  EXPECT_LT(max_diff(d3, 3.0 * d1), 1e-13);
}

TEST(SgnnBackward, ZeroUpstreamGivesZeroGradients) {
  CounterRng rng(19);
  const SgnnParams p = SgnnParams::make(kSmall, 19);
  const SgnnForward f = sgnn_layer(random_matrix(rng, 3, kSmall.lane_dim),
                                   random_matrix(rng, 2, kSmall.te_dim), random_state(rng, 3, 2), p);
  const SgnnGradients g = sgnn_backward(f, p, {});
  SgnnParams::visit(g.params, [](const std::string& name, const DenseMatrix& m) {
    EXPECT_TRUE(all_zero(m)) << name;
  });
  EXPECT_TRUE(all_zero(g.q_l));
  EXPECT_TRUE(all_zero(g.q_t));
}

TEST(SgnnBackward, ClosedFormOnPositiveLinearPath) {
  // Two lanes, width 2, every input and weight positive, so each ReLU is in
  // its linear region. With upstream U on the lanes:
  //   dQ_l = U + T^T (U A1^T) W^T,  dW = (T Q_l)^T (U A1^T)
  // where A1 is the lane half of the adapter weight.
  const SgnnDims d{2, 2, 2};
  SgnnParams p = SgnnParams::make(d, 20);
  SgnnParams::visit(p, [](const std::string&, DenseMatrix& m) {
    for (double& v : m.values()) v = std::abs(v) + 0.1;
  });
  const DenseMatrix ql{{0.5, 1.0}, {2.0, 0.3}};
  const DenseMatrix qt{{0.7, 0.2}};
  const LayerState st{DenseMatrix{{0, 0.8}, {0.1, 0}}, DenseMatrix{{0.4}, {0.9}},
                      DenseMatrix(kNumAttributes, 1)};
  const SgnnForward f = sgnn_layer(ql, qt, st, p, {SgnnVariant::kSceneGraph, Activation::kRelu});
  for (double v : f.concat_pre.values()) ASSERT_GT(v, 0.0);

  const DenseMatrix up{{1.0, -2.0}, {0.5, 3.0}};
  const SgnnGradients g = sgnn_backward(f, p, {up, {}, {}});
  DenseMatrix a1(2, 2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) a1(i, j) = p.adapter.weight(i, j);
  const DenseMatrix t = build_t_ll(st.a_ll_prev, p.beta_ll, 1);
  const DenseMatrix inner = matmul_nt(up, a1);  // U A1^T
  const DenseMatrix dq = up + matmul_nt(matmul_tn(t, inner), p.gcn_ll);
  const DenseMatrix dw = matmul_tn(matmul(t, ql), inner);
  EXPECT_LT(max_diff(g.q_l, dq), 1e-13);
  EXPECT_LT(max_diff(g.params.gcn_ll, dw), 1e-13);
  EXPECT_LT(max_diff(g.params.adapter.bias, DenseMatrix{{1.5, 1.0}}), 1e-15);
}

TEST(SgnnBackward, MatchesFiniteDifferences) {
  for (std::uint64_t seed : {0u, 1u}) {
    const GradCheckSuite suite = run_gradcheck(seed);
    EXPECT_TRUE(suite.passed(GradCheckOptions{})) << "max rel " << suite.max_rel_error();
    EXPECT_EQ(suite.stop_gradient_max, 0.0);
    std::size_t sgnn_blocks = 0;
    for (const auto& t : suite.tensors) sgnn_blocks += t.name.rfind("sg", 0) == 0;
    EXPECT_GT(sgnn_blocks, 0u);
  }
}

TEST(SgnnBackward, GraphStateGetsNoGradient) {
  CounterRng rng(21);
  const SgnnParams p = SgnnParams::make(kSmall, 21);
  const SgnnForward f = sgnn_layer(random_matrix(rng, 3, kSmall.lane_dim),
                                   random_matrix(rng, 2, kSmall.te_dim), random_state(rng, 3, 2), p);
  const SgnnGradients g = sgnn_backward(f, p, {random_matrix(rng, 3, kSmall.lane_dim),
                                               random_matrix(rng, 2, kSmall.te_dim), {}});
  EXPECT_TRUE(all_zero(g.a_ll_prev));
  EXPECT_TRUE(all_zero(g.a_lt_prev));
  EXPECT_TRUE(all_zero(g.te_scores));
}

TEST(SgnnStack, FirstLayerUsesInitialGraphAndFeedbackFollows) {
  CounterRng rng(22);
  const std::vector<SgnnParams> layers{SgnnParams::make(kSmall, 1), SgnnParams::make(kSmall, 2),
                                       SgnnParams::make(kSmall, 3)};
  const DenseMatrix ql = random_matrix(rng, 3, kSmall.lane_dim);
  const DenseMatrix qt = random_matrix(rng, 2, kSmall.te_dim);
  const LayerState fed = random_state(rng, 3, 2);
  std::vector<std::size_t> calls;
  const auto out = run_sgnn_stack(ql, qt, layers, {}, LayerState::empty(3, 2),
                                  [&](std::size_t i, const SgnnForward&) {
                                    calls.push_back(i);
                                    return fed;
                                  });
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(calls, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(out[0].layer_index, 0u);
  EXPECT_LT(max_diff(out[0].lanes, sgnn_layer(ql, qt, LayerState::empty(3, 2), layers[0], {}, 0).lanes),
            1e-15);
  EXPECT_LT(max_diff(out[2].lanes, sgnn_layer(out[1].lanes, qt, fed, layers[2], {}, 2).lanes), 1e-15);
}

TEST(SgnnParamsTest, DeterministicAndShapeChecked) {
  const SgnnParams a = SgnnParams::make(kSmall, 42), b = SgnnParams::make(kSmall, 42);
  EXPECT_EQ(a.gcn_ll, b.gcn_ll);
  EXPECT_EQ(a.w_lt[12], b.w_lt[12]);
  EXPECT_NE(a.gcn_ll, SgnnParams::make(kSmall, 43).gcn_ll);
  const double bound = 1.0 / std::sqrt(static_cast<double>(kSmall.lane_dim));
  for (double v : a.gcn_ll.values()) EXPECT_LE(std::abs(v), bound);
  SgnnParams bad = a;
  bad.beta_ll = 1.5;
  EXPECT_THROW(bad.check_shapes(), InvalidInput);
  EXPECT_FALSE(SgnnParams::make(kSmall, 1, false).adapter.has_bias());
}
