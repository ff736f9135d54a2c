#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lanetopo/heads.hpp"
#include "lanetopo/losses.hpp"
#include "lanetopo/rng.hpp"
#include "lanetopo/sgnn.hpp"

namespace lanetopo {

struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so entries whose true
  /// gradient is ~0 are judged by absolute error instead.
  double floor = 1e-3;
};

struct TensorCheck {
  std::string name;
  std::size_t entries = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;

  bool passed(const GradCheckOptions& o) const { return max_rel_error < o.tolerance; }
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences of `objective()` over every entry of `x`, compared
/// with `analytic`. `x` is restored afterwards.
template <typename Objective>
TensorCheck check_tensor(std::string name, DenseMatrix& x, const DenseMatrix& analytic,
                         Objective&& objective, const GradCheckOptions& o = {}) {
  if (!x.same_shape(analytic))
    throw ShapeError("check_tensor " + name + ": analytic gradient " + analytic.shape_string() +
                     " vs tensor " + x.shape_string());
  TensorCheck c{std::move(name), x.size(), 0.0, 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    double& v = x.values()[i];
    const double saved = v;
    v = saved + o.eps;
    const double up = objective();
    v = saved - o.eps;
    const double down = objective();
    v = saved;
    const double numeric = (up - down) / (2.0 * o.eps);
    const double a = analytic.values()[i];
    c.max_abs_error = std::max(c.max_abs_error, std::abs(a - numeric));
    c.max_rel_error = std::max(c.max_rel_error, relative_error(a, numeric, o.floor));
  }
  return c;
}

/// Checks every tensor reachable through `Params::visit`.
template <typename Params, typename Objective>
void check_params(const std::string& prefix, Params& params, const Params& analytic,
                  Objective&& objective, const GradCheckOptions& o, std::vector<TensorCheck>& out) {
  std::vector<const DenseMatrix*> grads;
  Params::visit(analytic, [&](const std::string&, const DenseMatrix& m) { grads.push_back(&m); });
  std::size_t k = 0;
  Params::visit(params, [&](const std::string& name, DenseMatrix& m) {
    out.push_back(check_tensor(prefix + name, m, *grads[k++], objective, o));
  });
}

/// Fills a matrix with uniform(lo, hi) draws.
inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, CounterRng& rng,
                                 double lo = -1.0, double hi = 1.0) {
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

inline double weighted_sum(const DenseMatrix& a, const DenseMatrix& w) {
  a.require_same_shape(w, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * w.values()[i];
  return s;
}

// ---------------------------------------------------------------------------
// Suite over every differentiable block, at small sizes.

struct GradCheckSuite {
  std::vector<TensorCheck> tensors;
  /// Largest entry of the reported gradients for A_ll_prev, A_lt_prev and S_t.
  double stop_gradient_max = 0.0;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& t : tensors) m = std::max(m, t.max_rel_error);
    return m;
  }
  bool passed(const GradCheckOptions& o) const {
    return max_rel_error() < o.tolerance && stop_gradient_max == 0.0;
  }
};

namespace detail {

struct SmallSizes {
  SgnnDims sgnn{6, 5, 7};
  HeadDims heads{6, 5, 6, 4};
  std::size_t n_lanes = 4;
  std::size_t n_tes = 3;
};

inline LayerState random_state(std::size_t n_l, std::size_t n_t, CounterRng& rng) {
  return {random_matrix(n_l, n_l, rng, 0.0, 1.0), random_matrix(n_l, n_t, rng, 0.0, 1.0),
          random_matrix(kNumAttributes, n_t, rng, 0.0, 1.0)};
}

inline void check_sgnn(SgnnVariant variant, std::uint64_t seed, const SmallSizes& s,
                       const GradCheckOptions& o, GradCheckSuite& suite) {
  CounterRng rng(seed, 0x4743'0001 + static_cast<std::uint64_t>(variant));
  SgnnParams params = SgnnParams::make(s.sgnn, seed);
  QuerySet q_l = random_matrix(s.n_lanes, s.sgnn.lane_dim, rng);
  QuerySet q_t = random_matrix(s.n_tes, s.sgnn.te_dim, rng);
  const LayerState state = random_state(s.n_lanes, s.n_tes, rng);
  const SgnnOptions options{variant, Activation::kRelu};
  const SgnnUpstream up{random_matrix(s.n_lanes, s.sgnn.lane_dim, rng),
                        random_matrix(s.n_tes, s.sgnn.te_dim, rng),
                        random_matrix(s.n_tes, s.sgnn.te_dim, rng)};
  auto objective = [&] {
    const auto f = sgnn_layer(q_l, q_t, state, params, options, 1);
    return weighted_sum(f.lanes, up.lanes) + weighted_sum(f.te_embedding, up.te_embedding) +
           weighted_sum(f.te_queries, up.te_queries);
  };
  const auto g = sgnn_backward(sgnn_layer(q_l, q_t, state, params, options, 1), params, up);
  const std::string prefix =
      variant == SgnnVariant::kSceneGraph ? "sgnn[sg]." : "sgnn[skg].";
  check_params(prefix, params, g.params, objective, o, suite.tensors);
  suite.tensors.push_back(check_tensor(prefix + "q_l", q_l, g.q_l, objective, o));
  suite.tensors.push_back(check_tensor(prefix + "q_t", q_t, g.q_t, objective, o));
  for (const auto* m : {&g.a_ll_prev, &g.a_lt_prev, &g.te_scores})
    for (double v : m->values()) suite.stop_gradient_max = std::max(suite.stop_gradient_max, std::abs(v));
}

inline void check_topology(std::uint64_t seed, const SmallSizes& s, const GradCheckOptions& o,
                           GradCheckSuite& suite) {
  CounterRng rng(seed, 0x4743'0010);
  CounterRng prng(seed, 0x4743'0011);
  TopologyParams params = TopologyParams::make(s.heads.lane_dim, s.heads.te_dim, s.heads, prng);
  QuerySet q_a = random_matrix(s.n_lanes, s.heads.lane_dim, rng);
  QuerySet q_b = random_matrix(s.n_tes, s.heads.te_dim, rng);
  const DenseMatrix up = random_matrix(s.n_lanes, s.n_tes, rng);
  auto objective = [&] { return weighted_sum(topology_head(q_a, q_b, params).logits, up); };
  const auto g = topology_backward(topology_head(q_a, q_b, params), params, up);
  check_params("topology.", params, g.params, objective, o, suite.tensors);
  suite.tensors.push_back(check_tensor("topology.q_a", q_a, g.q_a, objective, o));
  suite.tensors.push_back(check_tensor("topology.q_b", q_b, g.q_b, objective, o));
}

/// Detection heads only; the topology blocks of HeadParams are skipped
/// because detection_heads does not read them.
inline void check_detection(std::uint64_t seed, const SmallSizes& s, const GradCheckOptions& o,
                            GradCheckSuite& suite) {
  CounterRng rng(seed, 0x4743'0020);
  HeadParams params = HeadParams::make(s.heads, seed);
  QuerySet q_l = random_matrix(s.n_lanes, s.heads.lane_dim, rng);
  QuerySet q_t = random_matrix(s.n_tes, s.heads.te_dim, rng);
  const DetectionUpstream up{random_matrix(s.n_tes, kNumAttributes, rng),
                             random_matrix(s.n_tes, 4, rng), random_matrix(s.n_lanes, 1, rng),
                             random_matrix(s.n_lanes, 3 * kLanePoints, rng)};
  auto objective = [&] {
    const auto f = detection_heads(q_l, q_t, params);
    return weighted_sum(f.te_logits, up.te_logits) + weighted_sum(f.te_box_norm, up.te_box_norm) +
           weighted_sum(f.lc_logits, up.lc_logits) + weighted_sum(f.lc_points, up.lc_points);
  };
  const auto g = detection_backward(detection_heads(q_l, q_t, params), params, up);
  std::vector<TensorCheck> all;
  check_params("detection.", params, g.params, objective, o, all);
  for (auto& t : all)
    if (t.name.rfind("detection.topo_", 0) != 0) suite.tensors.push_back(std::move(t));
  suite.tensors.push_back(check_tensor("detection.q_l", q_l, g.q_l, objective, o));
  suite.tensors.push_back(check_tensor("detection.q_t", q_t, g.q_t, objective, o));
}

/// A small ground-truth frame inside the default BEV range and image.
inline FrameGraph random_training_frame(std::size_t n_lanes, std::size_t n_tes, CounterRng& rng) {
  FrameGraph gt;
  gt.frame_id = "gradcheck";
  for (std::size_t i = 0; i < n_lanes; ++i) {
    Centerline l;
    const double x0 = rng.uniform(-40.0, 0.0), y0 = rng.uniform(-20.0, 20.0);
    const double dx = rng.uniform(2.0, 4.0), dy = rng.uniform(-0.5, 0.5);
    for (std::size_t k = 0; k < kLanePoints; ++k)
      l.points.push_back({x0 + dx * static_cast<double>(k), y0 + dy * static_cast<double>(k),
                          rng.uniform(-0.5, 0.5)});
    gt.lanes.push_back(std::move(l));
  }
  for (std::size_t k = 0; k < n_tes; ++k) {
    const double x = rng.uniform(100.0, 1200.0), y = rng.uniform(100.0, 1200.0);
    gt.tes.push_back(TrafficElement::ground_truth(
        {x, y, x + rng.uniform(50.0, 300.0), y + rng.uniform(50.0, 300.0)},
        attribute_from_index(static_cast<int>(rng.index(kNumAttributes)))));
  }
  gt.adj_ll = DenseMatrix(n_lanes, n_lanes);
  gt.adj_lt = DenseMatrix(n_lanes, n_tes);
  for (double& v : gt.adj_ll.values()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  for (double& v : gt.adj_lt.values()) v = rng.bernoulli(0.4) ? 1.0 : 0.0;
  return gt;
}

/// Loss through every head, with the matching computed once and then held
/// fixed. There is one more query than GT of each kind, so the background
/// terms are exercised too.
inline void check_total_loss(std::uint64_t seed, const SmallSizes& s, const GradCheckOptions& o,
                             GradCheckSuite& suite) {
  CounterRng rng(seed, 0x4743'0030);
  HeadParams params = HeadParams::make(s.heads, seed ^ 0x5a5a);
  QuerySet lanes = random_matrix(s.n_lanes, s.heads.lane_dim, rng);
  QuerySet te_emb = random_matrix(s.n_tes, s.heads.te_dim, rng);
  QuerySet te_q = random_matrix(s.n_tes, s.heads.te_dim, rng);
  const FrameGraph gt = random_training_frame(s.n_lanes - 1, s.n_tes - 1, rng);
  const LossWeights w{};
  const auto base = run_heads(lanes, te_emb, te_q, params);
  const FrameMatchings m = match_frame(base.prediction(), gt, w);
  auto objective = [&] {
    return total_loss(run_heads(lanes, te_emb, te_q, params).prediction(), gt, m, w).total;
  };
  PredictionGradients d;
  total_loss(base.prediction(), gt, m, w, {}, &d);
  const auto g = loss_backward(base, params, d);
  check_params("loss.", params, g.params, objective, o, suite.tensors);
  suite.tensors.push_back(check_tensor("loss.lanes", lanes, g.lanes, objective, o));
  suite.tensors.push_back(check_tensor("loss.te_embedding", te_emb, g.te_embedding, objective, o));
  suite.tensors.push_back(check_tensor("loss.te_queries", te_q, g.te_queries, objective, o));
}

}  // namespace detail

/// Finite-difference check of sgnn_layer (both variants), topology_head,
/// detection_heads and total_loss at small sizes for one seed.
inline GradCheckSuite run_gradcheck(std::uint64_t seed, const GradCheckOptions& o = {}) {
  const detail::SmallSizes s;
  GradCheckSuite suite;
  detail::check_sgnn(SgnnVariant::kSceneGraph, seed, s, o, suite);
  detail::check_sgnn(SgnnVariant::kKnowledgeGraph, seed, s, o, suite);
  detail::check_topology(seed, s, o, suite);
  detail::check_detection(seed, s, o, suite);
  detail::check_total_loss(seed, s, o, suite);
  return suite;
}

}  // namespace lanetopo
