#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "lanetopo/core.hpp"
#include "lanetopo/matrix.hpp"
#include "lanetopo/nn.hpp"
#include "lanetopo/rng.hpp"

namespace lanetopo {

/// N x F query features, one row per instance.
using QuerySet = DenseMatrix;

enum class SgnnVariant { kSceneGraph, kKnowledgeGraph };
enum class Activation { kRelu, kIdentity };

/// Lane-graph relation classes, in the order the relation tensor is stacked.
enum class LaneRelation : std::size_t { kSuccessor = 0, kPredecessor = 1, kSelfLoop = 2 };
inline constexpr std::size_t kNumLaneRelations = 3;

struct SgnnDims {
  std::size_t lane_dim = 256;
  std::size_t te_dim = 256;
  std::size_t embed_hidden = 512;
};

/// Learnable tensors of one SGNN layer, covering both variants.
///
/// Knowledge-graph weights act on column vectors (out = W q), the GCN weights
/// on row features (out = Q W).
struct SgnnParams {
  SgnnDims dims;
  Linear embed_in;   // te_dim -> embed_hidden
  Linear embed_out;  // embed_hidden -> te_dim
  DenseMatrix gcn_ll;  // lane_dim x lane_dim
  DenseMatrix gcn_lt;  // te_dim x lane_dim
  std::array<DenseMatrix, kNumLaneRelations> w_ll;  // each lane_dim x lane_dim
  std::array<DenseMatrix, kNumAttributes> w_lt;     // each lane_dim x te_dim
  Linear adapter;    // 2 lane_dim -> lane_dim
  double beta_ll = 0.5;
  double beta_lt = 0.5;
  double dropout = 0.1;  // recorded only; inference never samples it

  static SgnnParams make(const SgnnDims& dims, std::uint64_t seed, bool adapter_bias = true) {
    CounterRng rng(seed, 0x5347'4e4e);
    SgnnParams p;
    p.dims = dims;
    p.embed_in = Linear::make(dims.te_dim, dims.embed_hidden, rng);
    p.embed_out = Linear::make(dims.embed_hidden, dims.te_dim, rng);
    p.gcn_ll = DenseMatrix(dims.lane_dim, dims.lane_dim);
    init_uniform(p.gcn_ll, dims.lane_dim, rng);
    p.gcn_lt = DenseMatrix(dims.te_dim, dims.lane_dim);
    init_uniform(p.gcn_lt, dims.te_dim, rng);
    for (auto& w : p.w_ll) {
      w = DenseMatrix(dims.lane_dim, dims.lane_dim);
      init_uniform(w, dims.lane_dim, rng);
    }
    for (auto& w : p.w_lt) {
      w = DenseMatrix(dims.lane_dim, dims.te_dim);
      init_uniform(w, dims.te_dim, rng);
    }
    p.adapter = Linear::make(2 * dims.lane_dim, dims.lane_dim, rng, adapter_bias);
    return p;
  }

  /// Same shapes, every tensor zero; the container for gradients.
  SgnnParams zeros_like() const {
    SgnnParams z = *this;
    visit(z, [](const std::string&, DenseMatrix& m) { m *= 0.0; });
    z.beta_ll = z.beta_lt = 0.0;
    return z;
  }

  /// Calls fn(name, tensor) for every learnable tensor in a fixed order.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    Linear::visit(self.embed_in, "embed.0", fn);
    Linear::visit(self.embed_out, "embed.1", fn);
    fn(std::string("gcn_ll"), self.gcn_ll);
    fn(std::string("gcn_lt"), self.gcn_lt);
    for (std::size_t c = 0; c < kNumLaneRelations; ++c)
      fn("w_ll." + std::to_string(c), self.w_ll[c]);
    for (std::size_t c = 0; c < kNumAttributes; ++c)
      fn("w_lt." + std::to_string(c), self.w_lt[c]);
    Linear::visit(self.adapter, "adapter", fn);
  }

  void check_shapes() const {
    require_shape(embed_in.weight, dims.te_dim, dims.embed_hidden, "embed.0.weight");
    require_shape(embed_out.weight, dims.embed_hidden, dims.te_dim, "embed.1.weight");
    require_shape(gcn_ll, dims.lane_dim, dims.lane_dim, "gcn_ll");
    require_shape(gcn_lt, dims.te_dim, dims.lane_dim, "gcn_lt");
    for (const auto& w : w_ll) require_shape(w, dims.lane_dim, dims.lane_dim, "w_ll");
    for (const auto& w : w_lt) require_shape(w, dims.lane_dim, dims.te_dim, "w_lt");
    require_shape(adapter.weight, 2 * dims.lane_dim, dims.lane_dim, "adapter.weight");
    if (!(beta_ll >= 0.0 && beta_ll <= 1.0 && beta_lt >= 0.0 && beta_lt <= 1.0))
      throw InvalidInput("SgnnParams: beta must lie in [0,1]");
  }
};

/// Graph inputs to one layer, produced by the previous layer's heads. No
/// gradient flows into any of these.
struct LayerState {
  DenseMatrix a_ll_prev;  // N_l x N_l
  DenseMatrix a_lt_prev;  // N_l x N_t
  DenseMatrix te_scores;  // 13 x N_t

  static LayerState empty(std::size_t n_lanes, std::size_t n_tes) {
    return {DenseMatrix(n_lanes, n_lanes), DenseMatrix(n_lanes, n_tes),
            DenseMatrix(kNumAttributes, n_tes)};
  }
};

struct SgnnOptions {
  SgnnVariant variant = SgnnVariant::kKnowledgeGraph;
  Activation gcn_activation = Activation::kRelu;
};

// ---------------------------------------------------------------------------
// Building blocks.

/// TE embedding: Linear -> ReLU -> (dropout, identity at inference) -> Linear.
inline QuerySet embed_te(const QuerySet& q_t, const SgnnParams& params,
                         DenseMatrix* hidden_pre = nullptr) {
  require_shape(q_t, q_t.rows(), params.dims.te_dim, "embed_te input");
  DenseMatrix h = params.embed_in.forward(q_t);
  if (hidden_pre) *hidden_pre = h;
  return params.embed_out.forward(relu(std::move(h)));
}

/// Lane message weights: identity at layer 0, otherwise
/// beta (A + A^T) + I.
inline DenseMatrix build_t_ll(const DenseMatrix& a_prev, double beta_ll, std::size_t layer_index) {
  if (a_prev.rows() != a_prev.cols())
    throw ShapeError("build_t_ll: adjacency must be square, got " + a_prev.shape_string());
  const std::size_t n = a_prev.rows();
  DenseMatrix t = DenseMatrix::identity(n);
  if (layer_index == 0) return t;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) t(i, j) += beta_ll * (a_prev(i, j) + a_prev(j, i));
  return t;
}

/// Lane / TE message weights: zero at layer 0, otherwise beta A.
inline DenseMatrix build_t_lt(const DenseMatrix& a_prev, double beta_lt, std::size_t layer_index,
                              std::size_t n_lanes, std::size_t n_tes) {
  require_shape(a_prev, n_lanes, n_tes, "build_t_lt");
  if (layer_index == 0) return DenseMatrix(n_lanes, n_tes);
  return beta_lt * a_prev;
}

inline DenseMatrix activate(DenseMatrix m, Activation a) {
  return a == Activation::kRelu ? relu(std::move(m)) : m;
}

/// sigma(T Q W).
inline QuerySet gcn_propagate(const QuerySet& q, const DenseMatrix& t, const DenseMatrix& w,
                              Activation activation = Activation::kRelu) {
  if (t.cols() != q.rows())
    throw ShapeError("gcn_propagate: T " + t.shape_string() + " vs Q " + q.shape_string());
  if (q.cols() != w.rows())
    throw ShapeError("gcn_propagate: Q " + q.shape_string() + " vs W " + w.shape_string());
  return activate(matmul(matmul(t, q), w), activation);
}

/// Relation tensor slices of the lane graph: A, A^T and I. At layer 0 the
/// first two are zero.
inline std::array<DenseMatrix, kNumLaneRelations> lane_relation_slices(const DenseMatrix& a_prev,
                                                                       std::size_t layer_index) {
  const std::size_t n = a_prev.rows();
  if (layer_index == 0) return {DenseMatrix(n, n), DenseMatrix(n, n), DenseMatrix::identity(n)};
  return {a_prev, a_prev.transposed(), DenseMatrix::identity(n)};
}

/// Score-weighted lane update from traffic elements: for lane x,
///   sum_y sum_c beta S(c, y) K(x, y) W_c q_t(y).
inline QuerySet skg_lt_propagate(const QuerySet& q_l, const QuerySet& q_t_embedded,
                                 const LayerState& state, const SgnnParams& params,
                                 std::size_t layer_index = 1) {
  const std::size_t n_l = q_l.rows(), n_t = q_t_embedded.rows();
  require_shape(state.a_lt_prev, n_l, n_t, "skg_lt_propagate: A_lt");
  require_shape(state.te_scores, kNumAttributes, n_t, "skg_lt_propagate: S_t");
  QuerySet out(n_l, params.dims.lane_dim);
  if (layer_index == 0) return out;
  for (std::size_t c = 0; c < kNumAttributes; ++c) {
    DenseMatrix m(n_l, n_t);
    bool any = false;
    for (std::size_t x = 0; x < n_l; ++x)
      for (std::size_t y = 0; y < n_t; ++y) {
        m(x, y) = params.beta_lt * state.te_scores(c, y) * state.a_lt_prev(x, y);
        any = any || m(x, y) != 0.0;
      }
    if (!any) continue;
    out += matmul(m, matmul_nt(q_t_embedded, params.w_lt[c]));
  }
  return out;
}

/// Relation-typed lane update: for lane x,
///   sum_y sum_{c in succ, pred, self} beta K_c(x, y) W_c q_l(y).
inline QuerySet skg_ll_propagate(const QuerySet& q_l, const LayerState& state,
                                 const SgnnParams& params, std::size_t layer_index = 1) {
  const std::size_t n_l = q_l.rows();
  require_shape(state.a_ll_prev, n_l, n_l, "skg_ll_propagate: A_ll");
  const auto slices = lane_relation_slices(state.a_ll_prev, layer_index);
  QuerySet out(n_l, params.dims.lane_dim);
  for (std::size_t c = 0; c < kNumLaneRelations; ++c)
    out += params.beta_ll * matmul(slices[c], matmul_nt(q_l, params.w_ll[c]));
  return out;
}

// ---------------------------------------------------------------------------
// Full layer with recorded intermediates.

struct SgnnForward {
  QuerySet lanes;         // refined lane queries Q_l + R
  QuerySet te_embedding;  // embedded TE queries, fed to the lane/TE topology head
  QuerySet te_queries;    // TE queries passed through unchanged to the TE detection head

  // Intermediates for backward.
  SgnnOptions options;
  std::size_t layer_index = 0;
  QuerySet q_l, q_t;
  DenseMatrix embed_pre;
  DenseMatrix t_ll, t_lt;                 // scene-graph weights
  DenseMatrix ll_pre, lt_pre;             // pre-activation propagations
  std::array<DenseMatrix, kNumLaneRelations> ll_slices;
  std::array<DenseMatrix, kNumAttributes> lt_mix;  // beta K diag(S_c)
  DenseMatrix concat_pre;
};

inline SgnnForward sgnn_layer(const QuerySet& q_l, const QuerySet& q_t, const LayerState& state,
                              const SgnnParams& params, const SgnnOptions& options = {},
                              std::size_t layer_index = 1) {
  params.check_shapes();
  const std::size_t n_l = q_l.rows(), n_t = q_t.rows();
  require_shape(q_l, n_l, params.dims.lane_dim, "sgnn_layer: q_l");
  require_shape(q_t, n_t, params.dims.te_dim, "sgnn_layer: q_t");
  require_shape(state.a_ll_prev, n_l, n_l, "sgnn_layer: A_ll");
  require_shape(state.a_lt_prev, n_l, n_t, "sgnn_layer: A_lt");
  require_shape(state.te_scores, kNumAttributes, n_t, "sgnn_layer: S_t");

  SgnnForward f;
  f.options = options;
  f.layer_index = layer_index;
  f.q_l = q_l;
  f.q_t = q_t;
  f.te_queries = q_t;
  f.te_embedding = embed_te(q_t, params, &f.embed_pre);

  DenseMatrix prop_ll, prop_lt;
  if (options.variant == SgnnVariant::kSceneGraph) {
    f.t_ll = build_t_ll(state.a_ll_prev, params.beta_ll, layer_index);
    f.t_lt = build_t_lt(state.a_lt_prev, params.beta_lt, layer_index, n_l, n_t);
    f.ll_pre = matmul(matmul(f.t_ll, q_l), params.gcn_ll);
    f.lt_pre = matmul(matmul(f.t_lt, f.te_embedding), params.gcn_lt);
    prop_ll = activate(f.ll_pre, options.gcn_activation);
    prop_lt = activate(f.lt_pre, options.gcn_activation);
  } else {
    f.ll_slices = lane_relation_slices(state.a_ll_prev, layer_index);
    prop_ll = DenseMatrix(n_l, params.dims.lane_dim);
    for (std::size_t c = 0; c < kNumLaneRelations; ++c) {
      f.ll_slices[c] *= params.beta_ll;
      prop_ll += matmul(f.ll_slices[c], matmul_nt(q_l, params.w_ll[c]));
    }
    prop_lt = DenseMatrix(n_l, params.dims.lane_dim);
    for (std::size_t c = 0; c < kNumAttributes; ++c) {
      DenseMatrix m(n_l, n_t);
      if (layer_index != 0) {
        for (std::size_t x = 0; x < n_l; ++x)
          for (std::size_t y = 0; y < n_t; ++y)
            m(x, y) = params.beta_lt * state.te_scores(c, y) * state.a_lt_prev(x, y);
      }
      prop_lt += matmul(m, matmul_nt(f.te_embedding, params.w_lt[c]));
      f.lt_mix[c] = std::move(m);
    }
  }

  f.concat_pre = hconcat(prop_ll, prop_lt);
  f.lanes = q_l + params.adapter.forward(relu(f.concat_pre));
  return f;
}

/// Upstream gradients for the three layer outputs; empty matrices are
/// treated as zero.
struct SgnnUpstream {
  DenseMatrix lanes;
  DenseMatrix te_embedding;
  DenseMatrix te_queries;
};

struct SgnnGradients {
  QuerySet q_l;
  QuerySet q_t;
  SgnnParams params;
  // Stop-gradient inputs: always zero, reported so callers can assert it.
  DenseMatrix a_ll_prev;
  DenseMatrix a_lt_prev;
  DenseMatrix te_scores;
};

/// Exact reverse-mode derivatives of sgnn_layer. A_ll_prev, A_lt_prev and
/// S_t are treated as constants.
inline SgnnGradients sgnn_backward(const SgnnForward& f, const SgnnParams& params,
                                   const SgnnUpstream& up) {
  if (f.q_l.empty() && f.lanes.empty()) throw InvalidInput("sgnn_backward: missing intermediates");
  const std::size_t n_l = f.q_l.rows(), n_t = f.q_t.rows();
  const std::size_t dl = params.dims.lane_dim;

  SgnnGradients g;
  g.params = params.zeros_like();
  g.a_ll_prev = DenseMatrix(n_l, n_l);
  g.a_lt_prev = DenseMatrix(n_l, n_t);
  g.te_scores = DenseMatrix(kNumAttributes, n_t);

  DenseMatrix d_lanes = up.lanes.empty() ? DenseMatrix(n_l, dl) : up.lanes;
  require_shape(d_lanes, n_l, dl, "sgnn_backward: upstream lanes");
  DenseMatrix d_emb =
      up.te_embedding.empty() ? DenseMatrix(n_t, params.dims.te_dim) : up.te_embedding;
  require_shape(d_emb, n_t, params.dims.te_dim, "sgnn_backward: upstream te_embedding");

  // Residual and adapter.
  DenseMatrix dq_l = d_lanes;
  const DenseMatrix concat_act = relu(f.concat_pre);
  DenseMatrix d_concat = params.adapter.backward(concat_act, d_lanes, g.params.adapter);
  d_concat = relu_backward(std::move(d_concat), f.concat_pre);
  const DenseMatrix d_ll = column_block(d_concat, 0, dl);
  const DenseMatrix d_lt = column_block(d_concat, dl, dl);

  if (f.options.variant == SgnnVariant::kSceneGraph) {
    const DenseMatrix dz_ll = f.options.gcn_activation == Activation::kRelu
                                  ? relu_backward(d_ll, f.ll_pre)
                                  : d_ll;
    const DenseMatrix tq = matmul(f.t_ll, f.q_l);
    g.params.gcn_ll += matmul_tn(tq, dz_ll);
    dq_l += matmul_tn(f.t_ll, matmul_nt(dz_ll, params.gcn_ll));

    const DenseMatrix dz_lt = f.options.gcn_activation == Activation::kRelu
                                  ? relu_backward(d_lt, f.lt_pre)
                                  : d_lt;
    const DenseMatrix te = matmul(f.t_lt, f.te_embedding);
    g.params.gcn_lt += matmul_tn(te, dz_lt);
    d_emb += matmul_tn(f.t_lt, matmul_nt(dz_lt, params.gcn_lt));
  } else {
    for (std::size_t c = 0; c < kNumLaneRelations; ++c) {
      // prop = M_c Q W_c^T  =>  dP = M_c^T dprop, dW_c = dP^T Q, dQ += dP W_c
      const DenseMatrix dp = matmul_tn(f.ll_slices[c], d_ll);
      g.params.w_ll[c] += matmul_tn(dp, f.q_l);
      dq_l += matmul(dp, params.w_ll[c]);
    }
    for (std::size_t c = 0; c < kNumAttributes; ++c) {
      const DenseMatrix dp = matmul_tn(f.lt_mix[c], d_lt);
      g.params.w_lt[c] += matmul_tn(dp, f.te_embedding);
      d_emb += matmul(dp, params.w_lt[c]);
    }
  }

  // TE embedding.
  const DenseMatrix hidden = relu(f.embed_pre);
  DenseMatrix d_hidden = params.embed_out.backward(hidden, d_emb, g.params.embed_out);
  d_hidden = relu_backward(std::move(d_hidden), f.embed_pre);
  g.q_t = params.embed_in.backward(f.q_t, d_hidden, g.params.embed_in);
  if (!up.te_queries.empty()) g.q_t += up.te_queries;
  g.q_l = std::move(dq_l);
  return g;
}

/// Runs `layers` stacked SGNN layers. `next_state(i, output)` supplies the
/// graph state consumed by layer i + 1.
inline std::vector<SgnnForward> run_sgnn_stack(
    const QuerySet& q_l, const QuerySet& q_t, const std::vector<SgnnParams>& layers,
    const SgnnOptions& options, LayerState initial_state,
    const std::function<LayerState(std::size_t, const SgnnForward&)>& next_state) {
  std::vector<SgnnForward> out;
  out.reserve(layers.size());
  LayerState state = std::move(initial_state);
  QuerySet lanes = q_l;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.push_back(sgnn_layer(lanes, q_t, state, layers[i], options, i));
    lanes = out.back().lanes;
    if (i + 1 < layers.size()) state = next_state(i, out.back());
  }
  return out;
}

}  // namespace lanetopo
