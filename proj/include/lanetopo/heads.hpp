#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "lanetopo/assignment.hpp"
#include "lanetopo/core.hpp"
#include "lanetopo/focal.hpp"
#include "lanetopo/nn.hpp"
#include "lanetopo/sgnn.hpp"

namespace lanetopo {

struct HeadDims {
  std::size_t lane_dim = 256;
  std::size_t te_dim = 256;
  std::size_t hidden = 256;    // hidden width of the 3-layer MLPs
  std::size_t topo_dim = 128;  // per-instance reduction in the topology head
};

/// Pairwise relation head: conf(x, y) = sigmoid(top([a(q_a[x]) | b(q_b[y])])).
struct TopologyParams {
  Mlp mlp_a;
  Mlp mlp_b;
  Mlp mlp_top;

  static TopologyParams make(std::size_t dim_a, std::size_t dim_b, const HeadDims& d,
                             CounterRng& rng) {
    return {Mlp::make({dim_a, d.hidden, d.hidden, d.topo_dim}, rng),
            Mlp::make({dim_b, d.hidden, d.hidden, d.topo_dim}, rng),
            Mlp::make({2 * d.topo_dim, d.hidden, d.hidden, 1}, rng)};
  }

  TopologyParams zeros_like() const {
    return {mlp_a.zeros_like(), mlp_b.zeros_like(), mlp_top.zeros_like()};
  }

  template <typename Self, typename Fn>
  static void visit(Self& self, const std::string& prefix, Fn&& fn) {
    const std::string p = prefix.empty() ? prefix : prefix + ".";
    Mlp::visit(self.mlp_a, p + "mlp_a", fn);
    Mlp::visit(self.mlp_b, p + "mlp_b", fn);
    Mlp::visit(self.mlp_top, p + "mlp_top", fn);
  }

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    visit(self, std::string(), fn);
  }
};

struct HeadParams {
  HeadDims dims;
  Linear te_cls;  // te_dim -> 13
  Mlp te_reg;     // te_dim -> hidden -> hidden -> 4, sigmoid output (cx, cy, w, h)
  Mlp lc_cls;     // lane_dim -> hidden -> hidden -> 1, LayerNorm + ReLU between
  Mlp lc_reg;     // lane_dim -> hidden -> hidden -> 33, normalized 11 x 3 points
  TopologyParams topo_ll;
  TopologyParams topo_lt;

  static HeadParams make(const HeadDims& d, std::uint64_t seed) {
    CounterRng rng(seed, 0x4845'4144);
    HeadParams p;
    p.dims = d;
    p.te_cls = Linear::make(d.te_dim, kNumAttributes, rng);
    p.te_reg = Mlp::make({d.te_dim, d.hidden, d.hidden, 4}, rng);
    p.lc_cls = Mlp::make({d.lane_dim, d.hidden, d.hidden, 1}, rng, /*layer_norm=*/true);
    p.lc_reg = Mlp::make({d.lane_dim, d.hidden, d.hidden, 3 * kLanePoints}, rng);
    p.topo_ll = TopologyParams::make(d.lane_dim, d.lane_dim, d, rng);
    p.topo_lt = TopologyParams::make(d.lane_dim, d.te_dim, d, rng);
    return p;
  }

  HeadParams zeros_like() const {
    HeadParams z{dims,
                 te_cls.zeros_like(),
                 te_reg.zeros_like(),
                 lc_cls.zeros_like(),
                 lc_reg.zeros_like(),
                 topo_ll.zeros_like(),
                 topo_lt.zeros_like()};
    return z;
  }

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    Linear::visit(self.te_cls, "te_cls", fn);
    Mlp::visit(self.te_reg, "te_reg", fn);
    Mlp::visit(self.lc_cls, "lc_cls", fn);
    Mlp::visit(self.lc_reg, "lc_reg", fn);
    TopologyParams::visit(self.topo_ll, "topo_ll", fn);
    TopologyParams::visit(self.topo_lt, "topo_lt", fn);
  }
};

inline DenseMatrix sigmoid(DenseMatrix m) {
  for (double& v : m.values()) v = sigmoid(v);
  return m;
}

// ---------------------------------------------------------------------------
// Topology head.

struct TopologyForward {
  DenseMatrix logits;      // N_a x N_b
  DenseMatrix confidence;  // sigmoid(logits)

  DenseMatrix q_a, q_b;
  DenseMatrix reduced_a, reduced_b;
  Mlp::Cache cache_a, cache_b, cache_top;
};

inline TopologyForward topology_head(const QuerySet& q_a, const QuerySet& q_b,
                                     const TopologyParams& params) {
  if (q_a.cols() != params.mlp_a.in() || q_b.cols() != params.mlp_b.in())
    throw ShapeError("topology_head: query width " + std::to_string(q_a.cols()) + "/" +
                     std::to_string(q_b.cols()) + " does not match the head");
  TopologyForward f;
  f.q_a = q_a;
  f.q_b = q_b;
  f.reduced_a = params.mlp_a.forward(q_a, &f.cache_a);
  f.reduced_b = params.mlp_b.forward(q_b, &f.cache_b);
  const std::size_t na = q_a.rows(), nb = q_b.rows();
  const std::size_t da = f.reduced_a.cols(), db = f.reduced_b.cols();
  DenseMatrix pairs(na * nb, da + db);
  for (std::size_t x = 0; x < na; ++x) {
    for (std::size_t y = 0; y < nb; ++y) {
      auto row = pairs.row(x * nb + y);
      std::copy(f.reduced_a.row(x).begin(), f.reduced_a.row(x).end(), row.begin());
      std::copy(f.reduced_b.row(y).begin(), f.reduced_b.row(y).end(), row.begin() + da);
    }
  }
  const DenseMatrix out = params.mlp_top.forward(pairs, &f.cache_top);
  f.logits = DenseMatrix(na, nb, std::vector<double>(out.data()));
  f.confidence = sigmoid(f.logits);
  return f;
}

struct TopologyGradients {
  DenseMatrix q_a, q_b;
  TopologyParams params;
};

/// Backward from dL/dlogits.
inline TopologyGradients topology_backward(const TopologyForward& f, const TopologyParams& params,
                                           const DenseMatrix& d_logits) {
  require_shape(d_logits, f.logits.rows(), f.logits.cols(), "topology_backward");
  TopologyGradients g;
  g.params = params.zeros_like();
  const std::size_t na = f.logits.rows(), nb = f.logits.cols();
  const std::size_t da = f.reduced_a.cols(), db = f.reduced_b.cols();
  const DenseMatrix d_out(na * nb, 1, std::vector<double>(d_logits.data()));
  const DenseMatrix d_pairs = params.mlp_top.backward(f.cache_top, d_out, g.params.mlp_top);
  DenseMatrix d_ra(na, da), d_rb(nb, db);
  for (std::size_t x = 0; x < na; ++x) {
    for (std::size_t y = 0; y < nb; ++y) {
      auto row = d_pairs.row(x * nb + y);
      for (std::size_t k = 0; k < da; ++k) d_ra(x, k) += row[k];
      for (std::size_t k = 0; k < db; ++k) d_rb(y, k) += row[da + k];
    }
  }
  g.q_a = params.mlp_a.backward(f.cache_a, d_ra, g.params.mlp_a);
  g.q_b = params.mlp_b.backward(f.cache_b, d_rb, g.params.mlp_b);
  return g;
}

// ---------------------------------------------------------------------------
// Detection heads.

struct HeadConfig {
  BevRange bev_range{};
  ImageSize image{};
};

/// Converts a normalized coordinate in [0, 1] to meters along each axis.
inline Point3 denormalize_point(double nx, double ny, double nz, const BevRange& r) {
  return {r.x_min + nx * (r.x_max - r.x_min), r.y_min + ny * (r.y_max - r.y_min),
          r.z_min + nz * (r.z_max - r.z_min)};
}

inline std::array<double, 3> normalize_point(Point3 p, const BevRange& r) {
  return {(p.x - r.x_min) / (r.x_max - r.x_min), (p.y - r.y_min) / (r.y_max - r.y_min),
          (p.z - r.z_min) / (r.z_max - r.z_min)};
}

struct DetectionForward {
  DenseMatrix te_logits;    // N_t x 13
  DenseMatrix te_scores;    // sigmoid(te_logits)
  DenseMatrix te_box_norm;  // N_t x 4, normalized (cx, cy, w, h)
  std::vector<Box> te_boxes;
  DenseMatrix lc_logits;    // N_l x 1
  DenseMatrix lc_scores;
  DenseMatrix lc_points;    // N_l x 33, meters, (x, y, z) per point

  DenseMatrix q_l, q_t;
  DenseMatrix te_box_raw;
  Mlp::Cache te_reg_cache, lc_cls_cache, lc_reg_cache;

  std::vector<Centerline> lanes() const {
    std::vector<Centerline> out(lc_points.rows());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].confidence = lc_scores(i, 0);
      for (std::size_t k = 0; k < kLanePoints; ++k)
        out[i].points.push_back({lc_points(i, 3 * k), lc_points(i, 3 * k + 1),
                                 lc_points(i, 3 * k + 2)});
    }
    return out;
  }

  std::vector<TrafficElement> traffic_elements() const {
    std::vector<TrafficElement> out(te_boxes.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].box = te_boxes[i];
      for (std::size_t c = 0; c < kNumAttributes; ++c) out[i].class_scores[c] = te_scores(i, c);
      out[i].attribute = argmax_attribute(out[i].class_scores);
    }
    return out;
  }
};

/// Lane heads read the refined lane queries; the TE heads read the TE
/// queries without the embedding.
inline DetectionForward detection_heads(const QuerySet& q_l, const QuerySet& q_t,
                                        const HeadParams& params, const HeadConfig& config = {}) {
  require_shape(q_l, q_l.rows(), params.dims.lane_dim, "detection_heads: q_l");
  require_shape(q_t, q_t.rows(), params.dims.te_dim, "detection_heads: q_t");
  DetectionForward f;
  f.q_l = q_l;
  f.q_t = q_t;
  f.te_logits = params.te_cls.forward(q_t);
  f.te_scores = sigmoid(f.te_logits);
  f.te_box_raw = params.te_reg.forward(q_t, &f.te_reg_cache);
  f.te_box_norm = sigmoid(f.te_box_raw);
  for (std::size_t i = 0; i < f.te_box_norm.rows(); ++i)
    f.te_boxes.push_back(box_from_normalized_cxcywh(
        std::span<const double, 4>(f.te_box_norm.row(i).data(), 4), config.image));

  f.lc_logits = params.lc_cls.forward(q_l, &f.lc_cls_cache);
  f.lc_scores = sigmoid(f.lc_logits);
  const DenseMatrix norm = params.lc_reg.forward(q_l, &f.lc_reg_cache);
  f.lc_points = DenseMatrix(norm.rows(), norm.cols());
  for (std::size_t i = 0; i < norm.rows(); ++i) {
    for (std::size_t k = 0; k < kLanePoints; ++k) {
      const Point3 p = denormalize_point(norm(i, 3 * k), norm(i, 3 * k + 1), norm(i, 3 * k + 2),
                                         config.bev_range);
      f.lc_points(i, 3 * k) = p.x;
      f.lc_points(i, 3 * k + 1) = p.y;
      f.lc_points(i, 3 * k + 2) = p.z;
    }
  }
  return f;
}

/// Upstream gradients on detection outputs; empty means zero.
struct DetectionUpstream {
  DenseMatrix te_logits;
  DenseMatrix te_box_norm;
  DenseMatrix lc_logits;
  DenseMatrix lc_points;
};

struct DetectionGradients {
  DenseMatrix q_l, q_t;
  HeadParams params;  // only the detection blocks are populated
};

inline DetectionGradients detection_backward(const DetectionForward& f, const HeadParams& params,
                                             const DetectionUpstream& up,
                                             const HeadConfig& config = {}) {
  DetectionGradients g;
  g.params = params.zeros_like();
  const std::size_t n_l = f.q_l.rows(), n_t = f.q_t.rows();
  g.q_l = DenseMatrix(n_l, params.dims.lane_dim);
  g.q_t = DenseMatrix(n_t, params.dims.te_dim);

  if (!up.te_logits.empty()) {
    require_shape(up.te_logits, n_t, kNumAttributes, "detection_backward: te_logits");
    g.q_t += params.te_cls.backward(f.q_t, up.te_logits, g.params.te_cls);
  }
  if (!up.te_box_norm.empty()) {
    require_shape(up.te_box_norm, n_t, 4, "detection_backward: te_box_norm");
    DenseMatrix d_raw = up.te_box_norm;
    for (std::size_t i = 0; i < d_raw.size(); ++i) {
      const double s = f.te_box_norm.values()[i];
      d_raw.values()[i] *= s * (1.0 - s);
    }
    g.q_t += params.te_reg.backward(f.te_reg_cache, d_raw, g.params.te_reg);
  }
  if (!up.lc_logits.empty()) {
    require_shape(up.lc_logits, n_l, 1, "detection_backward: lc_logits");
    g.q_l += params.lc_cls.backward(f.lc_cls_cache, up.lc_logits, g.params.lc_cls);
  }
  if (!up.lc_points.empty()) {
    require_shape(up.lc_points, n_l, 3 * kLanePoints, "detection_backward: lc_points");
    const auto& r = config.bev_range;
    const std::array<double, 3> span{r.x_max - r.x_min, r.y_max - r.y_min, r.z_max - r.z_min};
    DenseMatrix d_norm = up.lc_points;
    for (std::size_t i = 0; i < d_norm.rows(); ++i)
      for (std::size_t c = 0; c < d_norm.cols(); ++c) d_norm(i, c) *= span[c % 3];
    g.q_l += params.lc_reg.backward(f.lc_reg_cache, d_norm, g.params.lc_reg);
  }
  return g;
}

}  // namespace lanetopo
