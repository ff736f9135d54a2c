#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "lanetopo/assignment.hpp"
#include "lanetopo/core.hpp"
#include "lanetopo/focal.hpp"
#include "lanetopo/geometry.hpp"
#include "lanetopo/heads.hpp"

namespace lanetopo {

struct LossWeights {
  TeCostWeights te{};
  LcCostWeights lc{};
  double top_ll = 5.0;
  double top_lt = 5.0;
  FocalParams focal{};
  /// When false, relation pairs in which neither query is matched are left
  /// out of the topology loss.
  bool unmatched_pairs_negative = true;

  void validate() const {
    for (double w : {te.cls, te.reg, te.iou, lc.cls, lc.reg, top_ll, top_lt})
      if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidInput("LossWeights: negative weight");
  }
};

/// Raw per-frame network outputs the loss is defined on.
struct FramePrediction {
  DenseMatrix te_logits;       // N_t x 13
  DenseMatrix te_box_norm;     // N_t x 4, normalized (cx, cy, w, h)
  DenseMatrix lc_logits;       // N_l x 1
  DenseMatrix lc_points;       // N_l x 33, meters
  DenseMatrix topo_ll_logits;  // N_l x N_l
  DenseMatrix topo_lt_logits;  // N_l x N_t

  std::size_t num_lanes() const { return lc_logits.rows(); }
  std::size_t num_tes() const { return te_logits.rows(); }

  void check_shapes() const {
    const std::size_t n_l = num_lanes(), n_t = num_tes();
    require_shape(te_logits, n_t, kNumAttributes, "prediction te_logits");
    require_shape(te_box_norm, n_t, 4, "prediction te_box_norm");
    require_shape(lc_logits, n_l, 1, "prediction lc_logits");
    require_shape(lc_points, n_l, 3 * kLanePoints, "prediction lc_points");
    require_shape(topo_ll_logits, n_l, n_l, "prediction topo_ll_logits");
    require_shape(topo_lt_logits, n_l, n_t, "prediction topo_lt_logits");
  }

  std::vector<Centerline> lanes() const {
    std::vector<Centerline> out(num_lanes());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].confidence = sigmoid(lc_logits(i, 0));
      for (std::size_t k = 0; k < kLanePoints; ++k)
        out[i].points.push_back(
            {lc_points(i, 3 * k), lc_points(i, 3 * k + 1), lc_points(i, 3 * k + 2)});
    }
    return out;
  }

  std::vector<TrafficElement> traffic_elements(ImageSize image) const {
    std::vector<TrafficElement> out(num_tes());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].box = box_from_normalized_cxcywh(
          std::span<const double, 4>(te_box_norm.row(i).data(), 4), image);
      for (std::size_t c = 0; c < kNumAttributes; ++c)
        out[i].class_scores[c] = sigmoid(te_logits(i, c));
      out[i].attribute = argmax_attribute(out[i].class_scores);
    }
    return out;
  }
};

/// Heads applied to one layer's queries.
struct HeadOutputs {
  DetectionForward detection;
  TopologyForward topo_ll;
  TopologyForward topo_lt;

  FramePrediction prediction() const {
    return {detection.te_logits,   detection.te_box_norm, detection.lc_logits,
            detection.lc_points,   topo_ll.logits,        topo_lt.logits};
  }
};

/// `te_embedding` feeds the lane/TE topology head; `te_queries` (not
/// embedded) feed the TE detection heads.
inline HeadOutputs run_heads(const QuerySet& lanes, const QuerySet& te_embedding,
                             const QuerySet& te_queries, const HeadParams& params,
                             const HeadConfig& config = {}) {
  return {detection_heads(lanes, te_queries, params, config),
          topology_head(lanes, lanes, params.topo_ll),
          topology_head(lanes, te_embedding, params.topo_lt)};
}

struct FrameMatchings {
  Matching te;  // predicted TE -> GT TE
  Matching lc;  // predicted lane -> GT lane
};

inline ImageSize frame_image(const FrameGraph& gt, const HeadConfig& config) {
  if (gt.image_size) return {(*gt.image_size)[0], (*gt.image_size)[1]};
  return config.image;
}

namespace detail {

inline std::vector<Centerline> training_targets(const FrameGraph& gt) {
  std::vector<Centerline> out;
  out.reserve(gt.lanes.size());
  for (const auto& l : gt.lanes)
    out.push_back(l.points.size() == kLanePoints ? l : resample(l, kLanePoints));
  return out;
}

}  // namespace detail

/// Bipartite matchings under the training costs. They are constants for
/// differentiation.
inline FrameMatchings match_frame(const FramePrediction& pred, const FrameGraph& gt,
                                  const LossWeights& w = {}, const HeadConfig& config = {}) {
  pred.check_shapes();
  const ImageSize image = frame_image(gt, config);
  const auto pred_tes = pred.traffic_elements(image);
  const auto pred_lanes = pred.lanes();
  const auto targets = detail::training_targets(gt);
  return {hungarian(te_cost_matrix(pred_tes, gt.tes, w.te, image, w.focal)),
          hungarian(lc_cost_matrix(pred_lanes, targets, w.lc, w.focal))};
}

/// Weighted loss terms; `total` is their sum.
struct LossComponents {
  double te_cls = 0.0;
  double te_reg = 0.0;
  double te_iou = 0.0;
  double lc_cls = 0.0;
  double lc_reg = 0.0;
  double top_ll = 0.0;
  double top_lt = 0.0;
  double total = 0.0;

  void sum_up() { total = te_cls + te_reg + te_iou + lc_cls + lc_reg + top_ll + top_lt; }

  LossComponents& operator+=(const LossComponents& o) {
    te_cls += o.te_cls;
    te_reg += o.te_reg;
    te_iou += o.te_iou;
    lc_cls += o.lc_cls;
    lc_reg += o.lc_reg;
    top_ll += o.top_ll;
    top_lt += o.top_lt;
    sum_up();
    return *this;
  }
};

/// 1 - GIoU of a predicted box against a target, with the gradient with
/// respect to the predicted corners (x1, y1, x2, y2).
inline double giou_loss(const Box& p, const Box& g, std::array<double, 4>* grad = nullptr) {
  if (grad) grad->fill(0.0);
  if (!p.valid() || !g.valid()) throw InvalidInput("giou_loss: invalid box");
  const double ap = p.width() * p.height();
  const double ag = g.width() * g.height();
  const double iw = std::min(p.x2, g.x2) - std::max(p.x1, g.x1);
  const double ih = std::min(p.y2, g.y2) - std::max(p.y1, g.y1);
  const bool overlap = iw > 0.0 && ih > 0.0;
  const double inter = overlap ? iw * ih : 0.0;
  const double uni = ap + ag - inter;
  const double cw = std::max(p.x2, g.x2) - std::min(p.x1, g.x1);
  const double ch = std::max(p.y2, g.y2) - std::min(p.y1, g.y1);
  const double hull = cw * ch;
  const double loss = 1.0 - (inter / uni - (hull - uni) / hull);
  if (!grad) return loss;

  // d area_p, d inter, d hull w.r.t. (x1, y1, x2, y2)
  const std::array<double, 4> d_ap{-p.height(), -p.width(), p.height(), p.width()};
  std::array<double, 4> d_inter{};
  if (overlap) {
    d_inter[0] = p.x1 > g.x1 ? -ih : 0.0;
    d_inter[1] = p.y1 > g.y1 ? -iw : 0.0;
    d_inter[2] = p.x2 < g.x2 ? ih : 0.0;
    d_inter[3] = p.y2 < g.y2 ? iw : 0.0;
  }
  const std::array<double, 4> d_hull{p.x1 < g.x1 ? -ch : 0.0, p.y1 < g.y1 ? -cw : 0.0,
                                     p.x2 > g.x2 ? ch : 0.0, p.y2 > g.y2 ? cw : 0.0};
  for (std::size_t k = 0; k < 4; ++k) {
    const double d_uni = d_ap[k] - d_inter[k];
    // GIoU = I/U - 1 + U/C
    const double d_giou = d_inter[k] / uni - inter * d_uni / (uni * uni) + d_uni / hull -
                          uni * d_hull[k] / (hull * hull);
    (*grad)[k] = -d_giou;
  }
  return loss;
}

/// dL with respect to every FramePrediction tensor.
using PredictionGradients = FramePrediction;

namespace detail {

inline double topology_focal(const DenseMatrix& logits, const DenseMatrix& gt_adj,
                             const Matching& rows, const Matching& cols, std::size_t n_rows,
                             std::size_t n_cols, const LossWeights& w, double weight,
                             DenseMatrix* grad) {
  const auto row_gt = rows.pred_to_gt(n_rows);
  const auto col_gt = cols.pred_to_gt(n_cols);
  double positives = 0.0;
  for (double v : gt_adj.values()) positives += v >= 0.5 ? 1.0 : 0.0;
  const double scale = weight / std::max(1.0, positives);
  double sum = 0.0;
  for (std::size_t x = 0; x < n_rows; ++x) {
    for (std::size_t y = 0; y < n_cols; ++y) {
      const bool x_matched = row_gt[x] != Matching::npos;
      const bool y_matched = col_gt[y] != Matching::npos;
      if (!x_matched && !y_matched && !w.unmatched_pairs_negative) continue;
      const bool label = x_matched && y_matched && gt_adj(row_gt[x], col_gt[y]) >= 0.5;
      const double z = logits(x, y);
      sum += focal_loss(sigmoid(z), label, w.focal);
      if (grad) (*grad)(x, y) = scale * focal_loss_dlogit(z, label, w.focal);
    }
  }
  return scale * sum;
}

}  // namespace detail

/// Detection and topology loss of one frame under fixed matchings.
///
/// Every branch is normalized by max(1, number of GT instances) (GT edges
/// for topology). Classification covers all queries with unmatched ones as
/// background; regression and GIoU cover matched pairs only.
inline LossComponents total_loss(const FramePrediction& pred, const FrameGraph& gt,
                                 const FrameMatchings& m, const LossWeights& w = {},
                                 const HeadConfig& config = {},
                                 PredictionGradients* grad = nullptr) {
  pred.check_shapes();
  w.validate();
  const std::size_t n_l = pred.num_lanes(), n_t = pred.num_tes();
  const std::size_t g_l = gt.lanes.size(), g_t = gt.tes.size();
  require_shape(gt.adj_ll, g_l, g_l, "total_loss: GT adj_ll");
  require_shape(gt.adj_lt, g_l, g_t, "total_loss: GT adj_lt");
  for (const auto& [p, g] : m.te.pairs)
    if (p >= n_t || g >= g_t) throw InvalidInput("total_loss: TE matching out of range");
  for (const auto& [p, g] : m.lc.pairs)
    if (p >= n_l || g >= g_l) throw InvalidInput("total_loss: lane matching out of range");
  if (grad) {
    *grad = {DenseMatrix(n_t, kNumAttributes), DenseMatrix(n_t, 4),
             DenseMatrix(n_l, 1),              DenseMatrix(n_l, 3 * kLanePoints),
             DenseMatrix(n_l, n_l),            DenseMatrix(n_l, n_t)};
  }
  const ImageSize image = frame_image(gt, config);
  LossComponents out;

  // Traffic elements.
  {
    const double norm = std::max<double>(1.0, static_cast<double>(g_t));
    const auto te_gt = m.te.pred_to_gt(n_t);
    double cls = 0.0;
    for (std::size_t i = 0; i < n_t; ++i) {
      for (std::size_t c = 0; c < kNumAttributes; ++c) {
        const bool label =
            te_gt[i] != Matching::npos && static_cast<std::size_t>(gt.tes[te_gt[i]].attribute) == c;
        const double z = pred.te_logits(i, c);
        cls += focal_loss(sigmoid(z), label, w.focal);
        if (grad) grad->te_logits(i, c) = w.te.cls / norm * focal_loss_dlogit(z, label, w.focal);
      }
    }
    double reg = 0.0, iou = 0.0;
    for (const auto& [i, j] : m.te.pairs) {
      const auto target = normalized_cxcywh(gt.tes[j].box, image);
      for (std::size_t k = 0; k < 4; ++k) {
        const double d = pred.te_box_norm(i, k) - target[k];
        reg += std::abs(d);
        if (grad) grad->te_box_norm(i, k) += w.te.reg / norm * (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0);
      }
      const auto c = pred.te_box_norm.row(i);
      const Box box = box_from_normalized_cxcywh(std::span<const double, 4>(c.data(), 4), image);
      std::array<double, 4> dbox{};
      iou += giou_loss(box, gt.tes[j].box, grad ? &dbox : nullptr);
      if (grad) {
        // corners = ((cx -+ w/2) W, (cy -+ h/2) H)
        const double s = w.te.iou / norm;
        grad->te_box_norm(i, 0) += s * image.width * (dbox[0] + dbox[2]);
        grad->te_box_norm(i, 1) += s * image.height * (dbox[1] + dbox[3]);
        grad->te_box_norm(i, 2) += s * image.width * 0.5 * (dbox[2] - dbox[0]);
        grad->te_box_norm(i, 3) += s * image.height * 0.5 * (dbox[3] - dbox[1]);
      }
    }
    out.te_cls = w.te.cls * cls / norm;
    out.te_reg = w.te.reg * reg / norm;
    out.te_iou = w.te.iou * iou / norm;
  }

  // Lanes.
  {
    const double norm = std::max<double>(1.0, static_cast<double>(g_l));
    const auto targets = detail::training_targets(gt);
    const auto lc_gt = m.lc.pred_to_gt(n_l);
    double cls = 0.0;
    for (std::size_t i = 0; i < n_l; ++i) {
      const bool label = lc_gt[i] != Matching::npos;
      const double z = pred.lc_logits(i, 0);
      cls += focal_loss(sigmoid(z), label, w.focal);
      if (grad) grad->lc_logits(i, 0) = w.lc.cls / norm * focal_loss_dlogit(z, label, w.focal);
    }
    double reg = 0.0;
    for (const auto& [i, j] : m.lc.pairs) {
      for (std::size_t k = 0; k < kLanePoints; ++k) {
        const Point3 t = targets[j].points[k];
        const std::array<double, 3> tv{t.x, t.y, t.z};
        for (std::size_t a = 0; a < 3; ++a) {
          const double d = pred.lc_points(i, 3 * k + a) - tv[a];
          reg += std::abs(d);
          if (grad)
            grad->lc_points(i, 3 * k + a) = w.lc.reg / norm * (d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0);
        }
      }
    }
    out.lc_cls = w.lc.cls * cls / norm;
    out.lc_reg = w.lc.reg * reg / norm;
  }

  // Topology, labels induced by the two matchings.
  out.top_ll = detail::topology_focal(pred.topo_ll_logits, gt.adj_ll, m.lc, m.lc, n_l, n_l, w,
                                      w.top_ll, grad ? &grad->topo_ll_logits : nullptr);
  out.top_lt = detail::topology_focal(pred.topo_lt_logits, gt.adj_lt, m.lc, m.te, n_l, n_t, w,
                                      w.top_lt, grad ? &grad->topo_lt_logits : nullptr);
  out.sum_up();
  return out;
}

/// Sum over per-layer outputs, each matched independently.
inline LossComponents total_loss_layers(std::span<const FramePrediction> layers,
                                        const FrameGraph& gt, const LossWeights& w = {},
                                        const HeadConfig& config = {}) {
  LossComponents sum;
  for (const auto& p : layers) sum += total_loss(p, gt, match_frame(p, gt, w, config), w, config);
  return sum;
}

struct HeadGradients {
  QuerySet lanes;
  QuerySet te_embedding;
  QuerySet te_queries;
  HeadParams params;
};

/// Reverse pass from prediction-level gradients through all heads.
inline HeadGradients loss_backward(const HeadOutputs& out, const HeadParams& params,
                                   const PredictionGradients& d, const HeadConfig& config = {}) {
  const auto det = detection_backward(
      out.detection, params, {d.te_logits, d.te_box_norm, d.lc_logits, d.lc_points}, config);
  const auto ll = topology_backward(out.topo_ll, params.topo_ll, d.topo_ll_logits);
  const auto lt = topology_backward(out.topo_lt, params.topo_lt, d.topo_lt_logits);

  HeadGradients g;
  g.params = det.params;
  g.params.topo_ll = ll.params;
  g.params.topo_lt = lt.params;
  g.lanes = det.q_l + ll.q_a + ll.q_b + lt.q_a;
  g.te_embedding = lt.q_b;
  g.te_queries = det.q_t;
  return g;
}

}  // namespace lanetopo
