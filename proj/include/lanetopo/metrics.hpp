#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lanetopo/assignment.hpp"
#include "lanetopo/core.hpp"
#include "lanetopo/geometry.hpp"

namespace lanetopo {

enum class LaneMeasure { kFrechet, kChamfer };

/// One scored prediction after TP/FP labelling.
struct ScoredLabel {
  double confidence = 0.0;
  bool true_positive = false;

  bool operator==(const ScoredLabel&) const = default;
};

/// Labelled predictions ranked by descending confidence, plus the number of
/// ground-truth instances they compete for.
struct PrCurve {
  std::vector<ScoredLabel> entries;
  std::size_t num_gt = 0;

  /// Stable sort by descending confidence: equal confidences keep input order.
  static PrCurve ranked(std::vector<ScoredLabel> entries, std::size_t num_gt) {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const ScoredLabel& a, const ScoredLabel& b) {
                       return a.confidence > b.confidence;
                     });
    return {std::move(entries), num_gt};
  }
};

/// Area under the precision/recall curve. The precision envelope is made
/// monotone before integrating; with kElevenPoint it is sampled at recall
/// 0, 0.1, ..., 1 instead.
inline double average_precision(const PrCurve& curve,
                                ApInterpolation mode = ApInterpolation::kAllPoint) {
  if (curve.num_gt == 0) {
    diagnose("ap_no_ground_truth", "average precision over zero ground truths is defined as 0");
    return 0.0;
  }
  const std::size_t n = curve.entries.size();
  if (n == 0) return 0.0;

  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (curve.entries[i].true_positive) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(curve.num_gt);
  }
  for (std::size_t i = n - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);

  if (mode == ApInterpolation::kElevenPoint) {
    double sum = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      const auto it = std::lower_bound(recall.begin(), recall.end(), r - 1e-12);
      if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
    }
    return sum / 11.0;
  }

  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// Overall score: 1/4 [DET_l + DET_t + sqrt(TOP_ll) + sqrt(TOP_lt)].
inline double ols(double det_l, double det_t, double top_ll, double top_lt) {
  for (double v : {det_l, det_t, top_ll, top_lt}) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("ols: component outside [0,1]");
  }
  return 0.25 * (det_l + det_t + std::sqrt(top_ll) + std::sqrt(top_lt));
}

// ---------------------------------------------------------------------------
// Per-frame labelling.

namespace detail {

inline std::size_t common_point_count(std::span<const Centerline> gts,
                                      std::span<const Centerline> preds,
                                      std::optional<std::size_t> expected) {
  for (auto lanes : {gts, preds}) {
    for (const auto& l : lanes) {
      if (!expected) expected = l.points.size();
      if (l.points.size() != *expected || l.points.empty())
        throw InvalidInput("lane metrics: mixed point counts (" + std::to_string(*expected) +
                           " vs " + std::to_string(l.points.size()) +
                           "); resample every lane first");
    }
  }
  return expected.value_or(kLanePoints);
}

inline DenseMatrix lane_distance_matrix(std::span<const Centerline> gts,
                                        std::span<const Centerline> preds, LaneMeasure measure) {
  DenseMatrix d(preds.size(), gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j)
      d(i, j) = measure == LaneMeasure::kFrechet ? frechet_distance(preds[i], gts[j])
                                                 : chamfer_distance(preds[i], gts[j]);
  return d;
}

/// Visits predictions by descending confidence (ties by index) and marks
/// each a true positive when an unconsumed admissible GT exists; the
/// closest one is consumed.
template <typename Admissible>
std::vector<ScoredLabel> greedy_labels(const DenseMatrix& distance,
                                       std::span<const double> confidences,
                                       Admissible&& admissible) {
  const std::size_t n_pred = distance.rows(), n_gt = distance.cols();
  std::vector<std::size_t> order(n_pred);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return confidences[a] > confidences[b];
  });
  std::vector<bool> consumed(n_gt, false);
  std::vector<ScoredLabel> labels;
  labels.reserve(n_pred);
  for (std::size_t p : order) {
    std::size_t best = Matching::npos;
    for (std::size_t g = 0; g < n_gt; ++g) {
      if (consumed[g] || !admissible(p, g)) continue;
      if (best == Matching::npos || distance(p, g) < distance(p, best)) best = g;
    }
    if (best != Matching::npos) consumed[best] = true;
    labels.push_back({confidences[p], best != Matching::npos});
  }
  return labels;
}

}  // namespace detail

/// TP/FP labels of one frame's lane predictions at one threshold.
inline std::vector<ScoredLabel> label_lanes(std::span<const Centerline> gts,
                                            std::span<const Centerline> preds,
                                            const DenseMatrix& distance, double threshold,
                                            const EvalConfig& config = {}) {
  std::vector<double> conf(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) conf[i] = preds[i].confidence;
  std::vector<double> limit(gts.size());
  for (std::size_t j = 0; j < gts.size(); ++j) limit[j] = threshold * config.relaxation(gts[j]);
  return detail::greedy_labels(distance, conf, [&](std::size_t p, std::size_t g) {
    return distance(p, g) <= limit[g];
  });
}

/// Detection AP of lanes averaged over `thresholds`, predictions pooled
/// across frames before ranking. `gts[f]` and `preds[f]` belong to frame f.
inline double det_lanes(std::span<const std::vector<Centerline>> gts,
                        std::span<const std::vector<Centerline>> preds,
                        std::span<const double> thresholds, LaneMeasure measure,
                        const EvalConfig& config = {},
                        std::vector<double>* per_threshold = nullptr) {
  if (gts.size() != preds.size()) throw InvalidInput("det_lanes: frame count mismatch");
  if (thresholds.empty()) throw InvalidInput("det_lanes: no thresholds");
  std::optional<std::size_t> count;
  for (std::size_t f = 0; f < gts.size(); ++f)
    count = detail::common_point_count(gts[f], preds[f], count);

  std::vector<std::vector<ScoredLabel>> pooled(thresholds.size());
  std::size_t num_gt = 0;
  for (std::size_t f = 0; f < gts.size(); ++f) {
    num_gt += gts[f].size();
    const DenseMatrix d = detail::lane_distance_matrix(gts[f], preds[f], measure);
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      auto labels = label_lanes(gts[f], preds[f], d, thresholds[t], config);
      pooled[t].insert(pooled[t].end(), labels.begin(), labels.end());
    }
  }
  double sum = 0.0;
  if (per_threshold) per_threshold->clear();
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    const double ap =
        average_precision(PrCurve::ranked(std::move(pooled[t]), num_gt), config.ap_interpolation);
    if (per_threshold) per_threshold->push_back(ap);
    sum += ap;
  }
  return sum / static_cast<double>(thresholds.size());
}

inline double det_lanes(const std::vector<Centerline>& gts, const std::vector<Centerline>& preds,
                        std::span<const double> thresholds, LaneMeasure measure,
                        const EvalConfig& config = {}) {
  return det_lanes(std::span(&gts, 1), std::span(&preds, 1), thresholds, measure, config);
}

/// Per-attribute TP/FP labels of one frame: a prediction competes only for
/// GT elements of its argmax attribute and is a TP when IoU >= threshold.
inline std::map<Attribute, std::vector<ScoredLabel>> label_traffic_elements(
    std::span<const TrafficElement> gts, std::span<const TrafficElement> preds,
    double iou_threshold) {
  std::map<Attribute, std::vector<ScoredLabel>> out;
  DenseMatrix cost(preds.size(), gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j)
      cost(i, j) = 1.0 - iou_2d(preds[i].box, gts[j].box);
  std::vector<double> conf(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) conf[i] = preds[i].confidence();

  // Ranking within one attribute is unaffected by other attributes, so one
  // greedy pass over the class-gated admissibility is enough.
  auto labels = detail::greedy_labels(cost, conf, [&](std::size_t p, std::size_t g) {
    return preds[p].attribute == gts[g].attribute && 1.0 - cost(p, g) >= iou_threshold;
  });
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return conf[a] > conf[b]; });
  for (std::size_t k = 0; k < order.size(); ++k) out[preds[order[k]].attribute].push_back(labels[k]);
  return out;
}

/// Detection AP of traffic elements averaged over the attributes present in
/// the ground truth.
inline double det_traffic(std::span<const std::vector<TrafficElement>> gts,
                          std::span<const std::vector<TrafficElement>> preds, double iou_threshold,
                          std::map<Attribute, double>* per_attribute = nullptr,
                          ApInterpolation mode = ApInterpolation::kAllPoint) {
  if (gts.size() != preds.size()) throw InvalidInput("det_traffic: frame count mismatch");
  std::map<Attribute, std::size_t> gt_count;
  std::map<Attribute, std::vector<ScoredLabel>> pooled;
  for (std::size_t f = 0; f < gts.size(); ++f) {
    for (const auto& te : gts[f]) ++gt_count[te.attribute];
    for (auto& [attr, labels] : label_traffic_elements(gts[f], preds[f], iou_threshold))
      pooled[attr].insert(pooled[attr].end(), labels.begin(), labels.end());
  }
  if (per_attribute) per_attribute->clear();
  if (gt_count.empty()) {
    diagnose("det_t_no_ground_truth", "no ground-truth traffic elements; DET_t defined as 0");
    return 0.0;
  }
  double sum = 0.0;
  for (const auto& [attr, n] : gt_count) {
    const double ap = average_precision(PrCurve::ranked(std::move(pooled[attr]), n), mode);
    if (per_attribute) (*per_attribute)[attr] = ap;
    sum += ap;
  }
  return sum / static_cast<double>(gt_count.size());
}

inline double det_traffic(const std::vector<TrafficElement>& gts,
                          const std::vector<TrafficElement>& preds, double iou_threshold) {
  return det_traffic(std::span(&gts, 1), std::span(&preds, 1), iou_threshold);
}

// ---------------------------------------------------------------------------
// Topology.

/// Running sum of per-vertex topology AP and the number of contributing
/// vertices (those with at least one GT neighbour).
struct TopTerms {
  double sum = 0.0;
  std::size_t vertices = 0;
  std::size_t excluded = 0;  // GT vertices without neighbours

  TopTerms& operator+=(const TopTerms& o) {
    sum += o.sum;
    vertices += o.vertices;
    excluded += o.excluded;
    return *this;
  }
  double score() const {
    return vertices == 0 ? 0.0 : sum / static_cast<double>(vertices);
  }
};

/// AP of one vertex's predicted neighbour list against its GT neighbours.
///
/// `ranked_hits` holds, for each predicted neighbour in descending
/// confidence order, whether it projects onto a GT neighbour.
inline double vertex_topology_ap(const std::vector<bool>& ranked_hits,
                                 std::size_t num_gt_neighbors) {
  if (num_gt_neighbors == 0) throw InvalidInput("vertex_topology_ap: vertex has no neighbours");
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < ranked_hits.size(); ++k) {
    if (!ranked_hits[k]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(num_gt_neighbors);
}

namespace detail {

/// Shared TOP accumulation over a relation matrix. GT vertex v lives on the
/// row side (rows_are_vertices) or the column side of `gt_adj`.
inline TopTerms relation_top_terms(const DenseMatrix& gt_adj, const DenseMatrix& pred_adj,
                                   const std::vector<std::size_t>& gt_row_to_pred,
                                   const std::vector<std::size_t>& pred_col_to_gt,
                                   bool rows_are_vertices, double edge_threshold) {
  TopTerms terms;
  const std::size_t n_vertices = rows_are_vertices ? gt_adj.rows() : gt_adj.cols();
  const std::size_t n_other = rows_are_vertices ? gt_adj.cols() : gt_adj.rows();
  const std::size_t n_pred_other = rows_are_vertices ? pred_adj.cols() : pred_adj.rows();
  auto gt_at = [&](std::size_t v, std::size_t o) {
    return rows_are_vertices ? gt_adj(v, o) : gt_adj(o, v);
  };
  auto pred_at = [&](std::size_t v, std::size_t o) {
    return rows_are_vertices ? pred_adj(v, o) : pred_adj(o, v);
  };

  for (std::size_t v = 0; v < n_vertices; ++v) {
    std::size_t num_neighbors = 0;
    for (std::size_t o = 0; o < n_other; ++o)
      if (gt_at(v, o) > 0.5) ++num_neighbors;
    if (num_neighbors == 0) {
      ++terms.excluded;
      continue;
    }
    ++terms.vertices;
    const std::size_t pv = gt_row_to_pred[v];
    if (pv == Matching::npos) continue;

    std::vector<std::pair<double, std::size_t>> ranked;  // (confidence, gt index)
    for (std::size_t q = 0; q < n_pred_other; ++q) {
      const std::size_t g = pred_col_to_gt[q];
      if (g == Matching::npos) continue;
      const double c = pred_at(pv, q);
      if (c > edge_threshold) ranked.emplace_back(c, g);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<bool> hits(ranked.size());
    for (std::size_t k = 0; k < ranked.size(); ++k) hits[k] = gt_at(v, ranked[k].second) > 0.5;
    terms.sum += vertex_topology_ap(hits, num_neighbors);
  }
  return terms;
}

inline void check_projection(const Matching& m, std::size_t n_pred, std::size_t n_gt,
                             const char* what) {
  for (auto [p, g] : m.pairs) {
    if (p >= n_pred || g >= n_gt)
      throw InvalidInput(std::string("top_score: ") + what + " projection out of range");
  }
}

}  // namespace detail

/// TOP terms of the lane graph: each GT lane with successors is scored by
/// the AP of its projected prediction's successor list.
inline TopTerms top_ll_terms(const FrameGraph& gt, const FrameGraph& pred,
                             const Matching& lane_projection, double edge_threshold = 0.5) {
  detail::check_projection(lane_projection, pred.lanes.size(), gt.lanes.size(), "lane");
  require_shape(gt.adj_ll, gt.lanes.size(), gt.lanes.size(), "top_score: gt adj_ll");
  require_shape(pred.adj_ll, pred.lanes.size(), pred.lanes.size(), "top_score: pred adj_ll");
  return detail::relation_top_terms(gt.adj_ll, pred.adj_ll,
                                    lane_projection.gt_to_pred(gt.lanes.size()),
                                    lane_projection.pred_to_gt(pred.lanes.size()), true,
                                    edge_threshold);
}

/// TOP terms of the lane / traffic-element graph, whose vertices are lanes
/// (neighbours: their elements) and elements (neighbours: their lanes).
inline TopTerms top_lt_terms(const FrameGraph& gt, const FrameGraph& pred,
                             const Matching& lane_projection, const Matching& te_projection,
                             double edge_threshold = 0.5) {
  detail::check_projection(lane_projection, pred.lanes.size(), gt.lanes.size(), "lane");
  detail::check_projection(te_projection, pred.tes.size(), gt.tes.size(), "traffic element");
  require_shape(gt.adj_lt, gt.lanes.size(), gt.tes.size(), "top_score: gt adj_lt");
  require_shape(pred.adj_lt, pred.lanes.size(), pred.tes.size(), "top_score: pred adj_lt");
  TopTerms terms = detail::relation_top_terms(
      gt.adj_lt, pred.adj_lt, lane_projection.gt_to_pred(gt.lanes.size()),
      te_projection.pred_to_gt(pred.tes.size()), true, edge_threshold);
  terms += detail::relation_top_terms(gt.adj_lt, pred.adj_lt,
                                      te_projection.gt_to_pred(gt.tes.size()),
                                      lane_projection.pred_to_gt(pred.lanes.size()), false,
                                      edge_threshold);
  return terms;
}

inline double top_score(const FrameGraph& gt, const FrameGraph& pred,
                        const Matching& lane_projection, double edge_threshold = 0.5) {
  return top_ll_terms(gt, pred, lane_projection, edge_threshold).score();
}

// ---------------------------------------------------------------------------
// Full evaluation.

struct ThresholdScore {
  double threshold = 0.0;
  double score = 0.0;
};

struct EvalReport {
  double det_l = 0.0;
  double det_l_chamfer = 0.0;
  double det_t = 0.0;
  double top_ll = 0.0;
  double top_lt = 0.0;
  double ols = 0.0;

  std::vector<ThresholdScore> det_l_per_threshold;
  std::vector<ThresholdScore> det_l_chamfer_per_threshold;
  std::vector<ThresholdScore> top_ll_per_threshold;
  std::vector<ThresholdScore> top_lt_per_threshold;
  std::map<std::string, double> det_t_per_attribute;

  std::size_t num_frames = 0;
  std::size_t num_gt_lanes = 0;
  std::size_t num_pred_lanes = 0;
  std::size_t num_gt_tes = 0;
  std::size_t num_pred_tes = 0;
  std::size_t top_ll_vertices = 0;
  std::size_t top_ll_excluded = 0;
  std::size_t top_lt_vertices = 0;
  std::size_t top_lt_excluded = 0;

  std::vector<std::string> notes;
};

namespace detail {

struct FrameLabels {
  std::vector<std::vector<ScoredLabel>> frechet;  // per threshold
  std::vector<std::vector<ScoredLabel>> chamfer;  // per threshold
  std::map<Attribute, std::vector<ScoredLabel>> traffic;
  std::vector<TopTerms> top_ll;  // per Fréchet threshold
  std::vector<TopTerms> top_lt;
};

inline FrameLabels label_frame(const FrameGraph& gt, const FrameGraph& pred,
                               const EvalConfig& config) {
  common_point_count(gt.lanes, pred.lanes, kLanePoints);
  FrameLabels out;
  const DenseMatrix frechet = lane_distance_matrix(gt.lanes, pred.lanes, LaneMeasure::kFrechet);
  const DenseMatrix chamfer = lane_distance_matrix(gt.lanes, pred.lanes, LaneMeasure::kChamfer);
  for (double t : config.frechet_thresholds)
    out.frechet.push_back(label_lanes(gt.lanes, pred.lanes, frechet, t, config));
  for (double t : config.chamfer_thresholds)
    out.chamfer.push_back(label_lanes(gt.lanes, pred.lanes, chamfer, t, config));
  out.traffic = label_traffic_elements(gt.tes, pred.tes, config.te_iou_threshold);

  const Matching te_projection =
      project_traffic_elements(gt.tes, pred.tes, config.te_iou_threshold, config.projection);
  std::vector<double> conf(pred.lanes.size());
  for (std::size_t i = 0; i < pred.lanes.size(); ++i) conf[i] = pred.lanes[i].confidence;
  for (double t : config.frechet_thresholds) {
    CostMatrix d = frechet;
    for (std::size_t i = 0; i < d.rows(); ++i)
      for (std::size_t j = 0; j < d.cols(); ++j)
        if (!(d(i, j) <= t * config.relaxation(gt.lanes[j]))) d(i, j) = kForbidden;
    const Matching lane_projection = evaluation_projection(d, config.projection, conf);
    out.top_ll.push_back(
        top_ll_terms(gt, pred, lane_projection, config.edge_confidence_threshold));
    out.top_lt.push_back(top_lt_terms(gt, pred, lane_projection, te_projection,
                                      config.edge_confidence_threshold));
  }
  return out;
}

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. The first
/// exception by index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Evaluates aligned GT/prediction frames. Frames are paired by frame_id and
/// processed in ascending id order; labels are pooled across frames before
/// ranking, so the result does not depend on `config.threads`.
inline EvalReport evaluate(std::span<const FrameGraph> gt_frames,
                           std::span<const FrameGraph> pred_frames, const EvalConfig& config) {
  config.validate();
  if (gt_frames.size() != pred_frames.size())
    throw InvalidInput("evaluate: " + std::to_string(gt_frames.size()) + " GT frames vs " +
                       std::to_string(pred_frames.size()) + " prediction frames");
  std::map<std::string, std::size_t> gt_index, pred_index;
  for (std::size_t i = 0; i < gt_frames.size(); ++i)
    if (!gt_index.emplace(gt_frames[i].frame_id, i).second)
      throw InvalidInput("evaluate: duplicate GT frame_id '" + gt_frames[i].frame_id + "'");
  for (std::size_t i = 0; i < pred_frames.size(); ++i)
    if (!pred_index.emplace(pred_frames[i].frame_id, i).second)
      throw InvalidInput("evaluate: duplicate prediction frame_id '" + pred_frames[i].frame_id +
                         "'");
  std::vector<std::pair<std::size_t, std::size_t>> aligned;
  for (const auto& [id, gi] : gt_index) {
    auto it = pred_index.find(id);
    if (it == pred_index.end())
      throw InvalidInput("evaluate: no prediction for frame_id '" + id + "'");
    aligned.emplace_back(gi, it->second);
  }

  std::vector<detail::FrameLabels> labels(aligned.size());
  detail::parallel_for(aligned.size(), config.threads, [&](std::size_t i) {
    labels[i] = detail::label_frame(gt_frames[aligned[i].first], pred_frames[aligned[i].second],
                                    config);
  });

  EvalReport r;
  r.num_frames = aligned.size();
  std::map<Attribute, std::size_t> te_gt_count;
  for (auto [gi, pi] : aligned) {
    r.num_gt_lanes += gt_frames[gi].lanes.size();
    r.num_pred_lanes += pred_frames[pi].lanes.size();
    r.num_gt_tes += gt_frames[gi].tes.size();
    r.num_pred_tes += pred_frames[pi].tes.size();
    for (const auto& te : gt_frames[gi].tes) ++te_gt_count[te.attribute];
  }

  auto pooled_ap = [&](auto member, std::size_t t, std::size_t num_gt) {
    std::vector<ScoredLabel> pool;
    for (const auto& fl : labels) {
      const auto& l = (fl.*member)[t];
      pool.insert(pool.end(), l.begin(), l.end());
    }
    return average_precision(PrCurve::ranked(std::move(pool), num_gt), config.ap_interpolation);
  };

  const auto& ft = config.frechet_thresholds;
  const auto& ct = config.chamfer_thresholds;
  double det_l_sum = 0.0, det_c_sum = 0.0, top_ll_sum = 0.0, top_lt_sum = 0.0;
  for (std::size_t t = 0; t < ft.size(); ++t) {
    const double ap = pooled_ap(&detail::FrameLabels::frechet, t, r.num_gt_lanes);
    r.det_l_per_threshold.push_back({ft[t], ap});
    det_l_sum += ap;

    TopTerms ll, lt;
    for (const auto& fl : labels) {
      ll += fl.top_ll[t];
      lt += fl.top_lt[t];
    }
    r.top_ll_per_threshold.push_back({ft[t], ll.score()});
    r.top_lt_per_threshold.push_back({ft[t], lt.score()});
    top_ll_sum += ll.score();
    top_lt_sum += lt.score();
    if (t == 0) {
      r.top_ll_vertices = ll.vertices;
      r.top_ll_excluded = ll.excluded;
      r.top_lt_vertices = lt.vertices;
      r.top_lt_excluded = lt.excluded;
    }
  }
  for (std::size_t t = 0; t < ct.size(); ++t) {
    const double ap = pooled_ap(&detail::FrameLabels::chamfer, t, r.num_gt_lanes);
    r.det_l_chamfer_per_threshold.push_back({ct[t], ap});
    det_c_sum += ap;
  }
  r.det_l = det_l_sum / static_cast<double>(ft.size());
  r.det_l_chamfer = det_c_sum / static_cast<double>(ct.size());
  r.top_ll = top_ll_sum / static_cast<double>(ft.size());
  r.top_lt = top_lt_sum / static_cast<double>(ft.size());

  if (te_gt_count.empty()) {
    diagnose("det_t_no_ground_truth", "no ground-truth traffic elements; DET_t defined as 0");
  } else {
    double sum = 0.0;
    for (const auto& [attr, n] : te_gt_count) {
      std::vector<ScoredLabel> pool;
      for (const auto& fl : labels) {
        auto it = fl.traffic.find(attr);
        if (it != fl.traffic.end()) pool.insert(pool.end(), it->second.begin(), it->second.end());
      }
      const double ap =
          average_precision(PrCurve::ranked(std::move(pool), n), config.ap_interpolation);
      r.det_t_per_attribute[std::string(attribute_name(attr))] = ap;
      sum += ap;
    }
    r.det_t = sum / static_cast<double>(te_gt_count.size());
  }

  r.ols = ols(r.det_l, r.det_t, r.top_ll, r.top_lt);
  r.notes.push_back("TOP excludes GT vertices without neighbours");
  r.notes.push_back("TOP is averaged over the Frechet thresholds");
  return r;
}

}  // namespace lanetopo
