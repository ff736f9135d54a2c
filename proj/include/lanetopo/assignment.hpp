#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "lanetopo/core.hpp"
#include "lanetopo/focal.hpp"
#include "lanetopo/geometry.hpp"

namespace lanetopo {

inline constexpr double kForbidden = std::numeric_limits<double>::infinity();

/// Rows are predictions, columns ground truths. +inf forbids a pair.
using CostMatrix = DenseMatrix;

struct Matching {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (pred, gt), sorted by pred
  std::vector<std::size_t> unmatched_preds;
  std::vector<std::size_t> unmatched_gts;

  /// gt index for each prediction, or npos.
  std::vector<std::size_t> pred_to_gt(std::size_t num_preds) const {
    std::vector<std::size_t> out(num_preds, npos);
    for (auto [p, g] : pairs) out.at(p) = g;
    return out;
  }
  std::vector<std::size_t> gt_to_pred(std::size_t num_gts) const {
    std::vector<std::size_t> out(num_gts, npos);
    for (auto [p, g] : pairs) out.at(g) = p;
    return out;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  bool operator==(const Matching&) const = default;
};

namespace detail {

inline Matching finalize_matching(std::vector<std::pair<std::size_t, std::size_t>> pairs,
                                  std::size_t rows, std::size_t cols) {
  std::sort(pairs.begin(), pairs.end());
  Matching m;
  std::vector<bool> row_used(rows, false), col_used(cols, false);
  for (auto [r, c] : pairs) {
    row_used[r] = true;
    col_used[c] = true;
  }
  for (std::size_t r = 0; r < rows; ++r)
    if (!row_used[r]) m.unmatched_preds.push_back(r);
  for (std::size_t c = 0; c < cols; ++c)
    if (!col_used[c]) m.unmatched_gts.push_back(c);
  m.pairs = std::move(pairs);
  return m;
}

/// Shortest augmenting path Hungarian method with row/column potentials for
/// an n x m matrix with n <= m and finite entries. Returns the column
/// assigned to each row. Among equal reduced costs the lowest column index
/// is taken, which makes the result deterministic.
inline std::vector<std::size_t> hungarian_rows_le_cols(const DenseMatrix& cost) {
  const std::size_t n = cost.rows(), m = cost.cols();
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based with a virtual column 0, as in the classic formulation.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n, Matching::npos);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

/// Minimum-cost one-to-one assignment of min(rows, cols) pairs.
///
/// Forbidden (+inf) entries are replaced by a penalty larger than any
/// finite assignment can cost, so the solver first maximizes the number of
/// admissible pairs and then minimizes their cost; forbidden pairs are
/// dropped from the result. NaN or -inf entries are rejected.
inline Matching hungarian(const CostMatrix& cost) {
  const std::size_t rows = cost.rows(), cols = cost.cols();
  if (rows == 0 || cols == 0) return detail::finalize_matching({}, rows, cols);

  double max_abs = 0.0;
  bool any_finite = false;
  for (double c : cost.values()) {
    if (std::isnan(c) || c == -std::numeric_limits<double>::infinity())
      throw InvalidInput("hungarian: cost entries must be finite or +inf");
    if (std::isfinite(c)) {
      any_finite = true;
      max_abs = std::max(max_abs, std::abs(c));
    }
  }
  if (!any_finite) return detail::finalize_matching({}, rows, cols);

  const bool transpose = rows > cols;
  const std::size_t n = transpose ? cols : rows;
  const std::size_t m = transpose ? rows : cols;
  const double penalty = (2.0 * max_abs + 1.0) * static_cast<double>(n + 1);
  DenseMatrix work(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double c = transpose ? cost(j, i) : cost(i, j);
      work(i, j) = std::isfinite(c) ? c : penalty;
    }
  }

  const auto assignment = detail::hungarian_rows_le_cols(work);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = assignment[i];
    if (j == Matching::npos) continue;
    const std::size_t pred = transpose ? j : i;
    const std::size_t gt = transpose ? i : j;
    if (std::isfinite(cost(pred, gt))) pairs.emplace_back(pred, gt);
  }
  return detail::finalize_matching(std::move(pairs), rows, cols);
}

inline double matching_cost(const CostMatrix& cost, const Matching& matching) {
  double total = 0.0;
  for (auto [p, g] : matching.pairs) total += cost(p, g);
  return total;
}

// ---------------------------------------------------------------------------
// Training-style matching costs.

struct TeCostWeights {
  double cls = 1.0;
  double reg = 2.5;
  double iou = 1.0;
};

struct LcCostWeights {
  double cls = 1.5;
  double reg = 0.0075;
};

/// Image extent used to normalize traffic-element boxes.
struct ImageSize {
  double width = 1550.0;
  double height = 1550.0;
};

/// {cx, cy, w, h} normalized by the image extent.
inline std::array<double, 4> normalized_cxcywh(const Box& b, ImageSize image) {
  return {0.5 * (b.x1 + b.x2) / image.width, 0.5 * (b.y1 + b.y2) / image.height,
          (b.x2 - b.x1) / image.width, (b.y2 - b.y1) / image.height};
}

inline Box box_from_normalized_cxcywh(std::span<const double, 4> c, ImageSize image) {
  return {(c[0] - 0.5 * c[2]) * image.width, (c[1] - 0.5 * c[3]) * image.height,
          (c[0] + 0.5 * c[2]) * image.width, (c[1] + 0.5 * c[3]) * image.height};
}

/// Classification, normalized L1 and GIoU cost of matching a predicted
/// traffic element to a ground-truth one. The classification term uses the
/// prediction's score for the GT attribute.
inline double te_assignment_cost(const TrafficElement& pred, const TrafficElement& gt,
                                 TeCostWeights w = {}, ImageSize image = {},
                                 FocalParams fp = {}) {
  if (!pred.box.valid() || !gt.box.valid())
    throw InvalidInput("te_assignment_cost: invalid box");
  for (double s : pred.class_scores)
    if (!(s >= 0.0 && s <= 1.0)) throw InvalidInput("te_assignment_cost: score outside [0,1]");
  const double score = pred.class_scores[static_cast<std::size_t>(gt.attribute)];
  const auto a = normalized_cxcywh(pred.box, image);
  const auto b = normalized_cxcywh(gt.box, image);
  double l1 = 0.0;
  for (std::size_t i = 0; i < 4; ++i) l1 += std::abs(a[i] - b[i]);
  return w.cls * focal_cost(score, fp) + w.reg * l1 + w.iou * (-giou_2d(pred.box, gt.box));
}

/// Sum of absolute coordinate differences over two equally sampled lanes.
inline double lane_l1(const Centerline& a, const Centerline& b) {
  if (a.points.size() != b.points.size())
    throw InvalidInput("lane_l1: point count mismatch (" + std::to_string(a.points.size()) +
                       " vs " + std::to_string(b.points.size()) + ")");
  double l1 = 0.0;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    l1 += std::abs(a.points[i].x - b.points[i].x) + std::abs(a.points[i].y - b.points[i].y) +
          std::abs(a.points[i].z - b.points[i].z);
  }
  return l1;
}

/// Classification plus metric L1 cost of matching a predicted centerline
/// (its confidence is the score) to a ground-truth one.
inline double lc_assignment_cost(const Centerline& pred, const Centerline& gt,
                                 LcCostWeights w = {}, FocalParams fp = {}) {
  return w.cls * focal_cost(pred.confidence, fp) + w.reg * lane_l1(pred, gt);
}

inline CostMatrix te_cost_matrix(std::span<const TrafficElement> preds,
                                 std::span<const TrafficElement> gts, TeCostWeights w = {},
                                 ImageSize image = {}, FocalParams fp = {}) {
  CostMatrix c(preds.size(), gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j)
      c(i, j) = te_assignment_cost(preds[i], gts[j], w, image, fp);
  return c;
}

inline CostMatrix lc_cost_matrix(std::span<const Centerline> preds,
                                 std::span<const Centerline> gts, LcCostWeights w = {},
                                 FocalParams fp = {}) {
  CostMatrix c(preds.size(), gts.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (std::size_t j = 0; j < gts.size(); ++j)
      c(i, j) = lc_assignment_cost(preds[i], gts[j], w, fp);
  return c;
}

// ---------------------------------------------------------------------------
// Evaluation-time projection of predicted vertices onto ground truth.

/// One-to-one projection from a distance matrix (rows preds, cols GT) in
/// which inadmissible pairs are already +inf.
///
/// Hungarian mode maximizes the number of admissible pairs and then
/// minimizes total distance. Greedy mode visits predictions by descending
/// confidence (ties by index) and takes the nearest unconsumed GT.
inline Matching evaluation_projection(const CostMatrix& distances,
                                      ProjectionMode mode = ProjectionMode::kHungarian,
                                      std::span<const double> confidences = {}) {
  if (mode == ProjectionMode::kHungarian) return hungarian(distances);

  const std::size_t rows = distances.rows(), cols = distances.cols();
  if (!confidences.empty() && confidences.size() != rows)
    throw InvalidInput("evaluation_projection: confidence count mismatch");
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  if (!confidences.empty()) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return confidences[a] > confidences[b];
    });
  }
  std::vector<bool> taken(cols, false);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t r : order) {
    std::size_t best = Matching::npos;
    for (std::size_t c = 0; c < cols; ++c) {
      if (taken[c] || !std::isfinite(distances(r, c))) continue;
      if (best == Matching::npos || distances(r, c) < distances(r, best)) best = c;
    }
    if (best != Matching::npos) {
      taken[best] = true;
      pairs.emplace_back(r, best);
    }
  }
  return detail::finalize_matching(std::move(pairs), rows, cols);
}

/// Fréchet-distance projection; a pair is admissible when its distance is
/// within `threshold` scaled by the GT lane's relaxation.
inline Matching project_lanes(std::span<const Centerline> gts, std::span<const Centerline> preds,
                              double threshold, const EvalConfig& config = {}) {
  CostMatrix d(preds.size(), gts.size());
  std::vector<double> conf(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    conf[i] = preds[i].confidence;
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double dist = frechet_distance(preds[i], gts[j]);
      d(i, j) = dist <= threshold * config.relaxation(gts[j]) ? dist : kForbidden;
    }
  }
  return evaluation_projection(d, config.projection, conf);
}

/// IoU projection; admissible when IoU >= `iou_threshold`, cost 1 - IoU.
inline Matching project_traffic_elements(std::span<const TrafficElement> gts,
                                         std::span<const TrafficElement> preds,
                                         double iou_threshold,
                                         ProjectionMode mode = ProjectionMode::kHungarian) {
  CostMatrix d(preds.size(), gts.size());
  std::vector<double> conf(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    conf[i] = preds[i].confidence();
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double iou = iou_2d(preds[i].box, gts[j].box);
      d(i, j) = iou >= iou_threshold ? 1.0 - iou : kForbidden;
    }
  }
  return evaluation_projection(d, mode, conf);
}

}  // namespace lanetopo
