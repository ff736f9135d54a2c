#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "lanetopo/core.hpp"

namespace lanetopo {

/// Monotone pairing of two point sequences: starts at (0, 0), ends at
/// (n-1, k-1), and each step advances either index by at most one.
struct Coupling {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;

  bool valid_for(std::size_t n, std::size_t k) const {
    if (pairs.empty() || n == 0 || k == 0) return false;
    if (pairs.front() != std::pair<std::size_t, std::size_t>{0, 0}) return false;
    if (pairs.back() != std::pair<std::size_t, std::size_t>{n - 1, k - 1}) return false;
    for (std::size_t i = 1; i < pairs.size(); ++i) {
      const auto [a0, b0] = pairs[i - 1];
      const auto [a1, b1] = pairs[i];
      if (a1 < a0 || b1 < b0 || a1 - a0 > 1 || b1 - b0 > 1) return false;
    }
    return true;
  }
};

/// Re-samples `line` to `n` points at equal arc-length spacing by linear
/// interpolation. End points are copied exactly.
inline Centerline resample(const Centerline& line, std::size_t n = kLanePoints) {
  const auto& pts = line.points;
  if (pts.size() < 2) throw InvalidInput("resample: centerline needs at least 2 points");
  if (n < 2) throw InvalidInput("resample: target count must be at least 2");

  std::vector<double> cumulative(pts.size(), 0.0);
  for (std::size_t i = 1; i < pts.size(); ++i)
    cumulative[i] = cumulative[i - 1] + distance(pts[i - 1], pts[i]);
  const double total = cumulative.back();

  Centerline out;
  out.confidence = line.confidence;
  out.points.reserve(n);
  out.points.push_back(pts.front());
  std::size_t seg = 1;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double target = total * static_cast<double>(i) / static_cast<double>(n - 1);
    while (seg + 1 < pts.size() && cumulative[seg] < target) ++seg;
    if (cumulative[seg] == target) {
      out.points.push_back(pts[seg]);
      continue;
    }
    const double seg_len = cumulative[seg] - cumulative[seg - 1];
    const double t = seg_len > 0.0 ? (target - cumulative[seg - 1]) / seg_len : 0.0;
    out.points.push_back(pts[seg - 1] + t * (pts[seg] - pts[seg - 1]));
  }
  out.points.push_back(pts.back());
  return out;
}

namespace detail {

inline void require_points(std::span<const Point3> pts, const char* who) {
  if (pts.empty()) throw InvalidInput(std::string(who) + ": empty curve");
}

}  // namespace detail

/// Discrete Fréchet distance by the O(n·k) coupling recurrence.
inline double frechet_distance(std::span<const Point3> a, std::span<const Point3> b) {
  detail::require_points(a, "frechet_distance");
  detail::require_points(b, "frechet_distance");
  const std::size_t k = b.size();
  std::vector<double> prev(k), cur(k);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double d = distance(a[i], b[j]);
      double reach;
      if (i == 0 && j == 0) {
        reach = 0.0;
      } else if (i == 0) {
        reach = cur[j - 1];
      } else if (j == 0) {
        reach = prev[0];
      } else {
        reach = std::min({prev[j], prev[j - 1], cur[j - 1]});
      }
      cur[j] = std::max(reach, d);
    }
    std::swap(prev, cur);
  }
  return prev[k - 1];
}

inline double frechet_distance(const Centerline& a, const Centerline& b) {
  return frechet_distance(std::span<const Point3>(a.points), std::span<const Point3>(b.points));
}

/// The optimal coupling behind frechet_distance, recovered by backtracking.
inline Coupling frechet_coupling(std::span<const Point3> a, std::span<const Point3> b) {
  detail::require_points(a, "frechet_coupling");
  detail::require_points(b, "frechet_coupling");
  const std::size_t n = a.size(), k = b.size();
  DenseMatrix ca(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double d = distance(a[i], b[j]);
      double reach = 0.0;
      if (i == 0 && j > 0) reach = ca(0, j - 1);
      else if (j == 0 && i > 0) reach = ca(i - 1, 0);
      else if (i > 0 && j > 0) reach = std::min({ca(i - 1, j), ca(i - 1, j - 1), ca(i, j - 1)});
      ca(i, j) = std::max(reach, d);
    }
  }
  Coupling c;
  std::size_t i = n - 1, j = k - 1;
  c.pairs.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i == 0) {
      --j;
    } else if (j == 0) {
      --i;
    } else {
      const double diag = ca(i - 1, j - 1), up = ca(i - 1, j), left = ca(i, j - 1);
      if (diag <= up && diag <= left) {
        --i;
        --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    }
    c.pairs.emplace_back(i, j);
  }
  std::reverse(c.pairs.begin(), c.pairs.end());
  return c;
}

/// Largest pair distance in `coupling`.
inline double coupling_norm(const Coupling& coupling, std::span<const Point3> a,
                            std::span<const Point3> b) {
  double m = 0.0;
  for (auto [i, j] : coupling.pairs) m = std::max(m, distance(a[i], b[j]));
  return m;
}

/// Symmetric mean nearest-neighbour distance; blind to direction.
inline double chamfer_distance(std::span<const Point3> a, std::span<const Point3> b) {
  detail::require_points(a, "chamfer_distance");
  detail::require_points(b, "chamfer_distance");
  auto directed = [](std::span<const Point3> from, std::span<const Point3> to) {
    double sum = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, distance(p, q));
      sum += best;
    }
    return sum / static_cast<double>(from.size());
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

inline double chamfer_distance(const Centerline& a, const Centerline& b) {
  return chamfer_distance(std::span<const Point3>(a.points), std::span<const Point3>(b.points));
}

namespace detail {

inline bool degenerate_box(const Box& b, const char* who) {
  if (!(b.area() > 0.0) || !std::isfinite(b.area())) {
    diagnose("degenerate_box", std::string(who) + ": box has zero area");
    return true;
  }
  return false;
}

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

}  // namespace detail

inline double iou_2d(const Box& a, const Box& b) {
  if (detail::degenerate_box(a, "iou_2d") || detail::degenerate_box(b, "iou_2d")) return 0.0;
  const double inter = detail::intersection_area(a, b);
  return inter / (a.area() + b.area() - inter);
}

/// Generalized IoU: IoU minus the fraction of the enclosing hull not
/// covered by the union. Degenerate input yields 0.
inline double giou_2d(const Box& a, const Box& b) {
  if (detail::degenerate_box(a, "giou_2d") || detail::degenerate_box(b, "giou_2d")) return 0.0;
  const double inter = detail::intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double hull = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                      (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  return inter / uni - (hull - uni) / hull;
}

}  // namespace lanetopo
