#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lanetopo/diagnostics.hpp"
#include "lanetopo/matrix.hpp"

namespace lanetopo {

/// Ego-frame point in meters: x forward, y left, z up.
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  bool operator==(const Point3&) const = default;

  bool finite() const noexcept {
    return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
  }
};

inline Point3 operator+(Point3 a, Point3 b) noexcept { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Point3 operator-(Point3 a, Point3 b) noexcept { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Point3 operator*(double s, Point3 a) noexcept { return {s * a.x, s * a.y, s * a.z}; }

inline double distance(Point3 a, Point3 b) noexcept {
  return std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y) +
                   (a.z - b.z) * (a.z - b.z));
}

/// Number of points every centerline carries after resampling.
inline constexpr std::size_t kLanePoints = 11;

/// A directed lane centerline. The first point is where the lane starts,
/// the last point where it ends.
struct Centerline {
  std::vector<Point3> points;
  double confidence = 1.0;

  bool operator==(const Centerline&) const = default;
};

inline Centerline reversed(Centerline line) {
  std::reverse(line.points.begin(), line.points.end());
  return line;
}

/// Traffic-element attributes, in label-index order.
enum class Attribute : int {
  kUnknown = 0,
  kRed,
  kGreen,
  kYellow,
  kGoStraight,
  kTurnLeft,
  kTurnRight,
  kNoLeftTurn,
  kNoRightTurn,
  kUTurn,
  kNoUTurn,
  kSlightLeft,
  kSlightRight,
};

inline constexpr std::size_t kNumAttributes = 13;

inline constexpr std::array<std::string_view, kNumAttributes> kAttributeNames = {
    "unknown",       "red",    "green",     "yellow",       "go_straight",
    "turn_left",     "turn_right", "no_left_turn", "no_right_turn", "u_turn",
    "no_u_turn",     "slight_left", "slight_right"};

inline std::string_view attribute_name(Attribute a) {
  return kAttributeNames.at(static_cast<std::size_t>(a));
}

inline Attribute attribute_from_index(int index) {
  if (index < 0 || index >= static_cast<int>(kNumAttributes))
    throw InvalidInput("attribute index out of range: " + std::to_string(index));
  return static_cast<Attribute>(index);
}

/// Corner-form box in front-view image pixels.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool valid() const noexcept {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x1 < x2 && y1 < y2;
  }

  bool operator==(const Box&) const = default;
};

using ClassScores = std::array<double, kNumAttributes>;

inline ClassScores one_hot(Attribute a) {
  ClassScores s{};
  s[static_cast<std::size_t>(a)] = 1.0;
  return s;
}

/// Index of the highest score; the lowest index wins ties.
inline Attribute argmax_attribute(const ClassScores& scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return static_cast<Attribute>(best);
}

struct TrafficElement {
  Box box;
  Attribute attribute = Attribute::kUnknown;
  ClassScores class_scores = one_hot(Attribute::kUnknown);

  static TrafficElement ground_truth(Box box, Attribute attribute) {
    return {box, attribute, one_hot(attribute)};
  }

  /// Score of the element's own attribute; the ranking confidence for DET_t.
  double confidence() const { return class_scores[static_cast<std::size_t>(attribute)]; }

  bool operator==(const TrafficElement&) const = default;
};

/// One frame: lanes, traffic elements and the two relation matrices.
///
/// `adj_ll(i, j)` is the confidence that lane i's end point connects to lane
/// j's start point; the matrix is not symmetric. `adj_lt(i, k)` relates lane
/// i to traffic element k.
struct FrameGraph {
  std::string frame_id;
  std::vector<Centerline> lanes;
  std::vector<TrafficElement> tes;
  DenseMatrix adj_ll;
  DenseMatrix adj_lt;
  std::optional<std::array<double, 2>> image_size;

  bool operator==(const FrameGraph&) const = default;
};

/// Metric extent of the evaluation region. The z extent only matters for
/// normalizing regression targets.
struct BevRange {
  double x_min = -50.0;
  double x_max = 50.0;
  double y_min = -25.0;
  double y_max = 25.0;
  double z_min = -5.0;
  double z_max = 5.0;

  bool contains_xy(Point3 p) const noexcept {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }
};

enum class ProjectionMode { kHungarian, kGreedy };
enum class ApInterpolation { kAllPoint, kElevenPoint };

/// Scale applied to a lane-matching threshold for one GT lane.
using ThresholdRelaxation = std::function<double(const Centerline& gt_lane)>;

struct EvalConfig {
  std::vector<double> frechet_thresholds{1.0, 2.0, 3.0};
  std::vector<double> chamfer_thresholds{0.5, 1.0, 1.5};
  double te_iou_threshold = 0.75;
  double edge_confidence_threshold = 0.5;
  BevRange bev_range{};
  ProjectionMode projection = ProjectionMode::kHungarian;
  ApInterpolation ap_interpolation = ApInterpolation::kAllPoint;
  /// Identity when empty.
  ThresholdRelaxation threshold_relaxation{};
  std::size_t threads = 1;

  double relaxation(const Centerline& gt_lane) const {
    return threshold_relaxation ? threshold_relaxation(gt_lane) : 1.0;
  }

  /// Throws InvalidInput when thresholds are not strictly positive and
  /// ascending or the edge threshold is outside (0, 1).
  void validate() const {
    auto check = [](const std::vector<double>& t, const char* name) {
      if (t.empty()) throw InvalidInput(std::string(name) + ": empty");
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (!(t[i] > 0.0) || !std::isfinite(t[i]))
          throw InvalidInput(std::string(name) + ": thresholds must be positive");
        if (i > 0 && !(t[i] > t[i - 1]))
          throw InvalidInput(std::string(name) + ": thresholds must ascend");
      }
    };
    check(frechet_thresholds, "frechet_thresholds");
    check(chamfer_thresholds, "chamfer_thresholds");
    if (!(te_iou_threshold > 0.0 && te_iou_threshold <= 1.0))
      throw InvalidInput("te_iou_threshold must be in (0, 1]");
    if (!(edge_confidence_threshold > 0.0 && edge_confidence_threshold < 1.0))
      throw InvalidInput("edge_confidence_threshold must be in (0, 1)");
    if (!(bev_range.x_min < bev_range.x_max && bev_range.y_min < bev_range.y_max &&
          bev_range.z_min < bev_range.z_max))
      throw InvalidInput("bev_range is empty");
  }
};

enum class ViolationKind { kShape, kRange, kNonFinite, kValue, kTooFewPoints, kBox };

struct Violation {
  ViolationKind kind;
  std::string path;
  std::string message;

  bool operator==(const Violation&) const = default;
};

inline std::string_view violation_kind_name(ViolationKind k) {
  switch (k) {
    case ViolationKind::kShape: return "shape";
    case ViolationKind::kRange: return "range";
    case ViolationKind::kNonFinite: return "non_finite";
    case ViolationKind::kValue: return "value";
    case ViolationKind::kTooFewPoints: return "too_few_points";
    case ViolationKind::kBox: return "box";
  }
  return "unknown";
}

/// Checks every frame invariant and reports one record per breach. Lane
/// points are range-checked only when `is_ground_truth` is set.
inline std::vector<Violation> validate_frame(const FrameGraph& frame, const EvalConfig& config,
                                             bool is_ground_truth = true) {
  std::vector<Violation> out;
  auto add = [&out](ViolationKind k, std::string path, std::string msg) {
    out.push_back({k, std::move(path), std::move(msg)});
  };

  const std::size_t n_lanes = frame.lanes.size();
  const std::size_t n_tes = frame.tes.size();

  for (std::size_t i = 0; i < n_lanes; ++i) {
    const auto& lane = frame.lanes[i];
    const std::string path = "lanes[" + std::to_string(i) + "]";
    if (lane.points.size() < 2) add(ViolationKind::kTooFewPoints, path, "fewer than 2 points");
    if (!(lane.confidence >= 0.0 && lane.confidence <= 1.0))
      add(ViolationKind::kValue, path + ".confidence", "confidence outside [0,1]");
    for (std::size_t k = 0; k < lane.points.size(); ++k) {
      const auto& p = lane.points[k];
      const std::string ppath = path + "[" + std::to_string(k) + "]";
      if (!p.finite()) {
        add(ViolationKind::kNonFinite, ppath, "non-finite coordinate");
      } else if (is_ground_truth && !config.bev_range.contains_xy(p)) {
        add(ViolationKind::kRange, ppath, "point outside BEV range");
      }
    }
  }

  for (std::size_t k = 0; k < n_tes; ++k) {
    const auto& te = frame.tes[k];
    const std::string path = "traffic_elements[" + std::to_string(k) + "]";
    if (!te.box.valid()) add(ViolationKind::kBox, path + ".box", "requires x1 < x2 and y1 < y2");
    for (double s : te.class_scores) {
      if (!(s >= 0.0 && s <= 1.0)) {
        add(ViolationKind::kValue, path + ".scores", "class score outside [0,1]");
        break;
      }
    }
    if (argmax_attribute(te.class_scores) != te.attribute)
      add(ViolationKind::kValue, path + ".attribute", "attribute is not argmax of scores");
  }

  auto check_adj = [&](const DenseMatrix& m, std::size_t rows, std::size_t cols,
                       const char* name) {
    if (m.rows() != rows || m.cols() != cols) {
      add(ViolationKind::kShape, name,
          "expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
              m.shape_string());
      return;
    }
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double v = m(r, c);
        const std::string path =
            std::string(name) + "[" + std::to_string(r) + "][" + std::to_string(c) + "]";
        if (!std::isfinite(v)) {
          add(ViolationKind::kNonFinite, path, "non-finite entry");
        } else if (v < 0.0 || v > 1.0) {
          add(ViolationKind::kValue, path, "entry outside [0,1]");
        } else if (is_ground_truth && v != 0.0 && v != 1.0) {
          add(ViolationKind::kValue, path, "ground-truth entry must be 0 or 1");
        }
      }
    }
  };
  check_adj(frame.adj_ll, n_lanes, n_lanes, "adj_ll");
  check_adj(frame.adj_lt, n_lanes, n_tes, "adj_lt");
  return out;
}

}  // namespace lanetopo
