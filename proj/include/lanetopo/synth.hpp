#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lanetopo/core.hpp"
#include "lanetopo/focal.hpp"
#include "lanetopo/geometry.hpp"
#include "lanetopo/rng.hpp"

namespace lanetopo {

struct ConfidenceBand {
  double lo = 1.0;
  double hi = 1.0;

  bool operator==(const ConfidenceBand&) const = default;
};

/// Scene generator and perturbation settings.
///
/// `lanes_min..lanes_max` counts parallel corridor lanes; intersection frames
/// add connector and turn-exit lanes on top of them.
struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t lanes_min = 2;
  std::size_t lanes_max = 4;
  double intersection_probability = 0.5;
  std::size_t te_min = 1;
  std::size_t te_max = 4;

  // Perturbation.
  double point_sigma = 0.0;  // meters; each point offset is clipped at 2 sigma
  double lane_drop = 0.0;
  double lane_add = 0.0;
  double te_drop = 0.0;
  double te_add = 0.0;
  double attribute_corruption = 0.0;
  double edge_flip = 0.0;
  ConfidenceBand tp_confidence{1.0, 1.0};
  ConfidenceBand fp_confidence{0.0, 0.0};

  bool operator==(const SynthSpec&) const = default;

  void validate() const {
    auto rate = [](double r, const char* name) {
      if (!(r >= 0.0 && r <= 1.0)) throw InvalidInput(std::string("synth: ") + name + " must be in [0,1]");
    };
    rate(intersection_probability, "intersection_probability");
    rate(lane_drop, "lane_drop");
    rate(lane_add, "lane_add");
    rate(te_drop, "te_drop");
    rate(te_add, "te_add");
    rate(attribute_corruption, "attribute_corruption");
    rate(edge_flip, "edge_flip");
    if (!(point_sigma >= 0.0) || !std::isfinite(point_sigma))
      throw InvalidInput("synth: point_sigma must be >= 0");
    if (lanes_min == 0) throw InvalidInput("synth: lanes_min must be at least 1");
    if (lanes_min > lanes_max) throw InvalidInput("synth: lanes_min exceeds lanes_max");
    if (lanes_max > kMaxCorridorLanes)
      throw InvalidInput("synth: at most " + std::to_string(kMaxCorridorLanes) +
                         " corridor lanes fit in the BEV range");
    if (te_min > te_max) throw InvalidInput("synth: te_min exceeds te_max");
    for (const auto* b : {&tp_confidence, &fp_confidence})
      if (!(b->lo >= 0.0 && b->lo <= b->hi && b->hi <= 1.0))
        throw InvalidInput("synth: confidence band must satisfy 0 <= lo <= hi <= 1");
  }

  static constexpr std::size_t kMaxCorridorLanes = 10;
};

namespace detail {

inline constexpr double kLaneWidth = 3.5;
inline constexpr double kImageExtent = 1550.0;

inline std::string frame_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06zu", index);
  return buf;
}

/// FNV-1a over the frame id.
inline std::uint64_t frame_key(std::string_view id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

enum class Draw : std::uint64_t {
  kLaneDrop = 1,
  kLaneJitter,
  kLaneConfidence,
  kLaneAdd,
  kTeDrop,
  kTeCorrupt,
  kTeScore,
  kTeAdd,
  kEdgeFlipLl,
  kEdgeFlipLt,
  kEdgeConfLl,
  kEdgeConfLt,
};

/// Independent stream per (frame, purpose, element), so changing one rate
/// never shifts the draws behind another and sweeping a rate gives nested
/// outcomes.
inline CounterRng draw_stream(std::uint64_t seed, std::uint64_t frame, Draw kind,
                              std::uint64_t index) {
  return CounterRng(seed, mix64(frame + mix64(static_cast<std::uint64_t>(kind) + mix64(index))));
}

inline double band_draw(CounterRng& rng, ConfidenceBand b) {
  return b.lo == b.hi ? b.lo : rng.uniform(b.lo, b.hi);
}

template <typename Curve>
Centerline sample_curve(Curve&& curve) {
  constexpr std::size_t kDense = 64;
  Centerline dense;
  for (std::size_t i = 0; i < kDense; ++i)
    dense.points.push_back(curve(static_cast<double>(i) / static_cast<double>(kDense - 1)));
  return resample(dense, kLanePoints);
}

/// Cubic Bezier from `a` heading `da` to `b` heading `db`.
inline Centerline connector(Point3 a, Point3 da, Point3 b, Point3 db) {
  const double reach = 0.4 * distance(a, b);
  const Point3 c1 = a + reach * da;
  const Point3 c2 = b - reach * db;
  return sample_curve([&](double t) {
    const double u = 1.0 - t;
    return (u * u * u) * a + (3.0 * u * u * t) * c1 + (3.0 * u * t * t) * c2 + (t * t * t) * b;
  });
}

inline Box random_box(CounterRng& rng, double y_lo, double y_hi, const std::vector<Box>& taken) {
  Box b;
  for (int attempt = 0; attempt < 32; ++attempt) {
    const double w = rng.uniform(30.0, 160.0), h = rng.uniform(30.0, 160.0);
    const double x = rng.uniform(0.0, kImageExtent - w), y = rng.uniform(y_lo, y_hi - h);
    b = {x, y, x + w, y + h};
    const bool clear = std::none_of(taken.begin(), taken.end(),
                                    [&](const Box& o) { return detail::intersection_area(b, o) > 0.0; });
    if (clear) break;
  }
  return b;
}

}  // namespace detail

/// Ground-truth frame `frame_index` of the spec's scene stream.
inline FrameGraph generate(const SynthSpec& spec, std::size_t frame_index) {
  spec.validate();
  CounterRng rng(spec.seed, mix64(frame_index) ^ 0x5359'4e54'4845'5349ULL);
  FrameGraph f;
  f.frame_id = detail::frame_name(frame_index);
  f.image_size = std::array<double, 2>{detail::kImageExtent, detail::kImageExtent};

  const std::size_t n = rng.range(spec.lanes_min, spec.lanes_max);
  const bool intersection = rng.bernoulli(spec.intersection_probability);
  const double shift = rng.uniform(-0.3, 0.3);
  const double bend = rng.uniform(-0.0015, 0.0015);
  const double slope = rng.uniform(-0.02, 0.02);
  // Lane k is the k-th from the right; larger y is further left.
  auto corridor_y = [&](std::size_t k) {
    return (static_cast<double>(k) - 0.5 * static_cast<double>(n - 1)) * detail::kLaneWidth + shift;
  };
  auto corridor = [&](std::size_t k, double x0, double x1) {
    const double y0 = corridor_y(k);
    return detail::sample_curve([&](double t) {
      const double x = x0 + t * (x1 - x0);
      return Point3{x, y0 + bend * x * x, slope * x};
    });
  };
  auto heading = [&](double x) {
    const Point3 d{1.0, 2.0 * bend * x, slope};
    return (1.0 / std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z)) * d;
  };

  std::vector<std::pair<std::size_t, std::size_t>> ll_edges;
  std::vector<std::pair<Attribute, std::vector<std::size_t>>> te_candidates;

  if (!intersection) {
    for (std::size_t k = 0; k < n; ++k) f.lanes.push_back(corridor(k, -45.0, 45.0));
  } else {
    constexpr double kStop = -8.0, kGo = 8.0;
    std::vector<std::size_t> approach(n), exit(n);
    for (std::size_t k = 0; k < n; ++k) {
      approach[k] = f.lanes.size();
      f.lanes.push_back(corridor(k, -45.0, kStop));
    }
    for (std::size_t k = 0; k < n; ++k) {
      exit[k] = f.lanes.size();
      f.lanes.push_back(corridor(k, kGo, 45.0));
    }
    std::vector<std::vector<std::size_t>> successors(n);
    std::vector<std::size_t> straight, slight_left, slight_right, turn_left, turn_right;
    auto connect = [&](std::size_t from, Centerline c, std::size_t to) {
      const std::size_t id = f.lanes.size();
      f.lanes.push_back(std::move(c));
      ll_edges.emplace_back(approach[from], id);
      if (to != static_cast<std::size_t>(-1)) ll_edges.emplace_back(id, to);
      successors[from].push_back(id);
      return id;
    };
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t gap = i > j ? i - j : j - i;
        if (gap > 2) continue;
        if (gap > 0 && !rng.bernoulli(0.35)) continue;
        const Point3 a = f.lanes[approach[i]].points.back();
        const Point3 b = f.lanes[exit[j]].points.front();
        const std::size_t id = connect(i, detail::connector(a, heading(kStop), b, heading(kGo)), exit[j]);
        (j == i ? straight : j > i ? slight_left : slight_right).push_back(id);
      }
    }
    auto turn = [&](std::size_t from, double side) {
      // Exit road perpendicular to the corridor, leaving towards +y or -y.
      const double y_edge = corridor_y(from) + side * 5.0;
      const Point3 start{0.0, y_edge, 0.0}, end{0.0, side * 24.0, 0.0};
      const Centerline exit_lane =
          detail::sample_curve([&](double t) { return start + t * (end - start); });
      const std::size_t exit_id = f.lanes.size();
      f.lanes.push_back(exit_lane);
      const Point3 a = f.lanes[approach[from]].points.back();
      return connect(from, detail::connector(a, heading(kStop), start, {0.0, side, 0.0}), exit_id);
    };
    const bool left = rng.bernoulli(0.6), right = rng.bernoulli(0.6);
    if (left) turn_left.push_back(turn(n - 1, 1.0));
    if (right) turn_right.push_back(turn(0, -1.0));
    const bool branching = std::any_of(successors.begin(), successors.end(),
                                       [](const auto& s) { return s.size() >= 2; });
    if (!branching) turn_left.push_back(turn(n - 1, 1.0));

    std::vector<std::size_t> all_connectors;
    for (const auto& s : successors) all_connectors.insert(all_connectors.end(), s.begin(), s.end());
    const Attribute light = attribute_from_index(static_cast<int>(rng.range(1, 3)));
    te_candidates.push_back({light, all_connectors});
    if (!straight.empty()) te_candidates.push_back({Attribute::kGoStraight, straight});
    if (!slight_left.empty()) te_candidates.push_back({Attribute::kSlightLeft, slight_left});
    if (!slight_right.empty()) te_candidates.push_back({Attribute::kSlightRight, slight_right});
    if (!turn_left.empty()) te_candidates.push_back({Attribute::kTurnLeft, turn_left});
    if (!turn_right.empty()) te_candidates.push_back({Attribute::kTurnRight, turn_right});
    if (turn_left.empty()) te_candidates.push_back({Attribute::kNoLeftTurn, {approach[n - 1]}});
    if (turn_right.empty()) te_candidates.push_back({Attribute::kNoRightTurn, {approach[0]}});
    te_candidates.push_back({Attribute::kNoUTurn, {approach[n - 1]}});
  }

  // Traffic elements: semantic candidates in shuffled order, padded with
  // signs that govern no lane.
  for (std::size_t i = te_candidates.size(); i > 1; --i)
    std::swap(te_candidates[i - 1], te_candidates[rng.index(i)]);
  const std::size_t n_te = rng.range(spec.te_min, spec.te_max);
  te_candidates.resize(n_te, {Attribute::kUnknown, {}});
  std::vector<Box> boxes;
  for (const auto& [attr, lanes] : te_candidates) {
    const bool is_light = attr == Attribute::kRed || attr == Attribute::kGreen ||
                          attr == Attribute::kYellow;
    boxes.push_back(detail::random_box(rng, is_light ? 50.0 : 400.0, is_light ? 600.0 : 1500.0, boxes));
    f.tes.push_back(TrafficElement::ground_truth(boxes.back(), attr));
  }

  f.adj_ll = DenseMatrix(f.lanes.size(), f.lanes.size());
  for (auto [a, b] : ll_edges) f.adj_ll(a, b) = 1.0;
  f.adj_lt = DenseMatrix(f.lanes.size(), f.tes.size());
  for (std::size_t k = 0; k < te_candidates.size(); ++k)
    for (std::size_t lane : te_candidates[k].second) f.adj_lt(lane, k) = 1.0;
  return f;
}

inline std::vector<FrameGraph> generate_frames(const SynthSpec& spec, std::size_t count) {
  std::vector<FrameGraph> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate(spec, i));
  return out;
}

/// Prediction derived from a ground-truth frame by the spec's perturbation
/// model. With every rate and sigma at zero and the default bands this is
/// the ground truth with confidence 1 everywhere.
inline FrameGraph perturb(const FrameGraph& gt, const SynthSpec& spec) {
  spec.validate();
  using detail::Draw;
  const std::uint64_t key = detail::frame_key(gt.frame_id);
  auto stream = [&](Draw d, std::uint64_t i) { return detail::draw_stream(spec.seed, key, d, i); };
  auto pair_index = [](std::size_t a, std::size_t b) {
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
  };

  FrameGraph p;
  p.frame_id = gt.frame_id;
  p.image_size = gt.image_size;
  const double image_w = gt.image_size ? (*gt.image_size)[0] : detail::kImageExtent;
  const double image_h = gt.image_size ? (*gt.image_size)[1] : detail::kImageExtent;

  // Lanes.
  std::vector<std::size_t> lane_src;  // GT index, or npos for added lanes
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  for (std::size_t i = 0; i < gt.lanes.size(); ++i) {
    if (stream(Draw::kLaneDrop, i).uniform() < spec.lane_drop) continue;
    Centerline l = gt.lanes[i];
    if (spec.point_sigma > 0.0) {
      auto rng = stream(Draw::kLaneJitter, i);
      for (auto& pt : l.points) {
        Point3 z{rng.normal(), rng.normal(), rng.normal()};
        const double norm = std::sqrt(z.x * z.x + z.y * z.y + z.z * z.z);
        if (norm > 2.0) z = (2.0 / norm) * z;
        pt = pt + spec.point_sigma * z;
      }
    }
    auto conf = stream(Draw::kLaneConfidence, i);
    l.confidence = detail::band_draw(conf, spec.tp_confidence);
    p.lanes.push_back(std::move(l));
    lane_src.push_back(i);
  }
  for (std::size_t i = 0; i < gt.lanes.size(); ++i) {
    auto rng = stream(Draw::kLaneAdd, i);
    if (!(rng.uniform() < spec.lane_add)) continue;
    const Point3 a{rng.uniform(-45.0, 35.0), rng.uniform(-22.0, 22.0), 0.0};
    const double angle = rng.uniform(-0.5, 0.5), len = rng.uniform(5.0, 10.0);
    const Point3 b = a + Point3{len * std::cos(angle), len * std::sin(angle), 0.0};
    Centerline l = detail::sample_curve([&](double t) { return a + t * (b - a); });
    l.confidence = detail::band_draw(rng, spec.fp_confidence);
    p.lanes.push_back(std::move(l));
    lane_src.push_back(npos);
  }

  // Traffic elements. A floor keeps the labelled attribute the arg-max even
  // when the band allows a zero score.
  auto scores_for = [](Attribute a, double s) {
    ClassScores c{};
    c[static_cast<std::size_t>(a)] = std::max(s, 1e-3);
    return c;
  };
  std::vector<std::size_t> te_src;
  for (std::size_t k = 0; k < gt.tes.size(); ++k) {
    if (stream(Draw::kTeDrop, k).uniform() < spec.te_drop) continue;
    TrafficElement te = gt.tes[k];
    auto corrupt = stream(Draw::kTeCorrupt, k);
    if (corrupt.uniform() < spec.attribute_corruption) {
      const int shift = 1 + static_cast<int>(corrupt.index(kNumAttributes - 1));
      te.attribute = attribute_from_index((static_cast<int>(te.attribute) + shift) %
                                          static_cast<int>(kNumAttributes));
    }
    auto score = stream(Draw::kTeScore, k);
    te.class_scores = scores_for(te.attribute, detail::band_draw(score, spec.tp_confidence));
    p.tes.push_back(te);
    te_src.push_back(k);
  }
  for (std::size_t k = 0; k < gt.tes.size(); ++k) {
    auto rng = stream(Draw::kTeAdd, k);
    if (!(rng.uniform() < spec.te_add)) continue;
    const double w = rng.uniform(30.0, 160.0), h = rng.uniform(30.0, 160.0);
    const double x = rng.uniform(0.0, image_w - w), y = rng.uniform(0.0, image_h - h);
    const Attribute a = attribute_from_index(static_cast<int>(rng.index(kNumAttributes)));
    p.tes.push_back({Box{x, y, x + w, y + h}, a,
                     scores_for(a, detail::band_draw(rng, spec.fp_confidence))});
    te_src.push_back(npos);
  }

  // Relations: surviving GT labels, flipped at the edge rate, then given a
  // confidence from the band matching the final label. Draws are keyed by
  // GT indices where they exist so drop sweeps stay comparable.
  auto key_of = [&](const std::vector<std::size_t>& src, std::size_t i) {
    return src[i] != npos ? src[i] : (std::size_t{1} << 31) + i;
  };
  auto fill = [&](DenseMatrix& out, const DenseMatrix& gt_adj, const std::vector<std::size_t>& rows,
                  const std::vector<std::size_t>& cols, Draw flip, Draw conf, bool skip_diagonal) {
    out = DenseMatrix(rows.size(), cols.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t c = 0; c < cols.size(); ++c) {
        if (skip_diagonal && r == c) continue;
        bool label = rows[r] != npos && cols[c] != npos && gt_adj(rows[r], cols[c]) >= 0.5;
        const std::uint64_t id = pair_index(key_of(rows, r), key_of(cols, c));
        if (stream(flip, id).uniform() < spec.edge_flip) label = !label;
        auto rng = stream(conf, id);
        out(r, c) = detail::band_draw(rng, label ? spec.tp_confidence : spec.fp_confidence);
      }
    }
  };
  fill(p.adj_ll, gt.adj_ll, lane_src, lane_src, Draw::kEdgeFlipLl, Draw::kEdgeConfLl, true);
  fill(p.adj_lt, gt.adj_lt, lane_src, te_src, Draw::kEdgeFlipLt, Draw::kEdgeConfLt, false);
  return p;
}

}  // namespace lanetopo
