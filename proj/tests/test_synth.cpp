#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace lanetopo;

namespace {

EvalReport score(const SynthSpec& spec, std::size_t frames) {
  const auto gts = generate_frames(spec, frames);
  std::vector<FrameGraph> preds;
  for (const auto& g : gts) preds.push_back(perturb(g, spec));
  return evaluate(gts, preds, EvalConfig{});
}

std::size_t max_out_degree(const DenseMatrix& adj) {
  std::size_t best = 0;
  for (std::size_t i = 0; i < adj.rows(); ++i) {
    std::size_t d = 0;
    for (std::size_t j = 0; j < adj.cols(); ++j) d += adj(i, j) >= 0.5;
    best = std::max(best, d);
  }
  return best;
}

}  // namespace

TEST(Synth, SameSeedSameBytes) {
  SynthSpec spec;
  spec.seed = 77;
  spec.point_sigma = 0.4;
  spec.edge_flip = 0.1;
  for (std::size_t i = 0; i < 5; ++i) {
    const FrameGraph a = generate(spec, i), b = generate(spec, i);
    EXPECT_EQ(a, b);
    EXPECT_EQ(serialize_scene(a), serialize_scene(b));
    EXPECT_EQ(serialize_scene(perturb(a, spec)), serialize_scene(perturb(b, spec)));
  }
  SynthSpec other = spec;
  other.seed = 78;
  EXPECT_NE(serialize_scene(generate(spec, 0)), serialize_scene(generate(other, 0)));
}

TEST(Synth, GeneratedFramesAreValid) {
  SynthSpec spec;
  spec.seed = 3;
  const EvalConfig cfg;
  for (const auto& f : generate_frames(spec, 100)) {
    EXPECT_TRUE(validate_frame(f, cfg).empty()) << f.frame_id;
    for (const auto& l : f.lanes) EXPECT_EQ(l.points.size(), kLanePoints);
    EXPECT_GE(f.tes.size(), spec.te_min);
    EXPECT_LE(f.tes.size(), spec.te_max);
  }
}

TEST(Synth, IntersectionsBranchAndCorridorsDoNot) {
  SynthSpec spec;
  spec.seed = 5;
  spec.intersection_probability = 1.0;
  for (const auto& f : generate_frames(spec, 30)) {
    EXPECT_GE(max_out_degree(f.adj_ll), 2u) << f.frame_id;
    for (std::size_t i = 0; i < f.lanes.size(); ++i) EXPECT_EQ(f.adj_ll(i, i), 0.0);
  }
  spec.intersection_probability = 0.0;
  for (const auto& f : generate_frames(spec, 30)) {
    EXPECT_EQ(max_out_degree(f.adj_ll), 0u) << f.frame_id;
    EXPECT_GE(f.lanes.size(), spec.lanes_min);
    EXPECT_LE(f.lanes.size(), spec.lanes_max);
  }
}

TEST(Synth, EdgesJoinEndToStart) {
  SynthSpec spec;
  spec.seed = 6;
  spec.intersection_probability = 1.0;
  for (const auto& f : generate_frames(spec, 20))
    for (std::size_t i = 0; i < f.lanes.size(); ++i)
      for (std::size_t j = 0; j < f.lanes.size(); ++j)
        if (f.adj_ll(i, j) >= 0.5)
          EXPECT_LT(distance(f.lanes[i].points.back(), f.lanes[j].points.front()), 1e-9)
              << f.frame_id << " " << i << "->" << j;
}

TEST(Synth, NoiseFreePerturbationIsPerfect) {
  SynthSpec spec;
  spec.seed = 9;
  const EvalReport r = score(spec, 20);
  EXPECT_EQ(r.ols, 1.0);
  EXPECT_EQ(r.det_l, 1.0);
  EXPECT_EQ(r.top_lt, 1.0);
}

TEST(Synth, DroppingEveryLaneZeroesLaneScores) {
  SynthSpec spec;
  spec.seed = 10;
  spec.lane_drop = 1.0;
  const EvalReport r = score(spec, 10);
  EXPECT_EQ(r.det_l, 0.0);
  EXPECT_EQ(r.top_ll, 0.0);
  EXPECT_EQ(r.det_t, 1.0);
}

TEST(Synth, SmallJitterStaysWithinEveryThreshold) {
  // Offsets are clipped at 2 sigma = 0.8 m, below the tightest threshold.
  SynthSpec spec;
  spec.seed = 11;
  spec.point_sigma = 0.4;
  EXPECT_EQ(score(spec, 20).det_l, 1.0);
}

TEST(Synth, JitterSweepIsMonotone) {
  double last = 2.0;
  for (double sigma : {0.0, 0.5, 1.0, 1.5, 2.5, 3.5}) {
    SynthSpec spec;
    spec.seed = 12;
    spec.point_sigma = sigma;
    const double d = score(spec, 30).det_l;
    EXPECT_LE(d, last) << sigma;
    last = d;
  }
  EXPECT_LT(last, 0.1);
}

TEST(Synth, EdgeFlipSweepIsMonotone) {
  double last = 2.0;
  for (double flip : {0.0, 0.1, 0.3, 0.6}) {
    SynthSpec spec;
    spec.seed = 13;
    spec.edge_flip = flip;
    const double t = score(spec, 30).top_ll;
    if (flip == 0.0) EXPECT_EQ(t, 1.0);
    EXPECT_LE(t, last) << flip;
    last = t;
  }
}

TEST(Synth, AddedLanesComeWithLowConfidence) {
  SynthSpec spec;
  spec.seed = 14;
  spec.lane_add = 1.0;
  spec.fp_confidence = {0.1, 0.3};
  const FrameGraph g = generate(spec, 0);
  const FrameGraph p = perturb(g, spec);
  ASSERT_GT(p.lanes.size(), g.lanes.size());
  std::size_t low = 0;
  for (const auto& l : p.lanes) low += l.confidence <= 0.3;
  EXPECT_EQ(low, p.lanes.size() - g.lanes.size());
  EXPECT_TRUE(validate_frame(p, EvalConfig{}, false).empty());
}

TEST(Synth, SpecValidation) {
  auto bad = [](auto mutate) {
    SynthSpec s;
    mutate(s);
    return s;
  };
  EXPECT_THROW(bad([](SynthSpec& s) { s.lane_drop = 1.5; }).validate(), InvalidInput);
  EXPECT_THROW(bad([](SynthSpec& s) { s.point_sigma = -1; }).validate(), InvalidInput);
  EXPECT_THROW(bad([](SynthSpec& s) { s.lanes_min = 0; }).validate(), InvalidInput);
  EXPECT_THROW(bad([](SynthSpec& s) { s.lanes_min = 5, s.lanes_max = 3; }).validate(), InvalidInput);
  EXPECT_THROW(bad([](SynthSpec& s) { s.lanes_max = 11; }).validate(), InvalidInput);
  EXPECT_THROW(bad([](SynthSpec& s) { s.fp_confidence = {0.6, 0.4}; }).validate(), InvalidInput);
  EXPECT_THROW(generate(bad([](SynthSpec& s) { s.edge_flip = -0.1; }), 0), InvalidInput);
  EXPECT_NO_THROW(SynthSpec{}.validate());
}
