#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace lanetopo;

namespace {

FrameGraph two_lane_frame() {
  FrameGraph f;
  f.frame_id = "two";
  f.lanes = {oracle::straight_lane({0, 0, 0}, {10, 0, 0}),
             oracle::straight_lane({10, 0, 0}, {20, 2, 0})};
  f.tes = {TrafficElement::ground_truth({100, 100, 140, 180}, Attribute::kGreen)};
  f.adj_ll = DenseMatrix(2, 2);
  f.adj_ll(0, 1) = 1.0;
  f.adj_lt = DenseMatrix{{1.0}, {0.0}};
  return f;
}

bool has_kind(const std::vector<Violation>& v, ViolationKind k) {
  return std::any_of(v.begin(), v.end(), [k](const Violation& x) { return x.kind == k; });
}

}  // namespace

TEST(Core, WellFormedFrameHasNoViolations) {
  EXPECT_TRUE(validate_frame(two_lane_frame(), EvalConfig{}).empty());
}

TEST(Core, WrongAdjacencyShapeIsReported) {
  FrameGraph f = two_lane_frame();
  f.adj_ll = DenseMatrix(2, 3);
  const auto v = validate_frame(f, EvalConfig{});
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, ViolationKind::kShape);
  EXPECT_EQ(v[0].path, "adj_ll");
}

TEST(Core, GtPointOutsideBevRangeIsReported) {
  FrameGraph f = two_lane_frame();
  f.lanes[1].points.back().x = 60.0;
  const auto v = validate_frame(f, EvalConfig{});
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, ViolationKind::kRange);
  // Predictions are not range-checked.
  EXPECT_TRUE(validate_frame(f, EvalConfig{}, false).empty());
}

TEST(Core, EveryBreachGetsItsOwnRecord) {
  FrameGraph f = two_lane_frame();
  f.lanes[0].confidence = 1.5;
  f.lanes[1].points = {{0, 0, 0}};
  f.tes[0].box = {10, 10, 5, 20};
  f.tes[0].attribute = Attribute::kRed;  // scores still say green
  f.adj_ll(1, 0) = 0.5;                  // GT must be 0/1
  f.adj_lt(1, 0) = std::nan("");
  const auto v = validate_frame(f, EvalConfig{});
  EXPECT_EQ(v.size(), 6u);
  for (auto k : {ViolationKind::kValue, ViolationKind::kTooFewPoints, ViolationKind::kBox,
                 ViolationKind::kNonFinite})
    EXPECT_TRUE(has_kind(v, k)) << violation_kind_name(k);
}

TEST(Core, PredictedAdjacencyMayBeFractional) {
  FrameGraph f = two_lane_frame();
  f.adj_ll(1, 0) = 0.3;
  EXPECT_FALSE(validate_frame(f, EvalConfig{}, true).empty());
  EXPECT_TRUE(validate_frame(f, EvalConfig{}, false).empty());
}

TEST(Core, AsymmetricAdjacencyIsKept) {
  const FrameGraph f = two_lane_frame();
  EXPECT_EQ(f.adj_ll(0, 1), 1.0);
  EXPECT_EQ(f.adj_ll(1, 0), 0.0);
  EXPECT_TRUE(validate_frame(f, EvalConfig{}).empty());
}

TEST(Core, EvalConfigValidation) {
  EXPECT_NO_THROW(EvalConfig{}.validate());
  EvalConfig c;
  c.frechet_thresholds = {2.0, 1.0};
  EXPECT_THROW(c.validate(), InvalidInput);
  c = {};
  c.chamfer_thresholds = {0.0, 1.0};
  EXPECT_THROW(c.validate(), InvalidInput);
  c = {};
  c.edge_confidence_threshold = 1.0;
  EXPECT_THROW(c.validate(), InvalidInput);
}

TEST(Core, ArgmaxPrefersLowestIndexOnTies) {
  ClassScores s{};
  s[3] = 0.7;
  s[5] = 0.7;
  EXPECT_EQ(argmax_attribute(s), Attribute::kYellow);
  EXPECT_EQ(argmax_attribute(one_hot(Attribute::kSlightRight)), Attribute::kSlightRight);
}

TEST(Core, AttributeNamesCoverAllThirteen) {
  EXPECT_EQ(attribute_name(Attribute::kUnknown), "unknown");
  EXPECT_EQ(attribute_name(Attribute::kSlightRight), "slight_right");
  EXPECT_THROW(attribute_from_index(13), InvalidInput);
  EXPECT_THROW(attribute_from_index(-1), InvalidInput);
}

TEST(Core, DenseMatrixRejectsBadShapes) {
  EXPECT_THROW((DenseMatrix{{1.0, 2.0}, {3.0}}), ShapeError);
  DenseMatrix a(2, 2), b(2, 3);
  EXPECT_THROW(a += b, ShapeError);
  EXPECT_THROW(matmul(b, b), ShapeError);
}

TEST(Core, MatmulMatchesHandProduct) {
  const DenseMatrix a{{1, 2}, {3, 4}};
  const DenseMatrix b{{5, 6}, {7, 8}};
  EXPECT_EQ(matmul(a, b), (DenseMatrix{{19, 22}, {43, 50}}));
  EXPECT_EQ(matmul_tn(a, b), matmul(a.transposed(), b));
  EXPECT_EQ(matmul_nt(a, b), matmul(a, b.transposed()));
}
