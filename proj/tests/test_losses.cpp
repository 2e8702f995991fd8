#include <gtest/gtest.h>

#include <cmath>

#include "alike/losses.hpp"
#include "gradient_cases.hpp"
#include "oracles.hpp"

using namespace alike;
using namespace alike::testing;

namespace {

const WarpSpec kIdentity = WarpSpec::from_homography(Eigen::Matrix3d::Identity(), {16, 16}, {16, 16});

}  // namespace

TEST(TotalLoss, WeightedSum) {
  LossConfig cfg;
  EXPECT_EQ(total_loss(0, 0, 0, 0, cfg).total, 0.0);
  EXPECT_NEAR(total_loss(0.1, 0.2, 0.3, 0.4, cfg).total, 2.6, 1e-12);
  const double base = total_loss(0.1, 0.2, 0.3, 0.4, cfg).total;
  cfg.w_de *= 2;
  EXPECT_NEAR(total_loss(0.1, 0.2, 0.3, 0.4, cfg).total - base, 5 * 0.4, 1e-12);
}

TEST(LossConfig, Validation) {
  LossConfig c;
  c.t_des = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.norm_p = 0.5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ReprojectionLoss, ExactCorrespondencesGiveZero) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({2, 2}, {3, 4, 8, 9}));
  const std::vector<Correspondence> c{{0, 0, {3, 4}, 0}, {1, 1, {8, 9}, 0}};
  EXPECT_EQ(reprojection_loss(a, a, c, c, kIdentity, LossConfig{}).value()[0], 0.0);
}

TEST(ReprojectionLoss, HandL1Example) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({2, 2}, {1, 2, 5, 5}));
  auto b = g.constant(Tensor<double>({2, 2}, {2, 4, 5, 5}));
  const std::vector<Correspondence> ab{{0, 0, {1, 2}, std::sqrt(5.0)}};
  const std::vector<Correspondence> ba{{1, 1, {5, 5}, 0.0}};
  EXPECT_NEAR(reprojection_loss(a, b, ab, ba, kIdentity, LossConfig{}).value()[0], 1.5, 1e-15);
}

TEST(ReprojectionLoss, EmptyDirectionFlagged) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({1, 2}, {1, 2}));
  bool empty = false;
  EXPECT_EQ(reprojection_loss(a, a, {}, {}, kIdentity, LossConfig{}, &empty).value()[0], 0.0);
  EXPECT_TRUE(empty);
}

TEST(ReprojectionLoss, GradientThroughDetection) {
  Rng rng(1);
  for (int i = 0; i < 20; ++i) EXPECT_LT(reprojection_case(rng), 1e-4);
}

TEST(PeakLoss, UniformWindow) {
  Graph<double> g;
  auto probs = g.constant(Tensor<double>({1, 9}, 1.0 / 9.0));
  auto off = g.constant(Tensor<double>({1, 2}, 0.0));
  EXPECT_NEAR(dispersity_peak_loss(probs, off, 3, 1.0).value()[0], 4.0 / 27.0, 1e-15);
}

TEST(PeakLoss, NearDeltaIsZero) {
  std::vector<double> patch(25, 0.0);
  patch[12] = 1.0;
  Graph<double> g;
  Var<double> probs;
  auto off = softargmax_offsets(g.constant(Tensor<double>({1, 25}, patch)), 5, 1e-3, &probs);
  EXPECT_LT(dispersity_peak_loss(probs, off, 5, 1.0).value()[0], 1e-12);
}

TEST(PeakLoss, Gradient) {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) EXPECT_LT(peak_case(rng), 1e-5);
}

TEST(Nre, OnePixelMap) {
  Graph<double> g;
  auto sim = g.constant(Tensor<double>({1, 1}, 1.0));
  const auto q = reprojection_probability(Point2{0, 0}, 1, 1);
  const auto qm = matching_probability(sim.value(), 0.02, 0.0);
  EXPECT_NEAR(qm[1], std::exp(-50.0) / (1 + std::exp(-50.0)), 1e-30);
  const double nre = nre_sum(sim, {q}, 0.02, 0.0).value()[0];
  EXPECT_NEAR(nre, std::log1p(std::exp(-50.0)), 1e-30);
  EXPECT_NEAR(nre, 1.9e-22, 0.05e-22);
}

TEST(Nre, ThreeBinSoftmax) {
  Graph<double> g;
  auto sim = g.constant(Tensor<double>({1, 2}, {1.0, 0.0}));
  ReprojectionProbability q;
  q.bins = {0, 0, 0, 0};
  q.weights = {1.0, 0.0, 0.0, 0.0};
  EXPECT_NEAR(nre_sum(sim, {q}, 1.0, 0.0).value()[0], std::log(1.0 + 2.0 * std::exp(-1.0)), 1e-15);
}

TEST(Nre, NonNegative) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto sim = random_tensor(rng, {4, 30});
    Graph<double> g;
    EXPECT_GE(nre_sum(g.constant(sim), random_targets(rng, 4, 5, 6), rng.uniform(0.02, 1), 0.0).value()[0], 0.0);
  }
}

TEST(Nre, MatchingProbabilitySumsToOne) {
  Rng rng(4);
  const auto q = matching_probability(random_tensor(rng, {6, 144}), 0.02, 0.0);
  for (int r = 0; r < 6; ++r) {
    double s = 0.0;
    for (int j = 0; j < 145; ++j) s += q[r * 145 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Nre, SparseEqualsDense) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto sim = random_tensor(rng, {8, 144});
    const auto q = random_targets(rng, 8, 12, 12);
    const double t = rng.uniform(0.02, 1.0);
    Graph<double> g;
    const double sparse = nre_sum(g.constant(sim), q, t, 0.0).value()[0];
    EXPECT_NEAR(sparse, dense_nre(sim, q, t, 0.0), 1e-9 * std::max(1.0, std::abs(sparse)));
  }
}

TEST(Nre, Gradient) {
  Rng rng(6);
  for (int i = 0; i < 30; ++i) EXPECT_LT(nre_case(rng), 1e-5);
}

TEST(Reliability, PerfectMatchIsZero) {
  Graph<double> g;
  auto sim = g.constant(Tensor<double>({2, 16}, 1.0));
  auto p = g.constant(Tensor<double>({2, 2}, {1.5, 2.25, 3.0, 0.5}));
  auto s = g.constant(Tensor<double>({2}, {0.4, 0.9}));
  auto target = g.constant(Tensor<double>({4, 4}, 0.7));
  EXPECT_NEAR(reliability_term(sim, p, {true, true}, s, target, 1.0).value()[0], 0.0, 1e-15);
}

TEST(Reliability, SingleKeypointHalfSimilarity) {
  Graph<double> g;
  auto sim = g.constant(Tensor<double>({1, 16}, 0.5));
  auto p = g.constant(Tensor<double>({1, 2}, {1.3, 2.6}));
  auto s = g.constant(Tensor<double>({1}, 0.8));
  auto target = g.constant(Tensor<double>({4, 4}, 0.3));
  EXPECT_NEAR(reliability_term(sim, p, {true}, s, target, 1.0).value()[0], 1.0 - std::exp(-0.5), 1e-15);
}

TEST(Reliability, InvalidRowsSkipped) {
  Graph<double> g;
  auto sim = g.constant(Tensor<double>({2, 16}, {1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1,
                                                  0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
  auto p = g.constant(Tensor<double>({2, 2}, {1, 1, 2, 2}));
  auto s = g.constant(Tensor<double>({2}, 0.5));
  auto target = g.constant(Tensor<double>({4, 4}, 0.5));
  EXPECT_NEAR(reliability_term(sim, p, {true, false}, s, target, 1.0).value()[0], 0.0, 1e-15);
  bool empty = false;
  EXPECT_EQ(reliability_term(sim, p, {false, false}, s, target, 1.0, &empty).value()[0], 0.0);
  EXPECT_TRUE(empty);
}

TEST(Reliability, RangeProperty) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Graph<double> g;
    auto sim = g.constant(random_tensor(rng, {5, 20}, -1.0, 1.0));
    auto p = g.constant(random_coords(rng, 5, 5, 4));
    auto s = g.constant(random_tensor(rng, {5}, 0.01, 1.0));
    auto target = g.constant(random_tensor(rng, {4, 5}, 0.01, 1.0));
    const double v = reliability_term(sim, p, std::vector<bool>(5, true), s, target, rng.uniform(0.1, 2)).value()[0];
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Reliability, Gradient) {
  Rng rng(8);
  for (int i = 0; i < 30; ++i) EXPECT_LT(reliability_case(rng), 1e-5);
}

TEST(Triplet, SeparatedPairsHaveNoLoss) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  EXPECT_NEAR(triplet_loss(a, a, 0.5).value()[0], 0.0, 1e-12);
  auto b = g.constant(Tensor<double>({2, 2}, {0, 1, 1, 0}));
  // positive distance sqrt(2), hardest negative distance 0 up to the 1e-12
  // stabiliser under the square root
  EXPECT_NEAR(triplet_loss(a, b, 0.5).value()[0], 0.5 + std::sqrt(2.0) - 1e-6, 1e-9);
}
