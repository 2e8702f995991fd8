#include <gtest/gtest.h>

#include <cmath>

#include "alike/backbone.hpp"
#include "alike/detect.hpp"
#include "test_util.hpp"

using namespace alike;
using alike::testing::gradient_error;
using alike::testing::random_tensor;

namespace {

DetectorConfig config(int window, double t_det = 0.1, double threshold = 0.2, int margin = 2) {
  DetectorConfig c;
  c.window = window;
  c.t_det = t_det;
  c.threshold = threshold;
  c.margin = margin;
  return c;
}

// center 1, (+1,+1) corner 0.5, rest 0 on a 3x3 patch
std::vector<double> asymmetric_patch() { return {0, 0, 0, 0, 1, 0, 0, 0, 0.5}; }

// Expected offset of the asymmetric patch at temperature t, summed by hand:
// the corner contributes (+1,+1) e^{-0.5/t}; the seven zero cells sum to (-1,-1) e^{-1/t}.
double asymmetric_offset(double t) {
  const double c = std::exp(-0.5 / t), z = std::exp(-1.0 / t);
  return (c - z) / (1.0 + c + 7.0 * z);
}

}  // namespace

TEST(Nms, SinglePeak) {
  Tensor<double> m({9, 9}, 0.1);
  m[4 * 9 + 4] = 0.9;
  const auto s = nms(m, config(5));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0], (PixelPos{4, 4}));
}

TEST(Nms, AllBelowThreshold) {
  EXPECT_TRUE(nms(Tensor<double>({9, 9}, 0.1), config(5)).empty());
}

TEST(Nms, TwoDisjointPeaks) {
  Tensor<double> m({9, 25}, 0.1);
  m[4 * 25 + 4] = 0.9;
  m[4 * 25 + 20] = 0.9;
  const auto s = nms(m, config(5));
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0], (PixelPos{4, 4}));
  EXPECT_EQ(s[1], (PixelPos{20, 4}));
}

TEST(Nms, PlateauKeepsFirstInRowMajorOrder) {
  Tensor<double> m({11, 11}, 0.0);
  m[5 * 11 + 5] = 0.7;
  m[5 * 11 + 6] = 0.7;
  const auto s = nms(m, config(3, 0.1, 0.2, 1));
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0], (PixelPos{5, 5}));
}

TEST(Nms, TopKAndOrdering) {
  Tensor<double> m({32, 32}, 0.0);
  Rng rng(3);
  for (int y = 6; y < 26; y += 5)
    for (int x = 6; x < 26; x += 5) m[y * 32 + x] = rng.uniform(0.3, 1.0);
  auto cfg = config(3);
  cfg.top_k = 5;
  const auto s = nms(m, cfg);
  ASSERT_EQ(s.size(), 5u);
  for (std::size_t i = 1; i < s.size(); ++i) {
    EXPECT_GE(m[s[i - 1].y * 32 + s[i - 1].x], m[s[i].y * 32 + s[i].x]);
  }
}

// Brute-force oracle over every pixel of random maps.
TEST(Nms, MatchesExhaustiveWindowCheck) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = 12 + trial % 5, w = 15 - trial % 4;
    Tensor<double> m({h, w});
    for (auto& v : m.values()) v = std::round(rng.uniform() * 8) / 8;  // plenty of ties
    const auto cfg = config(trial % 2 ? 3 : 5, 0.1, 0.3, trial % 2 ? 1 : 2);
    const int r = cfg.radius(), edge = cfg.margin + r;
    std::vector<PixelPos> expect;
    for (int y = edge; y < h - edge; ++y)
      for (int x = edge; x < w - edge; ++x) {
        const double v = m[y * w + x];
        if (!(v > cfg.threshold)) continue;
        bool keep = true;
        for (int dy = -r; dy <= r && keep; ++dy)
          for (int dx = -r; dx <= r && keep; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            const double u = m[yy * w + xx];
            if (u > v) keep = false;
            if (u == v && (yy < y || (yy == y && xx < x))) keep = false;
          }
        if (keep) expect.push_back({x, y});
      }
    std::stable_sort(expect.begin(), expect.end(), [&](const PixelPos& a, const PixelPos& b) {
      return m[a.y * w + a.x] > m[b.y * w + b.x];
    });
    EXPECT_EQ(nms(m, cfg), expect) << "trial " << trial;
  }
}

TEST(Softargmax, SymmetricPatch) {
  const std::vector<double> p{0.2, 0.2, 0.2, 0.2, 0.9, 0.2, 0.2, 0.2, 0.2};
  const auto o = softargmax_offset<double>(p, 3, 0.1);
  EXPECT_NEAR(o[0], 0.0, 1e-15);
  EXPECT_NEAR(o[1], 0.0, 1e-15);
}

TEST(Softargmax, LeansTowardSecondaryScore) {
  const auto p = asymmetric_patch();
  const auto o = softargmax_offset<double>(p, 3, 0.1);
  EXPECT_NEAR(o[0], asymmetric_offset(0.1), 1e-12);
  EXPECT_NEAR(o[1], asymmetric_offset(0.1), 1e-12);
  EXPECT_NEAR(o[0], 0.0067, 1e-4);
}

TEST(Softargmax, SharpLimit) {
  const auto p = asymmetric_patch();
  const auto o = softargmax_offset<double>(p, 3, 1e-3);
  EXPECT_LT(std::abs(o[0]), 1e-9);
  EXPECT_LT(std::abs(o[1]), 1e-9);
}

TEST(Softargmax, OffsetsStayInsideWindow) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(25);
    for (auto& v : p) v = rng.uniform();
    const auto o = softargmax_offset<double>(p, 5, rng.uniform(0.01, 10.0));
    EXPECT_LE(std::abs(o[0]), 2.0);
    EXPECT_LE(std::abs(o[1]), 2.0);
  }
}

TEST(Softargmax, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto win = random_tensor(rng, {3, 25}, 0.0, 1.0);
    const auto w = random_tensor(rng, {3, 2});
    const auto err = gradient_error(
        [&](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ops::sum(ops::mul(softargmax_offsets(v[0], 5, 0.1), g.constant(w)));
        },
        {win});
    EXPECT_LT(err, 1e-6);
  }
}

TEST(DetectKeypoints, DeltaPeak) {
  Tensor<double> m({20, 20}, 0.0);
  m[8 * 20 + 11] = 0.8;
  const auto k = detect_keypoints(m, config(5));
  ASSERT_EQ(k.size(), 1u);
  EXPECT_NEAR(k[0].u, 11.0, 1e-12);
  EXPECT_NEAR(k[0].v, 8.0, 1e-12);
  EXPECT_NEAR(k[0].score, 0.8, 1e-12);
}

TEST(DetectKeypoints, EmbeddedAsymmetricPatch) {
  Tensor<double> m({21, 21}, 0.0);
  const auto p = asymmetric_patch();
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) m[(10 + dy) * 21 + 10 + dx] = p[(dy + 1) * 3 + dx + 1];
  const auto k = detect_keypoints(m, config(3));
  ASSERT_EQ(k.size(), 1u);
  EXPECT_NEAR(k[0].u, 10.0 + asymmetric_offset(0.1), 1e-12);
  EXPECT_NEAR(k[0].v, 10.0 + asymmetric_offset(0.1), 1e-12);
  EXPECT_NEAR(k[0].u, 10.0067, 1e-4);
}

TEST(DetectKeypoints, BackboneMapsRespectMarginAndOffsetBound) {
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(mix_seed(77, trial));
    Model<double> m(ModelConfig::preset("tiny"), mix_seed(78, trial));
    auto cfg = config(5, 0.1, 0.0, 2 + trial % 3);
    const auto out = m.infer(random_tensor(rng, {1, 3, 32, 32}, 0.0, 1.0));
    const auto seeds = nms(out.score_map, cfg);
    const auto kps = detect_keypoints(out.score_map, cfg);
    ASSERT_EQ(seeds.size(), kps.size());
    for (std::size_t i = 0; i < kps.size(); ++i) {
      EXPECT_GE(kps[i].u, cfg.margin);
      EXPECT_LE(kps[i].u, 31 - cfg.margin);
      EXPECT_GE(kps[i].v, cfg.margin);
      EXPECT_LE(kps[i].v, 31 - cfg.margin);
      EXPECT_LE(std::abs(kps[i].u - seeds[i].x), cfg.radius());
      EXPECT_LE(std::abs(kps[i].v - seeds[i].y), cfg.radius());
    }
  }
}

TEST(DetectGraph, ScoreIsBilinearSampleAtKeypoint) {
  Rng rng(8);
  const auto map = random_tensor(rng, {16, 16}, 0.0, 1.0);
  Graph<double> g;
  const auto cfg = config(3);
  const auto d = detect_graph(g.constant(map), nms(map, cfg), cfg);
  const auto& c = d.coords.value();
  for (std::size_t i = 0; i < d.seeds.size(); ++i) {
    const double x = c[2 * i], y = c[2 * i + 1];
    const int x0 = std::min(int(x), 14), y0 = std::min(int(y), 14);
    const double fx = x - x0, fy = y - y0;
    const double expect = (1 - fx) * (1 - fy) * map[y0 * 16 + x0] + fx * (1 - fy) * map[y0 * 16 + x0 + 1] +
                          (1 - fx) * fy * map[(y0 + 1) * 16 + x0] + fx * fy * map[(y0 + 1) * 16 + x0 + 1];
    EXPECT_NEAR(d.scores.value()[i], expect, 1e-12);
  }
}

TEST(DetectorConfig, Validation) {
  EXPECT_THROW(config(4).validate(), ConfigError);
  EXPECT_THROW(config(5, 0.0).validate(), ConfigError);
  EXPECT_THROW(config(5, 0.1, 0.2, 1).validate(), ConfigError);
  EXPECT_NO_THROW(config(5).validate());
}

TEST(SampleDescriptors, IntegerPositionReturnsStoredVector) {
  Rng rng(9);
  Tensor<double> map = random_tensor(rng, {4, 6, 7});
  Graph<double> g;
  auto norm = ops::reshape(ops::l2_normalize_channels(g.constant(Tensor<double>({1, 4, 6, 7}, map.to_vector()))),
                           {4, 6, 7});
  const auto d = sample_descriptors(norm, g.constant(Tensor<double>({1, 2}, {3.0, 2.0}))).value();
  for (int c = 0; c < 4; ++c) EXPECT_NEAR(d[c], norm.value()[c * 42 + 2 * 7 + 3], 1e-15);
}

TEST(SampleDescriptors, MidpointOfOrthogonalVectors) {
  Tensor<double> map({2, 1, 2});
  map[0] = 1.0;  // pixel 0 = e1
  map[3] = 1.0;  // pixel 1 = e2
  Graph<double> g;
  const auto d = sample_descriptors(g.constant(map), g.constant(Tensor<double>({1, 2}, {0.5, 0.0}))).value();
  EXPECT_NEAR(d[0], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(d[1], 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(SampleDescriptors, ConstantField) {
  Tensor<double> map({3, 5, 5});
  for (int p = 0; p < 25; ++p) {
    map[p] = 0.6;
    map[25 + p] = 0.0;
    map[50 + p] = 0.8;
  }
  Rng rng(10);
  Graph<double> g;
  Tensor<double> coords({10, 2});
  for (auto& v : coords.values()) v = rng.uniform(0.0, 4.0);
  const auto d = sample_descriptors(g.constant(map), g.constant(coords)).value();
  for (int k = 0; k < 10; ++k) {
    EXPECT_NEAR(d[k * 3], 0.6, 1e-15);
    EXPECT_NEAR(d[k * 3 + 2], 0.8, 1e-15);
  }
}

TEST(SampleDescriptors, OutsideThrows) {
  Graph<double> g;
  EXPECT_THROW(sample_descriptors(g.constant(Tensor<double>({2, 4, 4}, 1.0)),
                                  g.constant(Tensor<double>({1, 2}, {-0.5, 1.0}))),
               DomainError);
}

TEST(SampleDescriptors, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto map = random_tensor(rng, {4, 8, 8});
    Tensor<double> coords({5, 2});
    for (auto& v : coords.values()) v = rng.uniform(0.05, 6.95);
    const auto w = random_tensor(rng, {5, 4});
    const auto err = gradient_error(
        [&](Graph<double>& g, const std::vector<Var<double>>& v) {
          return ops::sum(ops::mul(sample_descriptors(v[0], v[1]), g.constant(w)));
        },
        {map, coords});
    EXPECT_LT(err, 1e-6);
  }
}

TEST(SimilarityMap, SelfAndOrthogonal) {
  Tensor<double> map({2, 2, 2});
  map[0] = 1.0;
  map[1] = 0.6;
  map[5] = 0.8;
  map[6] = 1.0;
  const std::vector<double> q{0.6, 0.8};
  const auto s = similarity_map<double>(q, map);
  EXPECT_NEAR(s.values[1], 1.0, 1e-15);
  Tensor<double> ortho({2, 3, 3});
  for (int p = 0; p < 9; ++p) ortho[p] = 1.0;
  const std::vector<double> e2{0.0, 1.0};
  const auto zero = similarity_map<double>(e2, ortho);
  for (double v : zero.values.values()) EXPECT_EQ(v, 0.0);
}

TEST(SimilarityMap, BoundedForUnitVectors) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    Graph<double> g;
    const auto raw = random_tensor(rng, {1, 16, 6, 6});
    const auto map = ops::reshape(ops::l2_normalize_channels(g.constant(raw)), {16, 6, 6}).value();
    std::vector<double> q(16);
    double n = 0.0;
    for (auto& v : q) {
      v = rng.uniform(-1, 1);
      n += v * v;
    }
    for (auto& v : q) v /= std::sqrt(n);
    const auto sim = similarity_map<double>(q, map);
    for (double v : sim.values.values()) {
      EXPECT_GE(v, -1.0 - 1e-5);
      EXPECT_LE(v, 1.0 + 1e-5);
    }
  }
}

TEST(DescriptorMatrix, RejectsUnequalLengths) {
  std::vector<Keypoint> k(2);
  k[0].descriptor = {1.0f, 0.0f};
  k[1].descriptor = {1.0f};
  EXPECT_THROW(descriptor_matrix(k), UsageError);
  EXPECT_EQ(descriptor_matrix({}).size(), 0u);
}
