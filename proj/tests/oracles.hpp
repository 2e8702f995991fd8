#pragma once

// Brute-force reference implementations and randomised instances shared by
// the unit tests and the acceptance harness.

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "alike/geometry.hpp"
#include "alike/matching.hpp"
#include "alike/tensor.hpp"
#include "alike/random.hpp"

namespace alike::testing {

// Full cross-entropy over all H*W+1 bins with dense q_r and a softmax
// computed independently of the library.
inline double dense_nre(const Tensor<double>& sim, const std::vector<ReprojectionProbability>& q, double t,
                 double outlier) {
  const auto k = sim.dim(0), m = sim.dim(1);
  double total = 0.0;
  for (std::int64_t r = 0; r < k; ++r) {
    std::vector<double> logits(static_cast<std::size_t>(m + 1));
    for (std::int64_t j = 0; j < m; ++j) logits[j] = (sim[r * m + j] - 1.0) / t;
    logits[m] = (outlier - 1.0) / t;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    std::vector<double> target(static_cast<std::size_t>(m + 1), 0.0);
    for (int c = 0; c < 4; ++c) target[q[r].bins[c]] += q[r].weights[c];
    for (std::int64_t j = 0; j <= m; ++j) {
      if (target[j] != 0.0) total -= target[j] * (logits[j] - mx - std::log(z));
    }
  }
  return total;
}


inline std::vector<Match> brute_force_mutual(const Tensor<float>& a, const Tensor<float>& b) {
  const auto na = a.empty() ? 0 : a.dim(0), nb = b.empty() ? 0 : b.dim(0);
  const auto d = na ? a.dim(1) : 0;
  auto sim = [&](std::int64_t i, std::int64_t j) {
    double s = 0.0;
    for (std::int64_t c = 0; c < d; ++c) s += double(a[i * d + c]) * double(b[j * d + c]);
    return s;
  };
  std::vector<Match> out;
  for (std::int64_t i = 0; i < na; ++i) {
    std::int64_t best_j = -1;
    for (std::int64_t j = 0; j < nb; ++j) {
      if (best_j < 0 || sim(i, j) > sim(i, best_j)) best_j = j;
    }
    if (best_j < 0) continue;
    std::int64_t best_i = 0;
    for (std::int64_t k = 1; k < na; ++k) {
      if (sim(k, best_j) > sim(best_i, best_j)) best_i = k;
    }
    if (best_i == i) out.push_back({int(i), int(best_j), sim(i, best_j)});
  }
  return out;
}

struct MetricInstance {
  Eigen::Matrix3d h;
  std::int64_t width = 0, height = 0;
  std::vector<Point2> a, b;
  std::vector<Match> matches;
};

inline MetricInstance random_metric_instance(Rng& rng) {
  MetricInstance m;
  m.width = 40 + rng.integer(0, 24);
  m.height = 30 + rng.integer(0, 24);
  m.h << 1.0 + rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-6, 6), rng.uniform(-0.1, 0.1),
      1.0 + rng.uniform(-0.1, 0.1), rng.uniform(-6, 6), rng.uniform(-1e-3, 1e-3), rng.uniform(-1e-3, 1e-3), 1.0;
  const int na = int(rng.integer(0, 10)), nb = int(rng.integer(0, 10));
  for (int i = 0; i < na; ++i) m.a.push_back({rng.uniform(0, m.width - 1.0), rng.uniform(0, m.height - 1.0)});
  for (int j = 0; j < nb; ++j) {
    // half of B lies near a warped keypoint of A so that distances straddle the thresholds
    if (j < na && rng.uniform() < 0.5) {
      const Eigen::Vector3d q = m.h * Eigen::Vector3d(m.a[j].x, m.a[j].y, 1.0);
      m.b.push_back({q.x() / q.z() + rng.uniform(-4, 4), q.y() / q.z() + rng.uniform(-4, 4)});
      m.b.back().x = std::clamp(m.b.back().x, 0.0, m.width - 1.0);
      m.b.back().y = std::clamp(m.b.back().y, 0.0, m.height - 1.0);
    } else {
      m.b.push_back({rng.uniform(0, m.width - 1.0), rng.uniform(0, m.height - 1.0)});
    }
  }
  std::vector<int> perm(static_cast<std::size_t>(nb));
  for (int j = 0; j < nb; ++j) perm[j] = j;
  for (int j = nb - 1; j > 0; --j) std::swap(perm[j], perm[rng.integer(0, j)]);
  for (int i = 0; i < std::min(na, nb); ++i) {
    if (rng.uniform() < 0.8) m.matches.push_back({i, perm[i], 0.0});
  }
  return m;
}

/// Rep/MS/MMA counts recomputed directly from the homography.
inline MetricCounts brute_force_metrics(const MetricInstance& m, const std::array<double, 3>& thresholds,
                                        double gt_threshold) {
  auto project = [&](const Eigen::Matrix3d& h, Point2 p) -> std::optional<Point2> {
    const Eigen::Vector3d q = h * Eigen::Vector3d(p.x, p.y, 1.0);
    if (std::abs(q.z()) < 1e-12) return std::nullopt;
    const Point2 r{q.x() / q.z(), q.y() / q.z()};
    if (r.x < 0 || r.y < 0 || r.x > m.width - 1.0 || r.y > m.height - 1.0) return std::nullopt;
    return r;
  };
  const Eigen::Matrix3d hinv = m.h.inverse();
  MetricCounts c;
  double cov_a = 0, cov_b = 0, gt_a = 0, gt_b = 0;
  for (const auto& p : m.a) {
    const auto q = project(m.h, p);
    if (!q) continue;
    ++cov_a;
    bool hit = false;
    for (const auto& o : m.b) hit = hit || std::hypot(q->x - o.x, q->y - o.y) < gt_threshold;
    gt_a += hit;
  }
  for (const auto& p : m.b) {
    const auto q = project(hinv, p);
    if (!q) continue;
    ++cov_b;
    bool hit = false;
    for (const auto& o : m.a) hit = hit || std::hypot(q->x - o.x, q->y - o.y) < gt_threshold;
    gt_b += hit;
  }
  c.n_cov = (cov_a + cov_b) / 2;
  c.n_gt = (gt_a + gt_b) / 2;
  c.n_putative = int(m.matches.size());
  for (const auto& mt : m.matches) {
    const auto q = project(m.h, m.a[mt.index_a]);
    if (!q || !project(hinv, m.b[mt.index_b])) continue;
    const double d = std::hypot(q->x - m.b[mt.index_b].x, q->y - m.b[mt.index_b].y);
    for (int t = 0; t < 3; ++t) c.n_inlier[t] += d <= thresholds[t];
  }
  if (c.n_cov > 0) {
    c.rep = c.n_gt / c.n_cov;
    c.ms = c.n_inlier[2] / c.n_cov;
  }
  if (c.n_putative > 0) {
    for (int t = 0; t < 3; ++t) c.mma[t] = double(c.n_inlier[t]) / c.n_putative;
  }
  return c;
}

inline bool same_counts(const MetricCounts& x, const MetricCounts& y) {
  return x.n_cov == y.n_cov && x.n_gt == y.n_gt && x.n_putative == y.n_putative && x.n_inlier == y.n_inlier &&
         x.rep == y.rep && x.ms == y.ms && x.mma == y.mma;
}

/// Corner error of RANSAC on 70% exact inliers with 0.5 px noise and 30%
/// uniform outliers under a random homography of a 640x480 image.
inline double ransac_trial(std::uint64_t seed, int n = 200) {
  Rng rng(seed);
  const double w = 640, h = 480;
  Eigen::Matrix3d hg;
  hg << 1.0 + rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-40, 40), rng.uniform(-0.2, 0.2),
      1.0 + rng.uniform(-0.2, 0.2), rng.uniform(-40, 40), rng.uniform(-3e-4, 3e-4), rng.uniform(-3e-4, 3e-4), 1.0;
  std::vector<Point2> src, dst;
  for (int i = 0; i < n; ++i) {
    const Point2 p{rng.uniform(0, w - 1), rng.uniform(0, h - 1)};
    src.push_back(p);
    if (i < n * 7 / 10) {
      const Eigen::Vector3d q = hg * Eigen::Vector3d(p.x, p.y, 1.0);
      dst.push_back({q.x() / q.z() + 0.5 * rng.normal(), q.y() / q.z() + 0.5 * rng.normal()});
    } else {
      dst.push_back({rng.uniform(0, w - 1), rng.uniform(0, h - 1)});
    }
  }
  RansacConfig cfg;
  cfg.max_iterations = 1000;
  cfg.seed = seed;
  const auto est = estimate_homography(src, dst, cfg);
  if (!est.success) return std::numeric_limits<double>::infinity();
  return mean_corner_error(est.h, hg, 640, 480);
}

}  // namespace alike::testing
