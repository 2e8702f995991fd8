#include "alike/matching.hpp"
#include "alike/random.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace alike {

std::vector<Match> mutual_match(const Tensor<float>& desc_a, const Tensor<float>& desc_b) {
  if (desc_a.empty() || desc_b.empty()) return {};
  if (desc_a.rank() != 2 || desc_b.rank() != 2 || desc_a.dim(1) != desc_b.dim(1)) {
    throw UsageError("mutual_match: descriptor sets must be [K,dim] with equal dim, got " +
                     shape_string(desc_a.shape()) + " and " + shape_string(desc_b.shape()));
  }
  using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Index na = desc_a.dim(0), nb = desc_b.dim(0), d = desc_a.dim(1);
  Eigen::Map<const RowMajor> a(desc_a.data(), na, d);
  Eigen::Map<const RowMajor> b(desc_b.data(), nb, d);
  const Eigen::MatrixXd sim = a.cast<double>() * b.cast<double>().transpose();

  std::vector<Eigen::Index> best_b(static_cast<std::size_t>(na), 0);
  std::vector<Eigen::Index> best_a(static_cast<std::size_t>(nb), 0);
  for (Eigen::Index i = 0; i < na; ++i) {
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < nb; ++j) {
      if (sim(i, j) > sim(i, arg)) arg = j;
    }
    best_b[static_cast<std::size_t>(i)] = arg;
  }
  for (Eigen::Index j = 0; j < nb; ++j) {
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < na; ++i) {
      if (sim(i, j) > sim(arg, j)) arg = i;
    }
    best_a[static_cast<std::size_t>(j)] = arg;
  }
  std::vector<Match> out;
  for (Eigen::Index i = 0; i < na; ++i) {
    const auto j = best_b[static_cast<std::size_t>(i)];
    if (best_a[static_cast<std::size_t>(j)] == i) {
      out.push_back({static_cast<int>(i), static_cast<int>(j), sim(i, j)});
    }
  }
  return out;
}

MetricCounts compute_metrics(const std::vector<Point2>& kps_a, const std::vector<Point2>& kps_b,
                             const std::vector<Match>& matches, const WarpSpec& spec,
                             const std::array<double, 3>& thresholds, double gt_threshold) {
  std::vector<std::optional<Point2>> wa, wb;
  for (const auto& p : kps_a) wa.push_back(warp(p, spec, Direction::a_to_b));
  for (const auto& p : kps_b) wb.push_back(warp(p, spec, Direction::b_to_a));

  auto count_gt = [gt_threshold](const std::vector<std::optional<Point2>>& warped,
                                 const std::vector<Point2>& other, int& covisible) {
    int n = 0;
    for (const auto& p : warped) {
      if (!p) continue;
      ++covisible;
      for (const auto& q : other) {
        if (std::hypot(p->x - q.x, p->y - q.y) < gt_threshold) {
          ++n;
          break;
        }
      }
    }
    return n;
  };
  int cov_a = 0, cov_b = 0;
  const int gt_a = count_gt(wa, kps_b, cov_a);
  const int gt_b = count_gt(wb, kps_a, cov_b);

  MetricCounts m;
  m.n_cov = 0.5 * (cov_a + cov_b);
  m.n_gt = 0.5 * (gt_a + gt_b);
  m.n_putative = static_cast<int>(matches.size());
  for (const auto& mt : matches) {
    if (mt.index_a < 0 || mt.index_b < 0 || mt.index_a >= static_cast<int>(kps_a.size()) ||
        mt.index_b >= static_cast<int>(kps_b.size())) {
      throw UsageError("compute_metrics: match index out of range");
    }
    const auto& p = wa[static_cast<std::size_t>(mt.index_a)];
    if (!p || !wb[static_cast<std::size_t>(mt.index_b)]) continue;
    const auto& q = kps_b[static_cast<std::size_t>(mt.index_b)];
    const double d = std::hypot(p->x - q.x, p->y - q.y);
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      if (d <= thresholds[t]) ++m.n_inlier[t];
    }
  }
  if (m.n_cov > 0) {
    m.rep = m.n_gt / m.n_cov;
    m.ms = m.n_inlier.back() / m.n_cov;
  }
  if (m.n_putative > 0) {
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      m.mma[t] = double(m.n_inlier[t]) / m.n_putative;
    }
  }
  return m;
}

namespace {

// Similarity moving the centroid to the origin with mean distance sqrt(2).
std::optional<Eigen::Matrix3d> normalizer(const std::vector<Point2>& pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += Eigen::Vector2d(p.x, p.y);
  c /= double(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (Eigen::Vector2d(p.x, p.y) - c).norm();
  mean_dist /= double(pts.size());
  if (!(mean_dist > 1e-12)) return std::nullopt;
  const double s = std::sqrt(2.0) / mean_dist;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

double transfer_error(const Eigen::Matrix3d& h, Point2 p, Point2 q) {
  const Eigen::Vector3d w = h * Eigen::Vector3d(p.x, p.y, 1.0);
  if (std::abs(w.z()) < 1e-12) return std::numeric_limits<double>::infinity();
  return std::hypot(w.x() / w.z() - q.x, w.y() / w.z() - q.y);
}

bool collinear(Point2 a, Point2 b, Point2 c) {
  const double area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
  const double scale = std::max({std::hypot(b.x - a.x, b.y - a.y), std::hypot(c.x - a.x, c.y - a.y), 1e-12});
  return std::abs(area) <= 1e-9 * scale * scale;
}

bool degenerate_sample(const std::array<Point2, 4>& p) {
  for (int i = 0; i < 4; ++i) {
    if (collinear(p[(i + 1) % 4], p[(i + 2) % 4], p[(i + 3) % 4])) return true;
  }
  return false;
}

}  // namespace

std::optional<Eigen::Matrix3d> fit_homography(const std::vector<Point2>& src,
                                              const std::vector<Point2>& dst) {
  if (src.size() != dst.size() || src.size() < 4) return std::nullopt;
  const auto ts = normalizer(src);
  const auto td = normalizer(dst);
  if (!ts || !td) return std::nullopt;
  const auto n = static_cast<Eigen::Index>(src.size());
  Eigen::MatrixXd a(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d p = *ts * Eigen::Vector3d(src[static_cast<std::size_t>(i)].x, src[static_cast<std::size_t>(i)].y, 1.0);
    const Eigen::Vector3d q = *td * Eigen::Vector3d(dst[static_cast<std::size_t>(i)].x, dst[static_cast<std::size_t>(i)].y, 1.0);
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv.size() < 8 || !(sv(7) > 1e-10 * sv(0))) return std::nullopt;
  const Eigen::VectorXd hv = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
  Eigen::Matrix3d h = td->inverse() * hn * *ts;
  if (!h.allFinite() || std::abs(h.determinant()) < 1e-15 * std::pow(h.norm(), 3)) return std::nullopt;
  if (std::abs(h(2, 2)) > 1e-12) h /= h(2, 2);
  return h;
}

HomographyEstimate estimate_homography(const std::vector<Point2>& src, const std::vector<Point2>& dst,
                                       const RansacConfig& config) {
  HomographyEstimate best;
  const std::size_t n = src.size();
  best.inliers.assign(n, false);
  if (n != dst.size() || n < 4) return best;

  Rng rng(config.seed);
  auto pick = [&] { return static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(n) - 1)); };
  double best_cost = std::numeric_limits<double>::infinity();
  long long needed = config.max_iterations;
  int it = 0;
  for (; it < config.max_iterations && it < needed; ++it) {
    std::array<std::size_t, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      bool fresh;
      do {
        idx[static_cast<std::size_t>(k)] = pick();
        fresh = std::find(idx.begin(), idx.begin() + k, idx[static_cast<std::size_t>(k)]) == idx.begin() + k;
      } while (!fresh);
    }
    std::array<Point2, 4> ps, pd;
    for (int k = 0; k < 4; ++k) {
      ps[static_cast<std::size_t>(k)] = src[idx[static_cast<std::size_t>(k)]];
      pd[static_cast<std::size_t>(k)] = dst[idx[static_cast<std::size_t>(k)]];
    }
    if (degenerate_sample(ps) || degenerate_sample(pd)) continue;
    const auto h = fit_homography({ps.begin(), ps.end()}, {pd.begin(), pd.end()});
    if (!h) continue;

    int count = 0;
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = transfer_error(*h, src[i], dst[i]);
      if (e <= config.threshold) {
        ++count;
        cost += e;
      }
    }
    if (count > best.n_inliers || (count == best.n_inliers && count > 0 && cost < best_cost)) {
      best.n_inliers = count;
      best.h = *h;
      best_cost = cost;
      const double w = double(count) / double(n);
      const double fail = 1.0 - std::pow(w, 4);
      if (fail <= 0.0) {
        needed = 0;
      } else if (fail < 1.0) {
        needed = static_cast<long long>(std::ceil(std::log(1.0 - config.confidence) / std::log(fail)));
      }
    }
  }
  best.iterations = it;
  if (best.n_inliers < 4) {
    best.n_inliers = 0;
    return best;
  }

  auto mark = [&](const Eigen::Matrix3d& h) {
    int count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      best.inliers[i] = transfer_error(h, src[i], dst[i]) <= config.threshold;
      count += best.inliers[i] ? 1 : 0;
    }
    return count;
  };
  mark(best.h);
  std::vector<Point2> is, id;
  for (std::size_t i = 0; i < n; ++i) {
    if (best.inliers[i]) {
      is.push_back(src[i]);
      id.push_back(dst[i]);
    }
  }
  if (const auto refit = fit_homography(is, id)) {
    best.h = *refit;
  }
  best.n_inliers = mark(best.h);
  best.success = best.n_inliers >= 4;
  return best;
}

double mean_corner_error(const Eigen::Matrix3d& h_est, const Eigen::Matrix3d& h_gt,
                         std::int64_t width, std::int64_t height) {
  const double w = double(width - 1), h = double(height - 1);
  const Point2 corners[] = {{0, 0}, {w, 0}, {0, h}, {w, h}};
  double sum = 0.0;
  for (const auto& c : corners) {
    const auto a = apply_homography(h_est, c);
    const auto b = apply_homography(h_gt, c);
    if (!a || !b) return std::numeric_limits<double>::infinity();
    sum += std::hypot(a->x - b->x, a->y - b->y);
  }
  return sum / 4.0;
}

bool homography_accuracy(const Eigen::Matrix3d& h_est, const Eigen::Matrix3d& h_gt,
                         std::int64_t width, std::int64_t height, double theta) {
  return mean_corner_error(h_est, h_gt, width, height) <= theta;
}

}  // namespace alike
