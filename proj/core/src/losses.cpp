#include "alike/losses.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "alike/ops.hpp"

namespace alike {

void LossConfig::validate() const {
  for (double w : {w_rp, w_pk, w_rl, w_de}) {
    if (!(w >= 0.0)) throw ConfigError("loss weights must be nonnegative");
  }
  if (!(t_rel > 0.0) || !(t_des > 0.0)) throw ConfigError("loss temperatures must be positive");
  if (!(th_gt > 0.0)) throw ConfigError("th_gt must be positive");
  if (!(norm_p >= 1.0)) throw ConfigError("norm_p must be >= 1");
  if (!(triplet_margin >= 0.0)) throw ConfigError("triplet margin must be nonnegative");
}

std::vector<std::string> LossReport::warnings() const {
  std::vector<std::string> w;
  if (rp_empty) w.emplace_back("no correspondences in at least one direction; reprojection term set to 0");
  if (pk_empty) w.emplace_back("no covisible keypoints in at least one image; peak term set to 0");
  if (rl_empty) w.emplace_back("no valid keypoints in at least one direction; reliability term set to 0");
  return w;
}

LossReport total_loss(double rp, double pk, double rl, double de, const LossConfig& config) {
  LossReport r;
  r.rp = rp;
  r.pk = pk;
  r.rl = rl;
  r.de = de;
  r.total = config.w_rp * rp + config.w_pk * pk + config.w_rl * rl + config.w_de * de;
  return r;
}

namespace {

template <typename T>
Var<T> zero(Graph<T>& g) {
  return g.constant(Tensor<T>({1}));
}

template <typename T>
Var<T> half_sum(Var<T> a, Var<T> b) {
  return ops::mul_scalar(ops::add(a, b), T(0.5));
}

std::vector<std::int64_t> true_rows(const std::vector<bool>& mask, std::size_t limit) {
  std::vector<std::int64_t> rows;
  for (std::size_t i = 0; i < std::min(limit, mask.size()); ++i) {
    if (mask[i]) rows.push_back(static_cast<std::int64_t>(i));
  }
  return rows;
}

// Row-wise log-sum-exp of the logits (C-1)/t_des with the outlier bin appended.
template <typename T>
void matching_softmax(const T* sim, std::int64_t k, std::int64_t m, double t_des, double outlier,
                      T* probs_out, double* lse_out) {
  using Row = Eigen::Array<T, Eigen::Dynamic, 1>;
  const T inv_t = T(1.0 / t_des);
  const double l_out = (outlier - 1.0) / t_des;
  for (std::int64_t r = 0; r < k; ++r) {
    Eigen::Map<const Row> s(sim + r * m, m);
    Eigen::Index arg = 0;
    const double l_max = std::max(double((s.maxCoeff(&arg) - T(1)) * inv_t), l_out);
    Row e = ((s - T(1)) * inv_t - T(l_max)).exp();
    // z = 1 + rest with the leading term split off, so log1p keeps tiny tails
    double rest = double(e.sum()) + std::exp(l_out - l_max) - 1.0;
    if (l_max > l_out) {
      const T lead = e(arg);
      e(arg) = T(0);
      rest = double(e.sum()) + std::exp(l_out - l_max) + (double(lead) - 1.0);
      e(arg) = lead;
    } else {
      rest = double(e.sum());
    }
    const double z = 1.0 + rest;
    lse_out[r] = l_max + std::log1p(rest);
    if (probs_out) {
      Eigen::Map<Row> p(probs_out + r * (m + 1), m);
      p = e * T(1.0 / z);
      probs_out[r * (m + 1) + m] = T(std::exp(l_out - l_max) / z);
    }
  }
}

}  // namespace

template <typename T>
Var<T> total_loss(Var<T> rp, Var<T> pk, Var<T> rl, Var<T> de, const LossConfig& config) {
  Var<T> t = ops::mul_scalar(rp, T(config.w_rp));
  t = ops::add(t, ops::mul_scalar(pk, T(config.w_pk)));
  t = ops::add(t, ops::mul_scalar(rl, T(config.w_rl)));
  return ops::add(t, ops::mul_scalar(de, T(config.w_de)));
}

template <typename T>
Var<T> reprojection_loss(Var<T> coords_a, Var<T> coords_b, const std::vector<Correspondence>& ab,
                         const std::vector<Correspondence>& ba, const WarpSpec& spec,
                         const LossConfig& config, bool* empty) {
  Graph<T>& g = *coords_a.graph;
  bool any_empty = false;
  auto direction = [&](Var<T> src, Var<T> dst, const std::vector<Correspondence>& corr,
                       Direction d) -> Var<T> {
    if (corr.empty()) {
      any_empty = true;
      return zero(g);
    }
    std::vector<std::int64_t> rows_src, rows_dst;
    for (const auto& c : corr) {
      rows_src.push_back(c.index_a);
      rows_dst.push_back(c.index_b);
    }
    std::vector<bool> valid;
    Var<T> warped = warp_points(ops::gather_rows(src, rows_src), spec, d, valid);
    Var<T> dist = ops::lp_norm_rows(ops::sub(warped, ops::gather_rows(dst, rows_dst)), config.norm_p);
    return ops::mean(dist);
  };
  Var<T> l_ab = direction(coords_a, coords_b, ab, Direction::a_to_b);
  Var<T> l_ba = direction(coords_b, coords_a, ba, Direction::b_to_a);
  if (empty) *empty = any_empty;
  return half_sum(l_ab, l_ba);
}

template <typename T>
Var<T> dispersity_peak_loss(Var<T> probs, Var<T> offsets, int window, double norm_p) {
  Graph<T>& g = *probs.graph;
  const auto k = probs.dim(0);
  if (k == 0) return zero(g);
  Var<T> d = ops::window_distance(offsets, window, norm_p);
  Var<T> per_kp = ops::sum_rows(ops::mul(d, probs));
  return ops::mul_scalar(ops::mean(per_kp), T(1.0 / (double(window) * window)));
}

template <typename T>
Tensor<T> matching_probability(const Tensor<T>& similarity, double t_des, double outlier_similarity) {
  if (similarity.rank() != 2) throw ConfigError("matching_probability: similarity must be [K,H*W]");
  const auto k = similarity.dim(0), m = similarity.dim(1);
  Tensor<T> q({k, m + 1});
  std::vector<double> lse(static_cast<std::size_t>(k));
  matching_softmax(similarity.data(), k, m, t_des, outlier_similarity, q.data(), lse.data());
  return q;
}

template <typename T>
Var<T> nre_sum(Var<T> similarity, const std::vector<ReprojectionProbability>& targets, double t_des,
               double outlier_similarity) {
  Graph<T>& g = *similarity.graph;
  const Tensor<T>& sv = similarity.value();
  if (sv.rank() != 2) throw ConfigError("nre: similarity must be [K,H*W]");
  const auto k = sv.dim(0), m = sv.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != k) {
    throw ConfigError("nre: one reprojection distribution per row is required");
  }
  Tensor<T> probs({k, m + 1});
  std::vector<double> lse(static_cast<std::size_t>(k));
  matching_softmax(sv.data(), k, m, t_des, outlier_similarity, probs.data(), lse.data());

  const double l_out = (outlier_similarity - 1.0) / t_des;
  double total = 0.0;
  for (std::int64_t r = 0; r < k; ++r) {
    const auto& q = targets[static_cast<std::size_t>(r)];
    for (int c = 0; c < 4; ++c) {
      if (q.weights[c] == 0.0) continue;
      const double logit =
          q.bins[c] == m ? l_out : (double(sv[r * m + q.bins[c]]) - 1.0) / t_des;
      total -= q.weights[c] * (logit - lse[static_cast<std::size_t>(r)]);
    }
  }
  return g.record(Tensor<T>({1}, T(total)), {similarity},
                  [similarity, targets, t_des, k, m, probs = std::move(probs)](
                      Graph<T>& g, const Tensor<T>& gy) {
                    Tensor<T>& gs = g.grad_buffer(similarity);
                    const T scale = T(double(gy[0]) / t_des);
                    for (std::int64_t r = 0; r < k; ++r) {
                      const T* p = probs.data() + r * (m + 1);
                      T* dst = gs.data() + r * m;
                      for (std::int64_t j = 0; j < m; ++j) dst[j] += scale * p[j];
                      const auto& q = targets[static_cast<std::size_t>(r)];
                      for (int c = 0; c < 4; ++c) {
                        if (q.bins[c] < m) dst[q.bins[c]] -= scale * T(q.weights[c]);
                      }
                    }
                  });
}

template <typename T>
Var<T> nre_descriptor_loss(Var<T> desc_a, Var<T> desc_b, Var<T> map_a, Var<T> map_b,
                           const std::vector<ReprojectionProbability>& q_ab,
                           const std::vector<ReprojectionProbability>& q_ba,
                           const LossConfig& config) {
  Graph<T>& g = *desc_a.graph;
  const auto n = desc_a.dim(0) + desc_b.dim(0);
  if (n == 0) return zero(g);
  auto direction = [&](Var<T> desc, Var<T> map, const std::vector<ReprojectionProbability>& q) {
    const Shape& s = map.shape();
    Var<T> flat = ops::reshape(map, {s[0], s[1] * s[2]});
    Var<T> sim = ops::matmul(desc, flat);
    return nre_sum(sim, q, config.t_des, config.outlier_similarity);
  };
  Var<T> sum = ops::add(direction(desc_a, map_b, q_ab), direction(desc_b, map_a, q_ba));
  return ops::mul_scalar(sum, T(1.0 / double(n)));
}

template <typename T>
Var<T> reliability_term(Var<T> similarity, Var<T> p_ab, const std::vector<bool>& valid,
                        Var<T> scores, Var<T> target_scores, double t_rel, bool* empty) {
  Graph<T>& g = *similarity.graph;
  const auto rows = true_rows(valid, valid.size());
  if (empty) *empty = rows.empty();
  if (rows.empty()) return zero(g);
  const auto h = target_scores.dim(0), w = target_scores.dim(1);

  Var<T> p = ops::gather_rows(p_ab, rows);
  const Tensor<T>& pv = p.value();
  std::vector<std::array<double, 2>> fixed(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) fixed[i] = {double(pv[i * 2]), double(pv[i * 2 + 1])};

  Var<T> corners = ops::gather_corners(ops::gather_rows(similarity, rows), fixed, h, w);
  Var<T> c_tilde = ops::exp(ops::add_scalar(ops::mul_scalar(corners, T(1.0 / t_rel)), T(-1.0 / t_rel)));
  Var<T> r = ops::sum_rows(ops::mul(ops::bilinear_weights(p, h, w), c_tilde));

  const auto m = static_cast<std::int64_t>(rows.size());
  Var<T> s_ab = ops::reshape(ops::bilinear_sample(ops::reshape(target_scores, {1, h, w}), p), {m});
  Var<T> weight = ops::mul(ops::gather_rows(scores, rows), s_ab);
  weight = ops::divide(weight, ops::sum(weight));
  Var<T> miss = ops::add_scalar(ops::mul_scalar(r, T(-1)), T(1));
  return ops::sum(ops::mul(weight, miss));
}

template <typename T>
Var<T> triplet_loss(Var<T> a, Var<T> b, double margin) {
  Graph<T>& g = *a.graph;
  const auto k = a.dim(0), d = a.dim(1);
  if (k < 2) return zero(g);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  std::vector<std::int64_t> hardest(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < k; ++j) {
      if (j == i) continue;
      double s = 0.0;
      for (std::int64_t c = 0; c < d; ++c) s += double(av[i * d + c]) * double(bv[j * d + c]);
      if (s > best) {
        best = s;
        hardest[static_cast<std::size_t>(i)] = j;
      }
    }
  }
  // unit vectors: |x - y| = sqrt(2 - 2 x.y)
  auto dist = [](Var<T> dot) {
    return ops::sqrt(ops::add_scalar(ops::mul_scalar(dot, T(-2)), T(2 + 1e-12)));
  };
  Var<T> pos = dist(ops::row_dot(a, b));
  Var<T> neg = dist(ops::row_dot(a, ops::gather_rows(b, hardest)));
  return ops::mean(ops::relu(ops::add_scalar(ops::sub(pos, neg), T(margin))));
}

template <typename T>
PairLoss<T> pair_loss(const ModelVars<T>& a, const ModelVars<T>& b, const TrainingKeypoints& kps_a,
                      const TrainingKeypoints& kps_b, const WarpSpec& spec,
                      const DetectorConfig& detector, const LossConfig& config) {
  config.validate();
  Graph<T>& g = *a.score_map.graph;

  struct Side {
    DetectionVars<T> det;
    Var<T> coords;  // detected then random, [K,2]
    Var<T> scores;  // [K]
    Var<T> desc;    // [K,dim]
    Var<T> warped;  // [K,2]
    std::vector<bool> valid;
    std::vector<Point2> detected;
  };
  auto build = [&](const ModelVars<T>& out, const TrainingKeypoints& kps, Direction d) {
    Side s;
    s.det = detect_graph(out.score_map, kps.seeds, detector);
    const auto h = out.score_map.dim(0), w = out.score_map.dim(1);
    const auto nr = static_cast<std::int64_t>(kps.random.size());
    Tensor<T> rc({nr, 2});
    for (std::int64_t i = 0; i < nr; ++i) {
      rc[static_cast<std::size_t>(i * 2)] = T(kps.random[static_cast<std::size_t>(i)].x);
      rc[static_cast<std::size_t>(i * 2 + 1)] = T(kps.random[static_cast<std::size_t>(i)].y);
    }
    Var<T> random = g.constant(std::move(rc));
    Var<T> random_scores = ops::bilinear_sample(ops::reshape(out.score_map, {1, h, w}), random);
    const auto nd = static_cast<std::int64_t>(kps.seeds.size());
    s.coords = ops::concat_rows<T>({s.det.coords, random});
    s.scores = ops::reshape(
        ops::concat_rows<T>({ops::reshape(s.det.scores, {nd, 1}), random_scores}), {nd + nr});
    s.desc = sample_descriptors(out.descriptor_map, s.coords);
    s.warped = warp_points(s.coords, spec, d, s.valid);
    const Tensor<T>& c = s.det.coords.value();
    for (std::int64_t i = 0; i < nd; ++i) {
      s.detected.push_back({double(c[static_cast<std::size_t>(i * 2)]),
                            double(c[static_cast<std::size_t>(i * 2 + 1)])});
    }
    return s;
  };
  Side sa = build(a, kps_a, Direction::a_to_b);
  Side sb = build(b, kps_b, Direction::b_to_a);

  PairLoss<T> out;
  LossReport& rep = out.report;

  const auto corr_ab = assign_correspondences(sa.detected, sb.detected, spec, Direction::a_to_b, config.th_gt);
  const auto corr_ba = assign_correspondences(sb.detected, sa.detected, spec, Direction::b_to_a, config.th_gt);
  rep.matched_ab = static_cast<int>(corr_ab.size());
  rep.matched_ba = static_cast<int>(corr_ba.size());
  Var<T> rp = reprojection_loss(sa.det.coords, sb.det.coords, corr_ab, corr_ba, spec, config, &rep.rp_empty);

  auto peak = [&](const Side& s) {
    const auto rows = true_rows(s.valid, s.detected.size());
    if (rows.empty()) rep.pk_empty = true;
    return dispersity_peak_loss(ops::gather_rows(s.det.probs, rows),
                                ops::gather_rows(s.det.offsets, rows), detector.window,
                                config.norm_p);
  };
  Var<T> pk = half_sum(peak(sa), peak(sb));

  auto similarity = [&](const Side& s, const ModelVars<T>& target) {
    const Shape& m = target.descriptor_map.shape();
    return ops::matmul(s.desc, ops::reshape(target.descriptor_map, {m[0], m[1] * m[2]}));
  };
  Var<T> sim_ab = similarity(sa, b);
  Var<T> sim_ba = similarity(sb, a);

  Var<T> de;
  if (config.descriptor_loss == DescriptorLoss::nre) {
    auto targets = [&](const Side& s, const ModelVars<T>& target) {
      const auto h = target.score_map.dim(0), w = target.score_map.dim(1);
      const Tensor<T>& wv = s.warped.value();
      std::vector<ReprojectionProbability> q;
      for (std::size_t i = 0; i < s.valid.size(); ++i) {
        std::optional<Point2> p;
        if (s.valid[i]) p = Point2{double(wv[i * 2]), double(wv[i * 2 + 1])};
        q.push_back(reprojection_probability(p, h, w));
      }
      return q;
    };
    const auto n = sa.desc.dim(0) + sb.desc.dim(0);
    Var<T> sum = ops::add(nre_sum(sim_ab, targets(sa, b), config.t_des, config.outlier_similarity),
                          nre_sum(sim_ba, targets(sb, a), config.t_des, config.outlier_similarity));
    de = n > 0 ? ops::mul_scalar(sum, T(1.0 / double(n))) : zero(g);
  } else {
    std::vector<std::int64_t> ia, ib;
    for (const auto& c : corr_ab) {
      ia.push_back(c.index_a);
      ib.push_back(c.index_b);
    }
    de = triplet_loss(ops::gather_rows(sa.desc, ia), ops::gather_rows(sb.desc, ib), config.triplet_margin);
  }

  bool empty_ab = false, empty_ba = false;
  Var<T> rl = half_sum(
      reliability_term(sim_ab, sa.warped, sa.valid, sa.scores, b.score_map, config.t_rel, &empty_ab),
      reliability_term(sim_ba, sb.warped, sb.valid, sb.scores, a.score_map, config.t_rel, &empty_ba));
  rep.rl_empty = empty_ab || empty_ba;

  out.total = total_loss(rp, pk, rl, de, config);
  const LossReport values =
      total_loss(double(rp.value()[0]), double(pk.value()[0]), double(rl.value()[0]),
                 double(de.value()[0]), config);
  rep.rp = values.rp;
  rep.pk = values.pk;
  rep.rl = values.rl;
  rep.de = values.de;
  rep.total = double(out.total.value()[0]);
  return out;
}

#define ALIKE_INSTANTIATE_LOSSES(T)                                                              \
  template Var<T> total_loss(Var<T>, Var<T>, Var<T>, Var<T>, const LossConfig&);                 \
  template Var<T> reprojection_loss(Var<T>, Var<T>, const std::vector<Correspondence>&,          \
                                    const std::vector<Correspondence>&, const WarpSpec&,         \
                                    const LossConfig&, bool*);                                   \
  template Var<T> dispersity_peak_loss(Var<T>, Var<T>, int, double);                            \
  template Tensor<T> matching_probability(const Tensor<T>&, double, double);                    \
  template Var<T> nre_sum(Var<T>, const std::vector<ReprojectionProbability>&, double, double); \
  template Var<T> nre_descriptor_loss(Var<T>, Var<T>, Var<T>, Var<T>,                            \
                                      const std::vector<ReprojectionProbability>&,               \
                                      const std::vector<ReprojectionProbability>&,               \
                                      const LossConfig&);                                        \
  template Var<T> reliability_term(Var<T>, Var<T>, const std::vector<bool>&, Var<T>, Var<T>,     \
                                   double, bool*);                                               \
  template Var<T> triplet_loss(Var<T>, Var<T>, double);                                          \
  template PairLoss<T> pair_loss(const ModelVars<T>&, const ModelVars<T>&,                       \
                                 const TrainingKeypoints&, const TrainingKeypoints&,             \
                                 const WarpSpec&, const DetectorConfig&, const LossConfig&);

ALIKE_INSTANTIATE_LOSSES(float)
ALIKE_INSTANTIATE_LOSSES(double)

}  // namespace alike
