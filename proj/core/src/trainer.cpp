#include "alike/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "alike/synthetic.hpp"
#include "alike/text_io.hpp"

namespace alike {

namespace {

template <typename V>
V parse_number(const std::string& key, const std::string& text) {
  V v{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': invalid value '" + text + "'");
  }
  return v;
}

}  // namespace

void TrainConfig::validate() const {
  ModelConfig::preset(model);
  check_input_size(image_size, image_size);
  if (steps < 0) throw ConfigError("steps must be nonnegative");
  if (!(lr_peak > 0.0)) throw ConfigError("lr_peak must be positive");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be nonnegative");
  if (accumulation < 1) throw ConfigError("accumulation must be at least 1");
  if (top_k_train < 0 || n_random < 0) throw ConfigError("keypoint budgets must be nonnegative");
  if (checkpoint_every < 1 || keep_checkpoints < 1) {
    throw ConfigError("checkpoint_every and keep_checkpoints must be at least 1");
  }
  detector.validate();
  loss.validate();
}

void TrainConfig::apply(const std::vector<std::pair<std::string, std::string>>& entries) {
  for (const auto& [key, value] : entries) {
    if (key == "model") model = value;
    else if (key == "image_size") image_size = parse_number<int>(key, value);
    else if (key == "steps") steps = parse_number<int>(key, value);
    else if (key == "lr_peak") lr_peak = parse_number<double>(key, value);
    else if (key == "warmup_steps") warmup_steps = parse_number<int>(key, value);
    else if (key == "accumulation") accumulation = parse_number<int>(key, value);
    else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
    else if (key == "top_k_train") top_k_train = parse_number<int>(key, value);
    else if (key == "n_random") n_random = parse_number<int>(key, value);
    else if (key == "checkpoint_every") checkpoint_every = parse_number<int>(key, value);
    else if (key == "keep_checkpoints") keep_checkpoints = parse_number<int>(key, value);
    else if (key == "window") detector.window = parse_number<int>(key, value);
    else if (key == "t_det") detector.t_det = parse_number<double>(key, value);
    else if (key == "threshold") detector.threshold = parse_number<double>(key, value);
    else if (key == "margin") detector.margin = parse_number<int>(key, value);
    else if (key == "w_rp") loss.w_rp = parse_number<double>(key, value);
    else if (key == "w_pk") loss.w_pk = parse_number<double>(key, value);
    else if (key == "w_rl") loss.w_rl = parse_number<double>(key, value);
    else if (key == "w_de") loss.w_de = parse_number<double>(key, value);
    else if (key == "t_rel") loss.t_rel = parse_number<double>(key, value);
    else if (key == "t_des") loss.t_des = parse_number<double>(key, value);
    else if (key == "th_gt") loss.th_gt = parse_number<double>(key, value);
    else if (key == "norm_p") loss.norm_p = parse_number<double>(key, value);
    else if (key == "outlier_similarity") loss.outlier_similarity = parse_number<double>(key, value);
    else if (key == "triplet_margin") loss.triplet_margin = parse_number<double>(key, value);
    else if (key == "descriptor_loss") {
      if (value == "nre") loss.descriptor_loss = DescriptorLoss::nre;
      else if (value == "triplet") loss.descriptor_loss = DescriptorLoss::triplet;
      else throw ConfigError("config key 'descriptor_loss': expected 'nre' or 'triplet'");
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  validate();
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  TrainConfig c;
  c.apply(read_key_values(path));
  return c;
}

double learning_rate(const TrainConfig& config, int step) {
  if (config.warmup_steps == 0) return config.lr_peak;
  return config.lr_peak * std::min(double(step) / config.warmup_steps, 1.0);
}

template <typename T>
SampledKeypoints sample_training_keypoints(const Tensor<T>& score_map, const DetectorConfig& detector,
                                           int top_k, int n_random, Rng& rng) {
  DetectorConfig d = detector;
  SampledKeypoints out;
  if (top_k > 0) {
    d.top_k = top_k;
    out.keypoints.seeds = nms(score_map, d);
  }
  const int h = static_cast<int>(score_map.dim(0)), w = static_cast<int>(score_map.dim(1));
  const int lo = detector.margin, hi_x = w - 1 - detector.margin, hi_y = h - 1 - detector.margin;
  if (n_random <= 0 || hi_x < lo || hi_y < lo) {
    out.short_of_random = n_random > 0;
    return out;
  }
  // free[y*w+x]: candidate not blocked by a seed or already taken
  std::vector<char> blocked(static_cast<std::size_t>(w) * h, 0);
  const int n = detector.window;
  for (const auto& s : out.keypoints.seeds) {
    for (int y = std::max(0, s.y - n + 1); y <= std::min(h - 1, s.y + n - 1); ++y)
      for (int x = std::max(0, s.x - n + 1); x <= std::min(w - 1, s.x + n - 1); ++x)
        blocked[static_cast<std::size_t>(y) * w + x] = 1;
  }
  std::vector<PixelPos> candidates;
  for (int y = lo; y <= hi_y; ++y)
    for (int x = lo; x <= hi_x; ++x)
      if (!blocked[static_cast<std::size_t>(y) * w + x]) candidates.push_back({x, y});
  // partial Fisher-Yates draws distinct positions uniformly
  const std::size_t take = std::min(candidates.size(), static_cast<std::size_t>(n_random));
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(i),
                                                        static_cast<std::int64_t>(candidates.size()) - 1));
    std::swap(candidates[i], candidates[j]);
  }
  out.keypoints.random.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take));
  out.short_of_random = take < static_cast<std::size_t>(n_random);
  return out;
}

template SampledKeypoints sample_training_keypoints(const Tensor<float>&, const DetectorConfig&, int, int, Rng&);
template SampledKeypoints sample_training_keypoints(const Tensor<double>&, const DetectorConfig&, int, int, Rng&);

template <typename T>
void adam_step(std::vector<Parameter<T>>& params, AdamState<T>& state, double lr, const AdamConfig& config) {
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, state.step);
  const double c2 = 1.0 - std::pow(config.beta2, state.step);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (p.grad.size() != p.value.size()) continue;  // never reached: zero gradient
    T* m = state.m[k].data();
    T* v = state.v[k].data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = T(config.beta1 * m[i] + (1.0 - config.beta1) * g);
      v[i] = T(config.beta2 * v[i] + (1.0 - config.beta2) * g * g);
      const double mh = m[i] / c1, vh = v[i] / c2;
      p.value[i] = T(p.value[i] - lr * mh / (std::sqrt(vh) + config.eps));
    }
  }
}

template void adam_step(std::vector<Parameter<float>>&, AdamState<float>&, double, const AdamConfig&);
template void adam_step(std::vector<Parameter<double>>&, AdamState<double>&, double, const AdamConfig&);

std::uint64_t training_pair_seed(const TrainConfig& config, std::uint64_t index) {
  return mix_seed(config.seed, index);
}

std::uint64_t held_out_pair_seed(std::uint64_t index) {
  return mix_seed(0x48454C444F5554ull, index);
}

LossReport accumulate_pair(Model<float>& model, std::uint64_t pair_seed, const TrainConfig& config,
                           double grad_scale) {
  const SyntheticPair pair = generate_pair(pair_seed, config.image_size);
  const auto size = static_cast<std::int64_t>(config.image_size);
  const WarpSpec spec = WarpSpec::from_homography(pair.homography, {size, size}, {size, size});

  Graph<float> g;
  const auto out_a = model.forward(g, g.constant(image_to_tensor<float>(pair.image_a)));
  const auto out_b = model.forward(g, g.constant(image_to_tensor<float>(pair.image_b)));
  Rng rng(mix_seed(pair_seed, 0x5A3B));
  const auto ka = sample_training_keypoints(out_a.score_map.value(), config.detector, config.top_k_train,
                                            config.n_random, rng);
  const auto kb = sample_training_keypoints(out_b.score_map.value(), config.detector, config.top_k_train,
                                            config.n_random, rng);
  auto loss = pair_loss(out_a, out_b, ka.keypoints, kb.keypoints, spec, config.detector, config.loss);
  if (!std::isfinite(loss.report.total)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%llu", static_cast<unsigned long long>(pair_seed));
    throw DomainError(std::string("non-finite loss on training pair with seed ") + buf +
                      " (rp=" + format_g9(loss.report.rp) + " pk=" + format_g9(loss.report.pk) +
                      " rl=" + format_g9(loss.report.rl) + " de=" + format_g9(loss.report.de) + ")");
  }
  g.backward(ops::mul_scalar(loss.total, float(grad_scale)));
  return loss.report;
}

namespace {

std::string checkpoint_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "checkpoint_%06d.bin", step);
  return buf;
}

}  // namespace

TrainResult train(const TrainConfig& config, const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const LossRow&)>& on_step) {
  config.validate();
  TrainResult result{Model<float>(ModelConfig::preset(config.model), config.seed), {}};
  Model<float>& model = result.model;
  AdamState<float> adam;

  std::ofstream csv;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    csv.open(*out_dir / "loss.csv", std::ios::binary);
    if (!csv) throw InputError((*out_dir / "loss.csv").string() + ": cannot open for writing");
    csv << "step,lr,rp,pk,rl,de,total\n";
  }
  std::vector<int> saved;

  for (int step = 1; step <= config.steps; ++step) {
    model.zero_grad();
    LossRow row;
    row.step = step;
    row.lr = learning_rate(config, step);
    for (int a = 0; a < config.accumulation; ++a) {
      const auto index = static_cast<std::uint64_t>(step - 1) * config.accumulation + a;
      const LossReport r = accumulate_pair(model, training_pair_seed(config, index), config,
                                           1.0 / config.accumulation);
      const double s = 1.0 / config.accumulation;
      row.report.rp += s * r.rp;
      row.report.pk += s * r.pk;
      row.report.rl += s * r.rl;
      row.report.de += s * r.de;
      row.report.total += s * r.total;
      row.report.matched_ab += r.matched_ab;
      row.report.matched_ba += r.matched_ba;
    }
    adam_step(model.parameters(), adam, row.lr);
    result.curve.push_back(row);
    if (csv.is_open()) {
      csv << step << ',' << format_g9(row.lr) << ',' << format_g9(row.report.rp) << ','
          << format_g9(row.report.pk) << ',' << format_g9(row.report.rl) << ','
          << format_g9(row.report.de) << ',' << format_g9(row.report.total) << '\n';
    }
    if (out_dir && step % config.checkpoint_every == 0) {
      model.save(*out_dir / checkpoint_name(step));
      saved.push_back(step);
      while (static_cast<int>(saved.size()) > config.keep_checkpoints) {
        std::filesystem::remove(*out_dir / checkpoint_name(saved.front()));
        saved.erase(saved.begin());
      }
    }
    if (on_step) on_step(row);
  }
  if (out_dir) {
    csv.flush();
    model.save(*out_dir / "final.bin");
  }
  return result;
}

PairEvaluation evaluate_pair(Model<float>& model, const Image& a, const Image& b,
                             const Eigen::Matrix3d& h_gt, const DetectorConfig& detector,
                             const RansacConfig& ransac) {
  auto run = [&](const Image& img) {
    const auto out = model.infer(image_to_tensor<float>(img));
    auto kps = detect_keypoints(out.score_map, detector);
    attach_descriptors(kps, out.descriptor_map);
    return kps;
  };
  const auto ka = run(a);
  const auto kb = run(b);
  const WarpSpec spec = WarpSpec::from_homography(h_gt, {a.width, a.height}, {b.width, b.height});

  std::vector<Point2> pa, pb;
  for (const auto& k : ka) pa.push_back({k.u, k.v});
  for (const auto& k : kb) pb.push_back({k.u, k.v});
  const int dim = model.config().dim;
  const auto matches = mutual_match(ka.empty() ? Tensor<float>({0, dim}) : descriptor_matrix(ka),
                                    kb.empty() ? Tensor<float>({0, dim}) : descriptor_matrix(kb));

  PairEvaluation ev;
  ev.counts = compute_metrics(pa, pb, matches, spec);
  for (const auto& m : matches) {
    const auto p = warp(pa[static_cast<std::size_t>(m.index_a)], spec, Direction::a_to_b);
    if (!p || !warp(pb[static_cast<std::size_t>(m.index_b)], spec, Direction::b_to_a)) continue;
    const auto& q = pb[static_cast<std::size_t>(m.index_b)];
    ev.match_errors.push_back(std::hypot(p->x - q.x, p->y - q.y));
  }
  std::vector<Point2> src, dst;
  for (const auto& m : matches) {
    src.push_back(pa[static_cast<std::size_t>(m.index_a)]);
    dst.push_back(pb[static_cast<std::size_t>(m.index_b)]);
  }
  const auto est = estimate_homography(src, dst, ransac);
  for (std::size_t t = 0; t < kDefaultThresholds.size(); ++t) {
    ev.counts.mha_correct[t] = est.success && homography_accuracy(est.h, h_gt, a.width, a.height,
                                                                  kDefaultThresholds[t]);
  }
  if (est.success) ev.corner_error = mean_corner_error(est.h, h_gt, a.width, a.height);
  return ev;
}

EvaluationSummary evaluate_held_out(Model<float>& model, int count, int image_size,
                                    const DetectorConfig& detector, const RansacConfig& ransac) {
  EvaluationSummary s;
  double err_sum = 0.0, inlier_sum = 0.0, mma_sum = 0.0, mha_sum = 0.0;
  std::size_t err_n = 0, inlier_n = 0, mma_n = 0;
  for (int i = 0; i < count; ++i) {
    const auto seed = held_out_pair_seed(static_cast<std::uint64_t>(i));
    const auto pair = generate_pair(seed, image_size);
    auto ev = evaluate_pair(model, pair.image_a, pair.image_b, pair.homography, detector, ransac);
    ev.seed = seed;
    for (double e : ev.match_errors) {
      err_sum += e;
      ++err_n;
      if (e <= 3.0) {
        inlier_sum += e;
        ++inlier_n;
      }
    }
    if (ev.counts.mma[2]) {
      mma_sum += *ev.counts.mma[2];
      ++mma_n;
    }
    mha_sum += ev.counts.mha_correct[2].value_or(false) ? 1.0 : 0.0;
    s.pairs.push_back(std::move(ev));
  }
  if (err_n) s.mean_match_error = err_sum / double(err_n);
  if (inlier_n) s.mean_inlier_error = inlier_sum / double(inlier_n);
  if (mma_n) s.mma3 = mma_sum / double(mma_n);
  if (count > 0) s.mha3 = mha_sum / count;
  return s;
}

}  // namespace alike
