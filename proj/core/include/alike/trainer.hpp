#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "alike/backbone.hpp"
#include "alike/detect.hpp"
#include "alike/image.hpp"
#include "alike/losses.hpp"
#include "alike/matching.hpp"
#include "alike/random.hpp"

namespace alike {

struct TrainConfig {
  std::string model = "tiny";
  int image_size = 96;
  int steps = 2000;
  double lr_peak = 3e-3;
  int warmup_steps = 500;
  int accumulation = 16;
  std::uint64_t seed = 0;
  int top_k_train = 400;
  int n_random = 400;
  int checkpoint_every = 100;
  int keep_checkpoints = 3;
  DetectorConfig detector;
  LossConfig loss;

  void validate() const;

  /// Applies `key = value` entries; unknown keys and bad values throw
  /// ConfigError naming the key.
  void apply(const std::vector<std::pair<std::string, std::string>>& entries);
  static TrainConfig from_file(const std::filesystem::path& path);
};

/// lr_peak * min(step / warmup_steps, 1).
double learning_rate(const TrainConfig& config, int step);

struct SampledKeypoints {
  TrainingKeypoints keypoints;
  bool short_of_random = false;  // fewer than n_random positions fitted
};

/// Up to `top_k` NMS seeds plus `n_random` distinct pixels inside the margin
/// whose Chebyshev distance to every seed is at least N.
template <typename T>
SampledKeypoints sample_training_keypoints(const Tensor<T>& score_map, const DetectorConfig& detector,
                                           int top_k, int n_random, Rng& rng);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  int step = 0;
};

/// One bias-corrected Adam update of every parameter from its `grad`.
template <typename T>
void adam_step(std::vector<Parameter<T>>& params, AdamState<T>& state, double lr,
               const AdamConfig& config = {});

struct LossRow {
  int step = 0;
  double lr = 0.0;
  LossReport report;  // means over the accumulation window
};

/// Forward, loss and backward for one pair; gradients are added into the
/// model parameters scaled by `grad_scale`.
LossReport accumulate_pair(Model<float>& model, std::uint64_t pair_seed, const TrainConfig& config,
                           double grad_scale);

/// Seed of the pair used at position `index` of the training stream.
std::uint64_t training_pair_seed(const TrainConfig& config, std::uint64_t index);
/// Seed of held-out pair `index`; disjoint from the training stream.
std::uint64_t held_out_pair_seed(std::uint64_t index);

struct TrainResult {
  Model<float> model;
  std::vector<LossRow> curve;
};

/// Runs `config.steps` optimizer steps. When `out_dir` is given, writes
/// loss.csv, checkpoint_<step>.bin every checkpoint_every steps (keeping the
/// last keep_checkpoints) and final.bin. Throws DomainError naming the pair
/// seed when a loss is not finite.
TrainResult train(const TrainConfig& config, const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const LossRow&)>& on_step = {});

struct PairEvaluation {
  std::uint64_t seed = 0;
  MetricCounts counts;
  std::vector<double> match_errors;  // per putative match with both keypoints covisible
  std::optional<double> corner_error;
};

struct EvaluationSummary {
  std::vector<PairEvaluation> pairs;
  std::optional<double> mean_match_error;
  std::optional<double> mean_inlier_error;  // over matches within 3 px
  std::optional<double> mma3;
  std::optional<double> mha3;
};

/// Detection, mutual matching, metrics and RANSAC homography on a single pair.
PairEvaluation evaluate_pair(Model<float>& model, const Image& a, const Image& b,
                             const Eigen::Matrix3d& h_gt, const DetectorConfig& detector,
                             const RansacConfig& ransac);

/// evaluate_pair over `count` held-out synthetic pairs.
EvaluationSummary evaluate_held_out(Model<float>& model, int count, int image_size,
                                    const DetectorConfig& detector, const RansacConfig& ransac = {});

}  // namespace alike
