#pragma once

#include <string>
#include <vector>

#include "alike/backbone.hpp"
#include "alike/detect.hpp"
#include "alike/geometry.hpp"
#include "alike/graph.hpp"

namespace alike {

enum class DescriptorLoss { nre, triplet };

struct LossConfig {
  double w_rp = 1.0;
  double w_pk = 1.0;
  double w_rl = 1.0;
  double w_de = 5.0;
  double t_rel = 1.0;
  double t_des = 0.02;
  double th_gt = 5.0;
  double norm_p = 1.0;
  /// Similarity assigned to the outlier bin of every similarity map.
  double outlier_similarity = 0.0;
  DescriptorLoss descriptor_loss = DescriptorLoss::nre;
  double triplet_margin = 0.5;

  void validate() const;
};

struct LossReport {
  double rp = 0.0, pk = 0.0, rl = 0.0, de = 0.0, total = 0.0;
  int matched_ab = 0;
  int matched_ba = 0;
  /// Set when a term had nothing to average over and contributed 0.
  bool rp_empty = false;
  bool rl_empty = false;
  bool pk_empty = false;

  std::vector<std::string> warnings() const;
};

/// w_rp*rp + w_pk*pk + w_rl*rl + w_de*de, with the components retained.
LossReport total_loss(double rp, double pk, double rl, double de, const LossConfig& config);

template <typename T>
Var<T> total_loss(Var<T> rp, Var<T> pk, Var<T> rl, Var<T> de, const LossConfig& config);

/// Symmetric mean Lp distance between warped keypoints and their
/// correspondences. Coordinates are the [K,2] detections of each image;
/// correspondences index into them. An empty direction contributes 0 and
/// sets `empty`.
template <typename T>
Var<T> reprojection_loss(Var<T> coords_a, Var<T> coords_b, const std::vector<Correspondence>& ab,
                         const std::vector<Correspondence>& ba, const WarpSpec& spec,
                         const LossConfig& config, bool* empty = nullptr);

/// Mean over keypoints of (1/N^2) * sum d(i,j) s'(i,j), where d is the Lp
/// distance of every centred window position to the soft offset.
/// `probs` is [K,N*N], `offsets` [K,2]; no keypoints gives 0.
template <typename T>
Var<T> dispersity_peak_loss(Var<T> probs, Var<T> offsets, int window, double norm_p);

/// Matching probability q_m over H*W+1 bins of every row of a [K,H*W]
/// similarity: softmax of (C-1)/t_des with the outlier bin appended -> [K,H*W+1].
template <typename T>
Tensor<T> matching_probability(const Tensor<T>& similarity, double t_des, double outlier_similarity);

/// Sum over rows of -sum_bins q_r * ln q_m with sparse q_r. The reprojection
/// distribution is a fixed target.
template <typename T>
Var<T> nre_sum(Var<T> similarity, const std::vector<ReprojectionProbability>& targets, double t_des,
               double outlier_similarity);

/// Symmetric NRE: (sum over keypoints of A + sum over keypoints of B) / (N_A + N_B).
/// `desc_*` are [K,dim] sampled descriptors, `map_*` the [dim,H,W] maps.
template <typename T>
Var<T> nre_descriptor_loss(Var<T> desc_a, Var<T> desc_b, Var<T> map_a, Var<T> map_b,
                           const std::vector<ReprojectionProbability>& q_ab,
                           const std::vector<ReprojectionProbability>& q_ba,
                           const LossConfig& config);

/// One direction of the reliability loss.
///
/// `similarity` [K,H*W] holds descriptor similarities against the target map,
/// `p_ab` [K,2] the warped keypoints (rows with `valid` false are skipped),
/// `scores` [K] the source keypoint scores and `target_scores` the [H,W]
/// target score map. r = bilinear sample of exp((C-1)/t_rel) at p_ab, and the
/// loss is the score-weighted mean of 1 - r with weights s*s_ab normalised to
/// sum to 1.
template <typename T>
Var<T> reliability_term(Var<T> similarity, Var<T> p_ab, const std::vector<bool>& valid,
                        Var<T> scores, Var<T> target_scores, double t_rel, bool* empty = nullptr);

/// Mean hinge max(0, margin + |a_i - b_i| - |a_i - b_k|) with b_k the hardest
/// in-batch negative for a_i. Rows of `a` and `b` are positive pairs.
template <typename T>
Var<T> triplet_loss(Var<T> a, Var<T> b, double margin);

/// Keypoints entering the loss of one image.
struct TrainingKeypoints {
  std::vector<PixelPos> seeds;   // NMS seeds, refined by DKD
  std::vector<PixelPos> random;  // non-salient samples
};

template <typename T>
struct PairLoss {
  Var<T> total;
  LossReport report;
};

/// All four losses for one image pair from the network outputs.
///
/// Detected keypoints enter every loss. Random keypoints enter only the
/// descriptor and reliability terms. Keypoints warping OUT enter the
/// descriptor loss through the outlier bin only.
template <typename T>
PairLoss<T> pair_loss(const ModelVars<T>& a, const ModelVars<T>& b, const TrainingKeypoints& kps_a,
                      const TrainingKeypoints& kps_b, const WarpSpec& spec,
                      const DetectorConfig& detector, const LossConfig& config);

}  // namespace alike
