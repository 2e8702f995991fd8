#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "alike/geometry.hpp"
#include "alike/tensor.hpp"

namespace alike {

struct Match {
  int index_a = 0;
  int index_b = 0;
  double similarity = 0.0;
  friend bool operator==(const Match&, const Match&) = default;
};

/// Mutual nearest neighbours by dot-product similarity of [K,dim] descriptor
/// rows; argmax ties go to the lower index. Sorted by index_a.
std::vector<Match> mutual_match(const Tensor<float>& desc_a, const Tensor<float>& desc_b);

inline constexpr std::array<double, 3> kDefaultThresholds{1.0, 2.0, 3.0};

struct MetricCounts {
  double n_cov = 0.0;  // (N'_A + N'_B) / 2
  double n_gt = 0.0;   // (G_A + G_B) / 2
  int n_putative = 0;
  std::array<int, 3> n_inlier{};
  std::optional<double> rep;
  std::optional<double> ms;
  std::array<std::optional<double>, 3> mma;
  std::array<std::optional<bool>, 3> mha_correct;
};

/// Counts behind Rep, MS and MMA for one pair.
///
/// A keypoint is covisible when its warp is not OUT. G_A counts covisible
/// keypoints of A whose warp lies within `gt_threshold` of some keypoint of B,
/// G_B the same from B to A. A match is an inlier at threshold θ when both
/// keypoints are covisible and the warped keypoint of A lies within θ of the
/// matched keypoint of B. MS uses the last threshold.
MetricCounts compute_metrics(const std::vector<Point2>& kps_a, const std::vector<Point2>& kps_b,
                             const std::vector<Match>& matches, const WarpSpec& spec,
                             const std::array<double, 3>& thresholds = kDefaultThresholds,
                             double gt_threshold = 3.0);

struct RansacConfig {
  int max_iterations = 1000;
  double confidence = 0.999;
  double threshold = 3.0;  // transfer error in pixels
  std::uint64_t seed = 0;
};

struct HomographyEstimate {
  bool success = false;
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
  std::vector<bool> inliers;
  int n_inliers = 0;
  int iterations = 0;
};

/// Normalised DLT on all given correspondences; nullopt when fewer than 4
/// or degenerate.
std::optional<Eigen::Matrix3d> fit_homography(const std::vector<Point2>& src,
                                              const std::vector<Point2>& dst);

/// RANSAC over 4-point samples with a least-squares refit on the inliers.
HomographyEstimate estimate_homography(const std::vector<Point2>& src, const std::vector<Point2>& dst,
                                       const RansacConfig& config = {});

/// Mean distance between the four image corners warped by both matrices.
double mean_corner_error(const Eigen::Matrix3d& h_est, const Eigen::Matrix3d& h_gt,
                         std::int64_t width, std::int64_t height);

bool homography_accuracy(const Eigen::Matrix3d& h_est, const Eigen::Matrix3d& h_gt,
                         std::int64_t width, std::int64_t height, double theta);

}  // namespace alike
