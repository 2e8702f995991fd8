#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "alike/graph.hpp"

namespace alike {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

struct ImageSize {
  std::int64_t width = 0;
  std::int64_t height = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

enum class WarpKind { homography, rigid3d };
enum class Direction { a_to_b, b_to_a };

/// Ground-truth relation between image A and image B.
///
/// homography maps A pixels to B pixels. For rigid3d, a point of A with
/// depth d back-projects to d*K_A^-1*[u,v,1], is moved by (R, t) into the
/// frame of B and projected with K_B; depth maps are [H,W] in scene units.
struct WarpSpec {
  WarpKind kind = WarpKind::homography;
  Eigen::Matrix3d homography = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  Eigen::Matrix3d k_a = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d k_b = Eigen::Matrix3d::Identity();
  Tensor<double> depth_a;
  Tensor<double> depth_b;
  ImageSize size_a;
  ImageSize size_b;
  /// Maximum relative difference between the projected and the target depth.
  double depth_tolerance = 0.05;

  static WarpSpec from_homography(const Eigen::Matrix3d& h, ImageSize a, ImageSize b);
  static WarpSpec from_pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation,
                            const Eigen::Matrix3d& k_a, const Eigen::Matrix3d& k_b,
                            Tensor<double> depth_a, Tensor<double> depth_b);

  /// Throws ConfigError for a singular homography, a rotation that is not
  /// orthonormal with det +1 (1e-9), or depth maps of the wrong rank.
  void validate() const;

  ImageSize target_size(Direction d) const { return d == Direction::a_to_b ? size_b : size_a; }
  ImageSize source_size(Direction d) const { return d == Direction::a_to_b ? size_a : size_b; }
};

struct WarpResult {
  Point2 p;
  Eigen::Matrix2d jacobian;  // d(p_out)/d(p_in)
};

/// Warped coordinate, or nullopt when it leaves [0,W-1]x[0,H-1] of the target,
/// meets the plane at infinity, or fails the depth checks.
std::optional<Point2> warp(Point2 p, const WarpSpec& spec, Direction direction);
std::optional<WarpResult> warp_with_jacobian(Point2 p, const WarpSpec& spec, Direction direction);

/// Differentiable warp of [K,2] coordinates. Rows that warp OUT keep their
/// input value, receive no gradient and are flagged false in `valid`.
template <typename T>
Var<T> warp_points(Var<T> coords, const WarpSpec& spec, Direction direction,
                   std::vector<bool>& valid);

struct Correspondence {
  int index_a = 0;  // index in the source set of the direction
  int index_b = 0;  // index in the target set
  Point2 p_ab;      // warped source keypoint
  double distance = 0.0;
};

/// For each source point warping inside the target, its nearest target point
/// (ties to the lower index), kept when the Euclidean distance is <= th_gt.
/// A target point keeps only its closest source point (ties to the lower
/// source index), so every keypoint appears at most once.
std::vector<Correspondence> assign_correspondences(const std::vector<Point2>& source,
                                                   const std::vector<Point2>& target,
                                                   const WarpSpec& spec, Direction direction,
                                                   double th_gt);

/// Sparse distribution over H*W+1 bins; bin H*W is the outlier bin.
struct ReprojectionProbability {
  bool out = false;
  std::array<std::int64_t, 4> bins{};  // corners 00, (x, y+1), (x+1, y), (x+1, y+1)
  std::array<double, 4> weights{};
};

ReprojectionProbability reprojection_probability(const std::optional<Point2>& p_ab,
                                                 std::int64_t height, std::int64_t width);

/// Homography applied to a point without bounds checks; nullopt at infinity.
std::optional<Point2> apply_homography(const Eigen::Matrix3d& h, Point2 p);

}  // namespace alike
