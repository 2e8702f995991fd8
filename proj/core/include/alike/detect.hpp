#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "alike/graph.hpp"
#include "alike/ops.hpp"

namespace alike {

struct DetectorConfig {
  int window = 5;          // N, odd
  double t_det = 0.1;      // softmax temperature
  double threshold = 0.2;  // scores must exceed this to seed a keypoint
  int top_k = 5000;
  int margin = 2;          // keypoints satisfy margin <= u <= W-1-margin

  int radius() const noexcept { return window / 2; }
  /// Throws ConfigError unless N is odd and >= 3, t_det > 0, top_k >= 1,
  /// threshold in [0,1) and margin >= (N-1)/2.
  void validate() const;
};

struct Keypoint {
  double u = 0.0;  // x, right
  double v = 0.0;  // y, down
  double score = 0.0;
  std::vector<float> descriptor;
};

/// Local maxima of the score map above the threshold, sorted by score.
///
/// A pixel survives when it equals the maximum of its N×N neighbourhood
/// (truncated at the border), no earlier pixel in row-major order of that
/// neighbourhood has the same value, its score exceeds the threshold, and it
/// is at least margin + (N-1)/2 pixels from every border so that the refined
/// keypoint cannot leave the margin. Ties in score keep row-major order.
template <typename T>
std::vector<PixelPos> nms(const Tensor<T>& score_map, const DetectorConfig& config);

/// Softargmax over rows of N×N windows [K,N*N]: s' = softmax((s - max)/t_det)
/// and offset = sum s'(i,j)*(j,i) with centred coordinates. Returns offsets
/// [K,2] as (dx, dy); `probs` receives s' when given.
template <typename T>
Var<T> softargmax_offsets(Var<T> windows, int window, double t_det, Var<T>* probs = nullptr);

/// Offset (dx, dy) of a single N×N patch, row-major.
template <typename T>
std::array<T, 2> softargmax_offset(std::span<const T> patch, int window, double t_det);

/// Graph form of detection for fixed NMS seeds.
template <typename T>
struct DetectionVars {
  std::vector<PixelPos> seeds;
  Var<T> windows;  // [K,N*N]
  Var<T> probs;    // [K,N*N], s'
  Var<T> offsets;  // [K,2]
  Var<T> coords;   // [K,2], seed + offset as (u, v)
  Var<T> scores;   // [K], score map sampled at coords
};

/// Builds the differentiable path from an [H,W] score map to the keypoints
/// refined around `seeds`.
template <typename T>
DetectionVars<T> detect_graph(Var<T> score_map, const std::vector<PixelPos>& seeds,
                              const DetectorConfig& config);

/// NMS followed by sub-pixel refinement. Descriptors are left empty.
template <typename T>
std::vector<Keypoint> detect_keypoints(const Tensor<T>& score_map, const DetectorConfig& config);

/// Bilinear samples of a [dim,H,W] descriptor map at [K,2] coordinates,
/// renormalised to unit length -> [K,dim].
template <typename T>
Var<T> sample_descriptors(Var<T> descriptor_map, Var<T> coords);

template <typename T>
Tensor<T> sample_descriptors(const Tensor<T>& descriptor_map, const std::vector<Keypoint>& keypoints);

/// Fills `descriptor` of every keypoint from the map.
template <typename T>
void attach_descriptors(std::vector<Keypoint>& keypoints, const Tensor<T>& descriptor_map);

template <typename T>
struct SimilarityMap {
  Tensor<T> values;  // [H,W]
  T outlier_bin = T(0);
};

/// Dot product of `descriptor` with every pixel of a [dim,H,W] map.
template <typename T>
SimilarityMap<T> similarity_map(std::span<const T> descriptor, const Tensor<T>& descriptor_map,
                                T outlier_bin = T(0));

/// (u, v) of each keypoint as a [K,2] tensor.
template <typename T>
Tensor<T> keypoint_coords(const std::vector<Keypoint>& keypoints);

/// Descriptors of the keypoints stacked into [K,dim]. Throws UsageError on
/// missing or unequal descriptors.
Tensor<float> descriptor_matrix(const std::vector<Keypoint>& keypoints);

}  // namespace alike
