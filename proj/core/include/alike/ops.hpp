#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "alike/graph.hpp"

namespace alike {

/// Bilinear interpolation cell of a sub-pixel coordinate on a W×H grid with
/// pixel-centre convention. The lower corner is clamped so that the cell stays
/// inside the grid; at the last row/column the fractional part becomes 1.
struct BilinearCell {
  std::int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double fx = 0.0, fy = 0.0;
};

BilinearCell bilinear_cell(double x, double y, std::int64_t width, std::int64_t height);

struct PixelPos {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelPos&, const PixelPos&) = default;
};

namespace ops {

// Elementwise.
template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> exp(Var<T> x);
template <typename T> Var<T> log(Var<T> x);
template <typename T> Var<T> sqrt(Var<T> x);
template <typename T> Var<T> abs(Var<T> x);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);
template <typename T> Var<T> add_scalar(Var<T> x, T c);
template <typename T> Var<T> mul_scalar(Var<T> x, T c);
/// x * s for a one-element `s`.
template <typename T> Var<T> scale(Var<T> x, Var<T> s);
/// x / s for a one-element `s`.
template <typename T> Var<T> divide(Var<T> x, Var<T> s);

// Reductions (fixed row-major accumulation order).
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
template <typename T> Var<T> max(Var<T> x);
/// Sum over the last axis of a rank-2 tensor: [K,M] -> [K].
template <typename T> Var<T> sum_rows(Var<T> x);
/// Row-wise dot product of two [K,D] tensors -> [K].
template <typename T> Var<T> row_dot(Var<T> a, Var<T> b);

// Shape manipulation.
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
/// Rows of the leading axis selected by index (repeats allowed).
template <typename T> Var<T> gather_rows(Var<T> x, const std::vector<std::int64_t>& rows);
/// Concatenation along axis 0 of rank-2 tensors.
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& xs);
/// Concatenation along axis 1 of rank-4 tensors.
template <typename T> Var<T> concat_channels(const std::vector<Var<T>>& xs);
/// Channels [begin, end) of a rank-4 tensor.
template <typename T> Var<T> slice_channels(Var<T> x, std::int64_t begin, std::int64_t end);

// Linear algebra.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool transpose_a = false, bool transpose_b = false);

// Normalisation.
template <typename T> Var<T> softmax_rows(Var<T> x);
template <typename T> Var<T> log_softmax_rows(Var<T> x);
/// Unit L2 norm over the last axis of [K,D]; divisor max(|v|, 1e-12).
template <typename T> Var<T> l2_normalize_rows(Var<T> x);
/// Unit L2 norm over channels of [N,C,H,W] at every pixel.
template <typename T> Var<T> l2_normalize_channels(Var<T> x);
/// Lp norm of every row of [K,D] -> [K], p >= 1.
template <typename T> Var<T> lp_norm_rows(Var<T> x, double p);

// Convolutional network primitives.
/// Cross-correlation of [N,C,H,W] with [O,C,k,k]; `bias` may be an invalid Var.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int stride, int padding);
/// Max pooling with kernel equal to stride.
template <typename T> Var<T> maxpool2d(Var<T> x, int kernel);
/// Bilinear resize of [N,C,h,w] with the half-pixel convention.
template <typename T> Var<T> upsample_bilinear(Var<T> x, std::int64_t out_h, std::int64_t out_w);

// Sub-pixel sampling.
/// Bilinear samples of a [C,H,W] map at [K,2] (x,y) coordinates -> [K,C].
/// Differentiable with respect to both the map and the coordinates.
/// Throws DomainError outside [0,W-1]x[0,H-1].
template <typename T> Var<T> bilinear_sample(Var<T> map, Var<T> coords);
/// N×N windows of an [H,W] map centred at integer pixels -> [K,N*N], row-major.
template <typename T>
Var<T> gather_windows(Var<T> map, const std::vector<PixelPos>& centers, int window);
/// Bilinear corner weights (00, 0+y, +x0, +x+y) of [K,2] coordinates on an H×W grid -> [K,4].
template <typename T>
Var<T> bilinear_weights(Var<T> coords, std::int64_t height, std::int64_t width);
/// Values of a [K,H*W] row-per-map tensor at the bilinear cell corners of
/// fixed coordinates -> [K,4], same corner order as bilinear_weights.
template <typename T>
Var<T> gather_corners(Var<T> maps, const std::vector<std::array<double, 2>>& coords,
                      std::int64_t height, std::int64_t width);
/// Lp distance of every centred window position (i,j), i,j in [-r,r], to the
/// per-row offset: [K,2] -> [K,N*N].
template <typename T> Var<T> window_distance(Var<T> offsets, int window, double p);

}  // namespace ops
}  // namespace alike
