#include "alike/geometry.hpp"

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "alike/ops.hpp"

namespace alike {

namespace {

constexpr double kAtInfinity = 1e-12;

bool inside(Point2 p, ImageSize s) {
  return p.x >= 0.0 && p.y >= 0.0 && p.x <= double(s.width - 1) && p.y <= double(s.height - 1);
}

// Warped points within rounding distance of the border are moved onto it;
// a border pixel mapped by an identity warp must stay covisible.
constexpr double kEdgeSlack = 1e-9;

bool snap_inside(Point2& p, ImageSize s) {
  auto snap = [](double& v, double hi) {
    if (v < 0.0 && v > -kEdgeSlack) v = 0.0;
    if (v > hi && v < hi + kEdgeSlack) v = hi;
  };
  snap(p.x, double(s.width - 1));
  snap(p.y, double(s.height - 1));
  return inside(p, s);
}

// Value and gradient of a bilinearly interpolated [H,W] map.
struct Sample {
  double value;
  Eigen::Vector2d grad;
};

Sample sample_depth(const Tensor<double>& map, Point2 p) {
  const auto h = map.dim(0), w = map.dim(1);
  const auto q = bilinear_cell(p.x, p.y, w, h);
  const double v00 = map[q.y0 * w + q.x0], v01 = map[q.y1 * w + q.x0];
  const double v10 = map[q.y0 * w + q.x1], v11 = map[q.y1 * w + q.x1];
  Sample s;
  s.value = (1 - q.fx) * (1 - q.fy) * v00 + (1 - q.fx) * q.fy * v01 + q.fx * (1 - q.fy) * v10 +
            q.fx * q.fy * v11;
  s.grad.x() = q.x1 != q.x0 ? (1 - q.fy) * (v10 - v00) + q.fy * (v11 - v01) : 0.0;
  s.grad.y() = q.y1 != q.y0 ? (1 - q.fx) * (v01 - v00) + q.fx * (v11 - v10) : 0.0;
  return s;
}

// Dehomogenise q = M p (M 3x2 derivative dq) into a point and its Jacobian.
std::optional<WarpResult> dehomogenise(const Eigen::Vector3d& q, const Eigen::Matrix<double, 3, 2>& dq) {
  if (std::abs(q.z()) < kAtInfinity) return std::nullopt;
  WarpResult r;
  r.p = {q.x() / q.z(), q.y() / q.z()};
  r.jacobian.row(0) = (dq.row(0) - r.p.x * dq.row(2)) / q.z();
  r.jacobian.row(1) = (dq.row(1) - r.p.y * dq.row(2)) / q.z();
  if (!std::isfinite(r.p.x) || !std::isfinite(r.p.y)) return std::nullopt;
  return r;
}

std::optional<WarpResult> warp_rigid(Point2 p, const WarpSpec& spec, Direction d) {
  const bool ab = d == Direction::a_to_b;
  const Tensor<double>& depth_src = ab ? spec.depth_a : spec.depth_b;
  const Tensor<double>& depth_dst = ab ? spec.depth_b : spec.depth_a;
  const Eigen::Matrix3d& k_src = ab ? spec.k_a : spec.k_b;
  const Eigen::Matrix3d& k_dst = ab ? spec.k_b : spec.k_a;
  const Eigen::Matrix3d r = ab ? spec.rotation : Eigen::Matrix3d(spec.rotation.transpose());
  const Eigen::Vector3d t =
      ab ? spec.translation : Eigen::Vector3d(-spec.rotation.transpose() * spec.translation);

  if (!inside(p, spec.source_size(d))) return std::nullopt;
  const Sample depth = sample_depth(depth_src, p);
  if (!(depth.value > 0.0) || !std::isfinite(depth.value)) return std::nullopt;

  const Eigen::Matrix3d k_inv = k_src.inverse();
  const Eigen::Vector3d ray = k_inv * Eigen::Vector3d(p.x, p.y, 1.0);
  const Eigen::Vector3d x = depth.value * ray;
  const Eigen::Matrix<double, 3, 2> dx = ray * depth.grad.transpose() + depth.value * k_inv.leftCols<2>();
  const Eigen::Vector3d y = r * x + t;
  if (!(y.z() > 0.0)) return std::nullopt;
  auto out = dehomogenise(k_dst * y, k_dst * r * dx);
  if (!out || !snap_inside(out->p, spec.target_size(d))) return std::nullopt;

  const double target_depth = sample_depth(depth_dst, out->p).value;
  if (!(target_depth > 0.0) || std::abs(target_depth - y.z()) / y.z() >= spec.depth_tolerance) {
    return std::nullopt;
  }
  return out;
}

}  // namespace

WarpSpec WarpSpec::from_homography(const Eigen::Matrix3d& h, ImageSize a, ImageSize b) {
  WarpSpec s;
  s.kind = WarpKind::homography;
  s.homography = h;
  s.size_a = a;
  s.size_b = b;
  s.validate();
  return s;
}

WarpSpec WarpSpec::from_pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation,
                             const Eigen::Matrix3d& k_a, const Eigen::Matrix3d& k_b,
                             Tensor<double> depth_a, Tensor<double> depth_b) {
  WarpSpec s;
  s.kind = WarpKind::rigid3d;
  s.rotation = rotation;
  s.translation = translation;
  s.k_a = k_a;
  s.k_b = k_b;
  if (depth_a.rank() != 2 || depth_b.rank() != 2) {
    throw ConfigError("rigid warp: depth maps must be [H,W]");
  }
  s.size_a = {depth_a.dim(1), depth_a.dim(0)};
  s.size_b = {depth_b.dim(1), depth_b.dim(0)};
  s.depth_a = std::move(depth_a);
  s.depth_b = std::move(depth_b);
  s.validate();
  return s;
}

void WarpSpec::validate() const {
  if (size_a.width <= 0 || size_a.height <= 0 || size_b.width <= 0 || size_b.height <= 0) {
    throw ConfigError("warp: image sizes must be positive");
  }
  if (kind == WarpKind::homography) {
    if (!homography.allFinite() || std::abs(homography.determinant()) < 1e-12) {
      throw ConfigError("warp: homography is singular");
    }
    return;
  }
  const double ortho = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).norm();
  if (ortho > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw ConfigError("warp: rotation is not orthonormal with determinant +1");
  }
  if (std::abs(k_a.determinant()) < 1e-12 || std::abs(k_b.determinant()) < 1e-12) {
    throw ConfigError("warp: intrinsics are singular");
  }
  if (depth_a.rank() != 2 || depth_b.rank() != 2 || depth_a.dim(0) != size_a.height ||
      depth_a.dim(1) != size_a.width || depth_b.dim(0) != size_b.height ||
      depth_b.dim(1) != size_b.width) {
    throw ConfigError("warp: depth maps do not match the image sizes");
  }
}

std::optional<Point2> apply_homography(const Eigen::Matrix3d& h, Point2 p) {
  const Eigen::Vector3d q = h * Eigen::Vector3d(p.x, p.y, 1.0);
  if (std::abs(q.z()) < kAtInfinity) return std::nullopt;
  return Point2{q.x() / q.z(), q.y() / q.z()};
}

std::optional<WarpResult> warp_with_jacobian(Point2 p, const WarpSpec& spec, Direction direction) {
  if (spec.kind == WarpKind::rigid3d) return warp_rigid(p, spec, direction);
  const Eigen::Matrix3d h =
      direction == Direction::a_to_b ? spec.homography : Eigen::Matrix3d(spec.homography.inverse());
  auto out = dehomogenise(h * Eigen::Vector3d(p.x, p.y, 1.0), h.leftCols<2>());
  if (!out || !snap_inside(out->p, spec.target_size(direction))) return std::nullopt;
  return out;
}

std::optional<Point2> warp(Point2 p, const WarpSpec& spec, Direction direction) {
  auto r = warp_with_jacobian(p, spec, direction);
  if (!r) return std::nullopt;
  return r->p;
}

template <typename T>
Var<T> warp_points(Var<T> coords, const WarpSpec& spec, Direction direction,
                   std::vector<bool>& valid) {
  Graph<T>& g = *coords.graph;
  const Tensor<T>& cv = coords.value();
  if (cv.rank() != 2 || cv.dim(1) != 2) throw ConfigError("warp_points: coordinates must be [K,2]");
  const auto k = cv.dim(0);
  valid.assign(static_cast<std::size_t>(k), false);
  std::vector<Eigen::Matrix2d> jac(static_cast<std::size_t>(k), Eigen::Matrix2d::Zero());
  Tensor<T> y = cv;
  for (std::int64_t i = 0; i < k; ++i) {
    const auto r = warp_with_jacobian({double(cv[i * 2]), double(cv[i * 2 + 1])}, spec, direction);
    if (!r) continue;
    valid[static_cast<std::size_t>(i)] = true;
    jac[static_cast<std::size_t>(i)] = r->jacobian;
    y[i * 2] = T(r->p.x);
    y[i * 2 + 1] = T(r->p.y);
  }
  return g.record(std::move(y), {coords}, [coords, jac = std::move(jac)](Graph<T>& g,
                                                                         const Tensor<T>& gy) {
    Tensor<T>& gc = g.grad_buffer(coords);
    for (std::size_t i = 0; i < jac.size(); ++i) {
      const Eigen::Vector2d go(gy[i * 2], gy[i * 2 + 1]);
      const Eigen::Vector2d gi = jac[i].transpose() * go;
      gc[i * 2] += T(gi.x());
      gc[i * 2 + 1] += T(gi.y());
    }
  });
}

std::vector<Correspondence> assign_correspondences(const std::vector<Point2>& source,
                                                   const std::vector<Point2>& target,
                                                   const WarpSpec& spec, Direction direction,
                                                   double th_gt) {
  constexpr double kNone = std::numeric_limits<double>::infinity();
  // holder[j]: source index currently holding target j
  std::vector<int> holder(target.size(), -1);
  std::vector<double> holder_dist(target.size(), kNone);
  std::vector<std::optional<Correspondence>> candidate(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto p = warp(source[i], spec, direction);
    if (!p) continue;
    int nearest = -1;
    double d_min = kNone;
    for (std::size_t j = 0; j < target.size(); ++j) {
      const double d = std::hypot(p->x - target[j].x, p->y - target[j].y);
      if (d < d_min) {
        d_min = d;
        nearest = static_cast<int>(j);
      }
    }
    if (nearest < 0 || !(d_min <= th_gt)) continue;
    const auto j = static_cast<std::size_t>(nearest);
    candidate[i] = Correspondence{static_cast<int>(i), nearest, *p, d_min};
    if (d_min < holder_dist[j]) {
      holder[j] = static_cast<int>(i);
      holder_dist[j] = d_min;
    }
  }
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const auto& c = candidate[i];
    if (c && holder[static_cast<std::size_t>(c->index_b)] == c->index_a) out.push_back(*c);
  }
  return out;
}

ReprojectionProbability reprojection_probability(const std::optional<Point2>& p_ab,
                                                 std::int64_t height, std::int64_t width) {
  ReprojectionProbability r;
  if (!p_ab || !inside(*p_ab, {width, height})) {
    r.out = true;
    r.bins = {height * width, height * width, height * width, height * width};
    r.weights = {1.0, 0.0, 0.0, 0.0};
    return r;
  }
  const auto q = bilinear_cell(p_ab->x, p_ab->y, width, height);
  r.bins = {q.y0 * width + q.x0, q.y1 * width + q.x0, q.y0 * width + q.x1, q.y1 * width + q.x1};
  r.weights = {(1 - q.fx) * (1 - q.fy), (1 - q.fx) * q.fy, q.fx * (1 - q.fy), q.fx * q.fy};
  return r;
}

template Var<float> warp_points(Var<float>, const WarpSpec&, Direction, std::vector<bool>&);
template Var<double> warp_points(Var<double>, const WarpSpec&, Direction, std::vector<bool>&);

}  // namespace alike
