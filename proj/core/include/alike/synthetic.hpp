#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "alike/image.hpp"
#include "alike/random.hpp"

namespace alike {

struct Primitive {
  enum class Kind { polygon, ellipse, checkerboard };
  Kind kind = Kind::polygon;
  std::array<std::uint8_t, 3> color{};
  std::array<std::uint8_t, 3> color2{};  // second checkerboard colour
  std::vector<Eigen::Vector2d> vertices;  // polygon, counter-clockwise in image coordinates
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Vector2d axes = Eigen::Vector2d::Ones();  // ellipse semi-axes; board half-size
  double angle = 0.0;
  int cells = 4;  // checkerboard cells per side
};

/// Background of a constant colour plus a few low-frequency sinusoids,
/// overdrawn by primitives in order.
struct Scene {
  std::array<double, 3> base{128, 128, 128};
  struct Wave {
    double fx, fy, phase;
    std::array<double, 3> amplitude;
  };
  std::vector<Wave> waves;
  std::vector<Primitive> primitives;
};

Scene random_scene(Rng& rng, int width, int height);

/// Area-averaged rendering with `supersample`² samples per pixel. Pixels
/// whose four quarter-offset probes hit the same colour use those probes
/// alone.
Image render_scene(const Scene& scene, int width, int height, int supersample = 4);

/// T(c + t) * R * S * P * T(-c) about the image centre: rotation within
/// ±25°, scale 0.8-1.25, translation within ±10% of the size, perspective
/// terms within ±1e-3.
Eigen::Matrix3d random_homography(Rng& rng, int width, int height);

struct SyntheticPair {
  Image image_a;
  Image image_b;
  Eigen::Matrix3d homography = Eigen::Matrix3d::Identity();  // A -> B
  std::uint64_t seed = 0;
};

/// Square pair of side `size` (a multiple of 32). Image B is A warped by the
/// homography with brightness/contrast jitter within ±20% and Gaussian noise
/// of sigma <= 2/255. Without `jitter` the homography is the identity and B
/// equals A.
SyntheticPair generate_pair(std::uint64_t seed, int size, bool jitter = true);

}  // namespace alike
