#include "alike/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>

#include "alike/backbone.hpp"

namespace alike {

namespace {

constexpr double kPi = std::numbers::pi;

std::array<std::uint8_t, 3> random_color(Rng& rng) {
  std::array<std::uint8_t, 3> c{};
  // Mostly dark or bright tones so edges have contrast.
  const bool bright = rng.uniform() < 0.5;
  for (auto& v : c) {
    const double t = bright ? rng.uniform(150, 255) : rng.uniform(0, 105);
    v = static_cast<std::uint8_t>(t);
  }
  return c;
}

Eigen::Vector2d to_local(const Primitive& p, Eigen::Vector2d q) {
  const double c = std::cos(p.angle), s = std::sin(p.angle);
  const Eigen::Vector2d d = q - p.center;
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y()};
}

// Colour of the primitive at q, or nullptr when q is outside it.
const std::array<std::uint8_t, 3>* shade(const Primitive& p, Eigen::Vector2d q) {
  switch (p.kind) {
    case Primitive::Kind::polygon: {
      const std::size_t n = p.vertices.size();
      for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector2d a = p.vertices[i], b = p.vertices[(i + 1) % n];
        const double cross = (b.x() - a.x()) * (q.y() - a.y()) - (b.y() - a.y()) * (q.x() - a.x());
        if (cross < 0) return nullptr;
      }
      return &p.color;
    }
    case Primitive::Kind::ellipse: {
      const Eigen::Vector2d l = to_local(p, q);
      const double r = (l.x() * l.x()) / (p.axes.x() * p.axes.x()) + (l.y() * l.y()) / (p.axes.y() * p.axes.y());
      return r <= 1.0 ? &p.color : nullptr;
    }
    case Primitive::Kind::checkerboard: {
      const Eigen::Vector2d l = to_local(p, q);
      const double a = p.axes.x();
      if (std::abs(l.x()) > a || std::abs(l.y()) > a) return nullptr;
      const double cell = 2 * a / p.cells;
      const int i = std::min(p.cells - 1, static_cast<int>((l.x() + a) / cell));
      const int j = std::min(p.cells - 1, static_cast<int>((l.y() + a) / cell));
      return (i + j) % 2 == 0 ? &p.color : &p.color2;
    }
  }
  return nullptr;
}

}  // namespace

Scene random_scene(Rng& rng, int width, int height) {
  Scene s;
  const double gray = rng.uniform(60, 196);
  for (auto& b : s.base) b = std::clamp(gray + rng.uniform(-30, 30), 0.0, 255.0);
  const int n_waves = 2 + static_cast<int>(rng.integer(0, 2));
  for (int i = 0; i < n_waves; ++i) {
    Scene::Wave w{};
    w.fx = rng.uniform(-4, 4) * 2 * kPi / width;
    w.fy = rng.uniform(-4, 4) * 2 * kPi / height;
    w.phase = rng.uniform(0, 2 * kPi);
    for (auto& a : w.amplitude) a = rng.uniform(5, 25);
    s.waves.push_back(w);
  }
  const double size = std::min(width, height);
  const int n = 10 + static_cast<int>(rng.integer(0, 6));
  for (int i = 0; i < n; ++i) {
    Primitive p;
    p.color = random_color(rng);
    p.center = {rng.uniform(0, width), rng.uniform(0, height)};
    p.angle = rng.uniform(0, kPi);
    const double r = size * rng.uniform(0.06, 0.2);
    const double pick = rng.uniform();
    if (pick < 0.45) {
      p.kind = Primitive::Kind::polygon;
      const int k = 3 + static_cast<int>(rng.integer(0, 3));
      std::vector<double> angles;
      for (int v = 0; v < k; ++v) angles.push_back(rng.uniform(0, 2 * kPi));
      std::sort(angles.begin(), angles.end());
      for (double a : angles) {
        p.vertices.push_back(p.center + r * Eigen::Vector2d(std::cos(a), std::sin(a)));
      }
    } else if (pick < 0.8) {
      p.kind = Primitive::Kind::ellipse;
      p.axes = {r, r * rng.uniform(0.4, 1.0)};
    } else {
      p.kind = Primitive::Kind::checkerboard;
      p.color2 = random_color(rng);
      p.axes = {r, r};
      p.cells = 2 + static_cast<int>(rng.integer(0, 3));
    }
    s.primitives.push_back(std::move(p));
  }
  return s;
}

Image render_scene(const Scene& scene, int width, int height, int supersample) {
  if (supersample < 1) throw ConfigError("supersample must be at least 1");
  Image img(width, height, 3);
  struct Hit {
    const std::array<std::uint8_t, 3>* color;
    std::array<double, 3> value;
  };
  auto sample = [&](double qx, double qy) {
    const Eigen::Vector2d q(qx, qy);
    Hit h{nullptr, scene.base};
    for (auto it = scene.primitives.rbegin(); it != scene.primitives.rend() && !h.color; ++it) {
      h.color = shade(*it, q);
    }
    if (h.color) {
      for (int c = 0; c < 3; ++c) h.value[c] = (*h.color)[c];
      return h;
    }
    for (const auto& w : scene.waves) {
      const double s = std::sin(w.fx * qx + w.fy * qy + w.phase);
      for (int c = 0; c < 3; ++c) h.value[c] += w.amplitude[c] * s;
    }
    return h;
  };
  const double step = 1.0 / supersample;
  const double norm = 1.0 / (supersample * supersample);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      std::array<double, 3> acc{};
      // pixel centres sit on integer coordinates; a 2x2 probe that sees one
      // colour everywhere stands in for the full grid
      bool uniform = false;
      if (supersample > 2) {
        std::array<Hit, 4> probe{sample(x - 0.25, y - 0.25), sample(x + 0.25, y - 0.25),
                                 sample(x - 0.25, y + 0.25), sample(x + 0.25, y + 0.25)};
        uniform = true;
        for (const auto& h : probe) uniform = uniform && h.color == probe[0].color;
        if (uniform) {
          for (const auto& h : probe)
            for (int c = 0; c < 3; ++c) acc[c] += 0.25 * h.value[c];
        }
      }
      if (!uniform) {
        for (int sy = 0; sy < supersample; ++sy) {
          for (int sx = 0; sx < supersample; ++sx) {
            const auto h = sample(x - 0.5 + (sx + 0.5) * step, y - 0.5 + (sy + 0.5) * step);
            for (int c = 0; c < 3; ++c) acc[c] += h.value[c] * norm;
          }
        }
      }
      for (int c = 0; c < 3; ++c) {
        img.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(acc[c]), 0L, 255L));
      }
    }
  }
  return img;
}

Eigen::Matrix3d random_homography(Rng& rng, int width, int height) {
  const double angle = rng.uniform(-25, 25) * kPi / 180.0;
  const double scale = rng.uniform(0.8, 1.25);
  const double tx = rng.uniform(-0.1, 0.1) * width, ty = rng.uniform(-0.1, 0.1) * height;
  const double px = rng.uniform(-1e-3, 1e-3), py = rng.uniform(-1e-3, 1e-3);
  const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);

  Eigen::Matrix3d to_origin, back, rot, scl, persp;
  to_origin << 1, 0, -cx, 0, 1, -cy, 0, 0, 1;
  back << 1, 0, cx + tx, 0, 1, cy + ty, 0, 0, 1;
  rot << std::cos(angle), -std::sin(angle), 0, std::sin(angle), std::cos(angle), 0, 0, 0, 1;
  scl << scale, 0, 0, 0, scale, 0, 0, 0, 1;
  persp << 1, 0, 0, 0, 1, 0, px, py, 1;
  Eigen::Matrix3d h = back * rot * scl * persp * to_origin;
  return h / h(2, 2);
}

SyntheticPair generate_pair(std::uint64_t seed, int size, bool jitter) {
  check_input_size(size, size);
  Rng rng(mix_seed(seed, 0xA11CE));
  SyntheticPair pair;
  pair.seed = seed;
  const Scene scene = random_scene(rng, size, size);
  pair.image_a = render_scene(scene, size, size);
  if (!jitter) {
    pair.image_b = pair.image_a;
    return pair;
  }
  pair.homography = random_homography(rng, size, size);
  pair.image_b = warp_image(pair.image_a, pair.homography, size, size);

  const double contrast = rng.uniform(0.8, 1.2);
  const double brightness = rng.uniform(0.8, 1.2);
  const double sigma = rng.uniform(0.0, 2.0);
  for (auto& v : pair.image_b.data) {
    const double t = ((v - 128.0) * contrast + 128.0) * brightness + sigma * rng.normal();
    v = static_cast<std::uint8_t>(std::clamp(std::lround(t), 0L, 255L));
  }
  return pair;
}

}  // namespace alike
