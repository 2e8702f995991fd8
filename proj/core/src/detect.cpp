#include "alike/detect.hpp"

#include <algorithm>
#include <numeric>
#include <string>

namespace alike {

void DetectorConfig::validate() const {
  if (window < 3 || window % 2 == 0) {
    throw ConfigError("detector window must be odd and >= 3, got " + std::to_string(window));
  }
  if (!(t_det > 0.0)) throw ConfigError("detector temperature must be positive");
  if (!(threshold >= 0.0 && threshold < 1.0)) {
    throw ConfigError("detector threshold must lie in [0,1)");
  }
  if (top_k < 1) throw ConfigError("detector top_k must be at least 1");
  if (margin < radius()) {
    throw ConfigError("detector margin " + std::to_string(margin) + " is smaller than (N-1)/2 = " +
                      std::to_string(radius()));
  }
}

template <typename T>
std::vector<PixelPos> nms(const Tensor<T>& score_map, const DetectorConfig& config) {
  config.validate();
  if (score_map.rank() != 2) {
    throw ConfigError("nms: score map must be [H,W], got " + shape_string(score_map.shape()));
  }
  const int h = static_cast<int>(score_map.dim(0));
  const int w = static_cast<int>(score_map.dim(1));
  const int r = config.radius();
  const int edge = config.margin + r;
  const T* s = score_map.data();

  std::vector<PixelPos> found;
  for (int y = edge; y < h - edge; ++y) {
    for (int x = edge; x < w - edge; ++x) {
      const T c = s[y * w + x];
      if (!(double(c) > config.threshold)) continue;
      bool keep = true;
      for (int yy = std::max(0, y - r); keep && yy <= std::min(h - 1, y + r); ++yy) {
        for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
          const T o = s[yy * w + xx];
          const bool earlier = yy < y || (yy == y && xx < x);
          if (o > c || (o == c && earlier)) {
            keep = false;
            break;
          }
        }
      }
      if (keep) found.push_back({x, y});
    }
  }
  std::stable_sort(found.begin(), found.end(), [&](const PixelPos& a, const PixelPos& b) {
    return s[a.y * w + a.x] > s[b.y * w + b.x];
  });
  if (found.size() > static_cast<std::size_t>(config.top_k)) {
    found.resize(static_cast<std::size_t>(config.top_k));
  }
  return found;
}

template <typename T>
Var<T> softargmax_offsets(Var<T> windows, int window, double t_det, Var<T>* probs) {
  Graph<T>& g = *windows.graph;
  const int r = window / 2;
  const std::int64_t nn = std::int64_t(window) * window;
  if (windows.value().rank() != 2 || windows.dim(1) != nn) {
    throw ConfigError("softargmax: windows must be [K," + std::to_string(nn) + "]");
  }
  Tensor<T> grid({nn, 2});
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const auto i = (dy + r) * window + (dx + r);
      grid[static_cast<std::size_t>(i * 2)] = T(dx);
      grid[static_cast<std::size_t>(i * 2 + 1)] = T(dy);
    }
  // softmax_rows shifts by the row maximum without differentiating through it
  Var<T> p = ops::softmax_rows(ops::mul_scalar(windows, T(1.0 / t_det)));
  if (probs) *probs = p;
  return ops::matmul(p, g.constant(std::move(grid)));
}

template <typename T>
std::array<T, 2> softargmax_offset(std::span<const T> patch, int window, double t_det) {
  const std::int64_t nn = std::int64_t(window) * window;
  if (static_cast<std::int64_t>(patch.size()) != nn) {
    throw ConfigError("softargmax: patch must hold N*N values");
  }
  Graph<T> g;
  Var<T> x = g.constant(Tensor<T>({1, nn}, std::vector<T>(patch.begin(), patch.end())));
  const Tensor<T>& o = softargmax_offsets(x, window, t_det).value();
  return {o[0], o[1]};
}

template <typename T>
DetectionVars<T> detect_graph(Var<T> score_map, const std::vector<PixelPos>& seeds,
                              const DetectorConfig& config) {
  config.validate();
  Graph<T>& g = *score_map.graph;
  const Tensor<T>& sv = score_map.value();
  if (sv.rank() != 2) throw ConfigError("detect: score map must be [H,W]");
  const auto h = sv.dim(0), w = sv.dim(1);
  const auto k = static_cast<std::int64_t>(seeds.size());

  DetectionVars<T> d;
  d.seeds = seeds;
  d.windows = ops::gather_windows(score_map, seeds, config.window);
  d.offsets = softargmax_offsets(d.windows, config.window, config.t_det, &d.probs);
  Tensor<T> base({k, 2});
  for (std::int64_t i = 0; i < k; ++i) {
    base[static_cast<std::size_t>(i * 2)] = T(seeds[static_cast<std::size_t>(i)].x);
    base[static_cast<std::size_t>(i * 2 + 1)] = T(seeds[static_cast<std::size_t>(i)].y);
  }
  d.coords = ops::add(g.constant(std::move(base)), d.offsets);
  d.scores = ops::reshape(ops::bilinear_sample(ops::reshape(score_map, {1, h, w}), d.coords), {k});
  return d;
}

template <typename T>
std::vector<Keypoint> detect_keypoints(const Tensor<T>& score_map, const DetectorConfig& config) {
  const auto seeds = nms(score_map, config);
  Graph<T> g;
  const auto d = detect_graph(g.constant(score_map), seeds, config);
  const Tensor<T>& c = d.coords.value();
  const Tensor<T>& s = d.scores.value();
  std::vector<Keypoint> out(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    out[i].u = double(c[i * 2]);
    out[i].v = double(c[i * 2 + 1]);
    out[i].score = double(s[i]);
  }
  return out;
}

template <typename T>
Var<T> sample_descriptors(Var<T> descriptor_map, Var<T> coords) {
  return ops::l2_normalize_rows(ops::bilinear_sample(descriptor_map, coords));
}

template <typename T>
Tensor<T> keypoint_coords(const std::vector<Keypoint>& keypoints) {
  Tensor<T> c({static_cast<std::int64_t>(keypoints.size()), 2});
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    c[i * 2] = T(keypoints[i].u);
    c[i * 2 + 1] = T(keypoints[i].v);
  }
  return c;
}

template <typename T>
Tensor<T> sample_descriptors(const Tensor<T>& descriptor_map, const std::vector<Keypoint>& keypoints) {
  Graph<T> g;
  return sample_descriptors(g.constant(descriptor_map), g.constant(keypoint_coords<T>(keypoints)))
      .value();
}

template <typename T>
void attach_descriptors(std::vector<Keypoint>& keypoints, const Tensor<T>& descriptor_map) {
  const Tensor<T> d = sample_descriptors(descriptor_map, keypoints);
  const auto dim = static_cast<std::size_t>(descriptor_map.dim(0));
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    keypoints[i].descriptor.assign(d.data() + i * dim, d.data() + (i + 1) * dim);
  }
}

template <typename T>
SimilarityMap<T> similarity_map(std::span<const T> descriptor, const Tensor<T>& descriptor_map,
                                T outlier_bin) {
  if (descriptor_map.rank() != 3) throw UsageError("similarity_map: map must be [dim,H,W]");
  const auto dim = descriptor_map.dim(0), h = descriptor_map.dim(1), w = descriptor_map.dim(2);
  if (static_cast<std::int64_t>(descriptor.size()) != dim) {
    throw UsageError("similarity_map: descriptor has " + std::to_string(descriptor.size()) +
                     " components, map has " + std::to_string(dim));
  }
  SimilarityMap<T> out{Tensor<T>({h, w}), outlier_bin};
  const std::int64_t plane = h * w;
  for (std::int64_t c = 0; c < dim; ++c) {
    const T* m = descriptor_map.data() + c * plane;
    const T q = descriptor[static_cast<std::size_t>(c)];
    for (std::int64_t i = 0; i < plane; ++i) out.values[static_cast<std::size_t>(i)] += q * m[i];
  }
  return out;
}

Tensor<float> descriptor_matrix(const std::vector<Keypoint>& keypoints) {
  const std::size_t dim = keypoints.empty() ? 0 : keypoints.front().descriptor.size();
  Tensor<float> d({static_cast<std::int64_t>(keypoints.size()), static_cast<std::int64_t>(dim)});
  for (std::size_t i = 0; i < keypoints.size(); ++i) {
    if (keypoints[i].descriptor.size() != dim || dim == 0) {
      throw UsageError("keypoint " + std::to_string(i) + " has no descriptor of dimension " +
                       std::to_string(dim));
    }
    std::copy(keypoints[i].descriptor.begin(), keypoints[i].descriptor.end(), d.data() + i * dim);
  }
  return d;
}

#define ALIKE_INSTANTIATE_DETECT(T)                                                             \
  template std::vector<PixelPos> nms(const Tensor<T>&, const DetectorConfig&);                \
  template Var<T> softargmax_offsets(Var<T>, int, double, Var<T>*);                            \
  template std::array<T, 2> softargmax_offset(std::span<const T>, int, double);                \
  template DetectionVars<T> detect_graph(Var<T>, const std::vector<PixelPos>&,                 \
                                         const DetectorConfig&);                               \
  template std::vector<Keypoint> detect_keypoints(const Tensor<T>&, const DetectorConfig&);    \
  template Var<T> sample_descriptors(Var<T>, Var<T>);                                          \
  template Tensor<T> sample_descriptors(const Tensor<T>&, const std::vector<Keypoint>&);       \
  template void attach_descriptors(std::vector<Keypoint>&, const Tensor<T>&);                  \
  template SimilarityMap<T> similarity_map(std::span<const T>, const Tensor<T>&, T);           \
  template Tensor<T> keypoint_coords(const std::vector<Keypoint>&);

ALIKE_INSTANTIATE_DETECT(float)
ALIKE_INSTANTIATE_DETECT(double)

}  // namespace alike
