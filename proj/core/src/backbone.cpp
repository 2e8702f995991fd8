#include "alike/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "alike/ops.hpp"

namespace alike {

void ModelConfig::validate() const {
  for (int c : {c1, c2, c3, c4, dim}) {
    if (c <= 0) throw ConfigError("model '" + name + "': channel counts must be positive");
  }
  if (dim % 4 != 0) throw ConfigError("model '" + name + "': dim must be divisible by 4");
  if (n_head < 1) throw ConfigError("model '" + name + "': n_head must be at least 1");
}

const std::vector<std::string>& ModelConfig::preset_names() {
  static const std::vector<std::string> names{"tiny", "small", "normal", "large"};
  return names;
}

ModelConfig ModelConfig::preset(std::string_view name) {
  if (name == "tiny") return {"tiny", 8, 16, 32, 64, 64, 1};
  if (name == "small") return {"small", 8, 16, 48, 96, 96, 1};
  if (name == "normal") return {"normal", 16, 32, 64, 128, 128, 1};
  if (name == "large") return {"large", 32, 64, 128, 128, 128, 2};
  throw ConfigError("unknown model preset '" + std::string(name) + "'");
}

void check_input_size(std::int64_t height, std::int64_t width) {
  if (height <= 0 || width <= 0 || height % kInputMultiple != 0 || width % kInputMultiple != 0) {
    auto pad = [](std::int64_t v) {
      return (kInputMultiple - v % kInputMultiple) % kInputMultiple;
    };
    throw InputError("image " + std::to_string(width) + "x" + std::to_string(height) +
                     " is not a multiple of 32; pad by " + std::to_string(pad(width)) +
                     " columns and " + std::to_string(pad(height)) + " rows");
  }
}

namespace {

std::int64_t conv_params(std::int64_t in, std::int64_t out, std::int64_t k) {
  return out * in * k * k + out;
}

std::int64_t block_params(std::int64_t in, std::int64_t out) {
  std::int64_t n = conv_params(in, out, 3) + conv_params(out, out, 3);
  if (in != out) n += conv_params(in, out, 1);
  return n;
}

struct Layer {
  int kernel;
  int stride;
};

// Encoder layers in order; each block ends after the listed index.
const std::vector<Layer>& encoder_layers() {
  static const std::vector<Layer> layers{
      {3, 1}, {3, 1},          // block1
      {2, 2}, {3, 1}, {3, 1},  // block2: pool /2 + basic block
      {4, 4}, {3, 1}, {3, 1},  // block3: pool /4 + basic block
      {4, 4}, {3, 1}, {3, 1},  // block4: pool /4 + basic block
  };
  return layers;
}

constexpr int kBlockEnd[] = {2, 5, 8, 11};

// splitmix64-based uniform in [0,1), independent of the standard library's
// distribution implementations.
class InitRng {
 public:
  explicit InitRng(std::uint64_t seed) : state_(seed) {}
  double uniform() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    z ^= z >> 31;
    return double(z >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

}  // namespace

std::int64_t count_params(const ModelConfig& config) {
  config.validate();
  const std::int64_t q = config.dim / 4;
  std::int64_t n = conv_params(3, config.c1, 3) + conv_params(config.c1, config.c1, 3);
  n += block_params(config.c1, config.c2);
  n += block_params(config.c2, config.c3);
  n += block_params(config.c3, config.c4);
  for (int c : {config.c1, config.c2, config.c3, config.c4}) n += conv_params(c, q, 1);
  for (int i = 0; i + 1 < config.n_head; ++i) n += conv_params(config.dim, config.dim, 1);
  n += conv_params(config.dim, config.dim + 1, 1);
  return n;
}

std::int64_t count_flops(const ModelConfig& config, std::int64_t height, std::int64_t width) {
  config.validate();
  check_input_size(height, width);
  // conv: MACs + bias adds (+ ReLU when gated)
  auto conv = [](std::int64_t pixels, std::int64_t in, std::int64_t out, std::int64_t k,
                 bool relu) {
    return pixels * out * (in * k * k + 1 + (relu ? 1 : 0));
  };
  auto block = [&](std::int64_t pixels, std::int64_t in, std::int64_t out) {
    std::int64_t f = conv(pixels, in, out, 3, true) + conv(pixels, out, out, 3, false);
    if (in != out) f += conv(pixels, in, out, 1, false);
    return f + 2 * pixels * out;  // residual add + ReLU
  };
  auto pool = [](std::int64_t out_pixels, std::int64_t channels, std::int64_t k) {
    return out_pixels * channels * (k * k - 1);
  };
  const std::int64_t p1 = height * width;
  const std::int64_t p2 = p1 / 4, p3 = p2 / 16, p4 = p3 / 16;
  const std::int64_t q = config.dim / 4;
  std::int64_t f = conv(p1, 3, config.c1, 3, true) + conv(p1, config.c1, config.c1, 3, true);
  f += pool(p2, config.c1, 2) + block(p2, config.c1, config.c2);
  f += pool(p3, config.c2, 4) + block(p3, config.c2, config.c3);
  f += pool(p4, config.c3, 4) + block(p4, config.c3, config.c4);
  f += conv(p1, config.c1, q, 1, true) + conv(p2, config.c2, q, 1, true) +
       conv(p3, config.c3, q, 1, true) + conv(p4, config.c4, q, 1, true);
  f += 3 * 4 * p1 * q;  // bilinear upsampling of three levels, four taps each
  for (int i = 0; i + 1 < config.n_head; ++i) f += conv(p1, config.dim, config.dim, 1, true);
  f += conv(p1, config.dim, config.dim + 1, 1, false);
  f += p1 * 4;               // sigmoid
  f += p1 * 3 * config.dim;  // square-accumulate, divide, plus norm
  return f;
}

int receptive_field(const ModelConfig& config, int blocks) {
  config.validate();
  if (blocks < 1 || blocks > 4) throw ConfigError("receptive_field: blocks must be in 1..4");
  const auto& layers = encoder_layers();
  int r = 1, j = 1;
  for (int i = 0; i < kBlockEnd[blocks - 1]; ++i) {
    r += (layers[static_cast<std::size_t>(i)].kernel - 1) * j;
    j *= layers[static_cast<std::size_t>(i)].stride;
  }
  return r;
}

template <typename T>
Model<T>::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const int q = config_.dim / 4;
  add_conv("block1.conv1", 3, config_.c1, 3);
  add_conv("block1.conv2", config_.c1, config_.c1, 3);
  const int widths[] = {config_.c1, config_.c2, config_.c3, config_.c4};
  for (int b = 1; b < 4; ++b) {
    const std::string prefix = "block" + std::to_string(b + 1);
    add_conv(prefix + ".conv1", widths[b - 1], widths[b], 3);
    add_conv(prefix + ".conv2", widths[b], widths[b], 3);
    if (widths[b - 1] != widths[b]) add_conv(prefix + ".shortcut", widths[b - 1], widths[b], 1);
  }
  for (int b = 0; b < 4; ++b) add_conv("agg" + std::to_string(b + 1), widths[b], q, 1);
  for (int i = 0; i < config_.n_head; ++i) {
    const int out = (i + 1 == config_.n_head) ? config_.dim + 1 : config_.dim;
    add_conv("head." + std::to_string(i), config_.dim, out, 1);
  }

  InitRng rng(seed);
  for (auto& p : params_) {
    if (p.value.rank() == 4) {
      const double fan_in = double(p.value.dim(1) * p.value.dim(2) * p.value.dim(3));
      const double bound = std::sqrt(6.0 / fan_in);
      for (auto& v : p.value.storage()) v = T((2.0 * rng.uniform() - 1.0) * bound);
    }
  }
}

template <typename T>
void Model<T>::add_conv(const std::string& name, int in, int out, int kernel) {
  Parameter<T> w{name + ".weight", Tensor<T>({out, in, kernel, kernel}), {}};
  Parameter<T> b{name + ".bias", Tensor<T>({out}), {}};
  params_.push_back(std::move(w));
  params_.push_back(std::move(b));
}

template <typename T>
Parameter<T>& Model<T>::parameter(std::string_view name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
const Parameter<T>& Model<T>::parameter(std::string_view name) const {
  return const_cast<Model*>(this)->parameter(name);
}

template <typename T>
std::int64_t Model<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += static_cast<std::int64_t>(p.value.size());
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void Model<T>::set_zero() {
  for (auto& p : params_) p.value.fill(T(0));
}

template <typename T>
ModelVars<T> Model<T>::forward(Graph<T>& g, Var<T> image, bool track_grad) {
  const Tensor<T>& iv = image.value();
  if (iv.rank() != 4 || iv.dim(0) != 1 || iv.dim(1) != 3) {
    throw InputError("model input must be [1,3,H,W], got " + shape_string(iv.shape()));
  }
  const auto h = iv.dim(2), w = iv.dim(3);
  check_input_size(h, w);

  std::map<std::string, Var<T>, std::less<>> vars;
  for (auto& p : params_) {
    vars[p.name] = track_grad ? g.parameter(p) : g.constant(p.value);
  }
  auto conv = [&](Var<T> x, const std::string& name, int padding) {
    return ops::conv2d(x, vars.at(name + ".weight"), vars.at(name + ".bias"), 1, padding);
  };
  auto basic_block = [&](Var<T> x, const std::string& prefix) {
    Var<T> y = ops::relu(conv(x, prefix + ".conv1", 1));
    y = conv(y, prefix + ".conv2", 1);
    Var<T> skip = vars.count(prefix + ".shortcut.weight") ? conv(x, prefix + ".shortcut", 0) : x;
    return ops::relu(ops::add(y, skip));
  };

  Var<T> x1 = ops::relu(conv(image, "block1.conv1", 1));
  x1 = ops::relu(conv(x1, "block1.conv2", 1));
  Var<T> x2 = basic_block(ops::maxpool2d(x1, 2), "block2");
  Var<T> x3 = basic_block(ops::maxpool2d(x2, 4), "block3");
  Var<T> x4 = basic_block(ops::maxpool2d(x3, 4), "block4");

  std::vector<Var<T>> levels;
  const Var<T> feats[] = {x1, x2, x3, x4};
  for (int b = 0; b < 4; ++b) {
    Var<T> a = ops::relu(conv(feats[b], "agg" + std::to_string(b + 1), 0));
    if (b > 0) a = ops::upsample_bilinear(a, h, w);
    levels.push_back(a);
  }
  Var<T> y = ops::concat_channels(levels);
  for (int i = 0; i < config_.n_head; ++i) {
    y = conv(y, "head." + std::to_string(i), 0);
    if (i + 1 < config_.n_head) y = ops::relu(y);
  }
  const std::int64_t dim = config_.dim;
  Var<T> desc = ops::l2_normalize_channels(ops::slice_channels(y, 0, dim));
  Var<T> score = ops::sigmoid(ops::slice_channels(y, dim, dim + 1));
  return {ops::reshape(score, {h, w}), ops::reshape(desc, {dim, h, w})};
}

template <typename T>
ModelOutput<T> Model<T>::infer(const Tensor<T>& image) {
  Graph<T> g;
  auto out = forward(g, g.constant(image), false);
  return {out.score_map.value(), out.descriptor_map.value()};
}

template <typename T>
std::vector<NamedTensor> Model<T>::to_named_tensors() const {
  std::vector<NamedTensor> out;
  for (const auto& p : params_) out.push_back({p.name, p.value.template cast<float>()});
  return out;
}

template <typename T>
Model<T> Model<T>::from_named_tensors(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor<float>*, std::less<>> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.value;
  auto extent = [&](const std::string& name, int axis) -> int {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw InputError("checkpoint is missing tensor '" + name + "'");
    if (it->second->rank() != 4) throw InputError("tensor '" + name + "' is not a conv weight");
    return static_cast<int>(it->second->dim(axis));
  };
  ModelConfig cfg;
  cfg.c1 = extent("block1.conv1.weight", 0);
  cfg.c2 = extent("block2.conv1.weight", 0);
  cfg.c3 = extent("block3.conv1.weight", 0);
  cfg.c4 = extent("block4.conv1.weight", 0);
  cfg.n_head = 0;
  while (by_name.count("head." + std::to_string(cfg.n_head) + ".weight")) ++cfg.n_head;
  if (cfg.n_head == 0) throw InputError("checkpoint has no head layers");
  cfg.dim = extent("head." + std::to_string(cfg.n_head - 1) + ".weight", 0) - 1;
  cfg.name = "custom";
  for (const auto& name : ModelConfig::preset_names()) {
    auto p = ModelConfig::preset(name);
    p.name = cfg.name;
    if (p == cfg) cfg.name = name;
  }
  Model model(cfg, 0);
  if (tensors.size() != model.params_.size()) {
    throw InputError("checkpoint has " + std::to_string(tensors.size()) + " tensors, model '" +
                     cfg.name + "' expects " + std::to_string(model.params_.size()));
  }
  for (auto& p : model.params_) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw InputError("checkpoint is missing tensor '" + p.name + "'");
    if (it->second->shape() != p.value.shape()) {
      throw InputError("tensor '" + p.name + "' has shape " + shape_string(it->second->shape()) +
                       ", expected " + shape_string(p.value.shape()));
    }
    p.value = it->second->template cast<T>();
  }
  return model;
}

template <typename T>
void Model<T>::save(const std::filesystem::path& path) const {
  write_checkpoint(path, to_named_tensors());
}

template <typename T>
Model<T> Model<T>::load(const std::filesystem::path& path) {
  return from_named_tensors(read_checkpoint(path));
}

template class Model<float>;
template class Model<double>;

}  // namespace alike
