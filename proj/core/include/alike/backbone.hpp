#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "alike/checkpoint.hpp"
#include "alike/graph.hpp"

namespace alike {

/// Channel widths of the four encoder blocks, descriptor width and head depth.
struct ModelConfig {
  std::string name = "custom";
  int c1 = 16, c2 = 32, c3 = 64, c4 = 128;
  int dim = 128;
  int n_head = 1;

  /// Throws ConfigError for non-positive widths or dim not divisible by 4.
  void validate() const;

  /// One of "tiny", "small", "normal", "large".
  static ModelConfig preset(std::string_view name);
  static const std::vector<std::string>& preset_names();

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Cumulative downsampling of the encoder (2 * 4 * 4).
inline constexpr int kInputMultiple = 32;

/// Throws InputError when H or W is not a multiple of 32, naming the padding needed.
void check_input_size(std::int64_t height, std::int64_t width);

/// Number of weight and bias scalars of the network built for `config`.
std::int64_t count_params(const ModelConfig& config);

/// Floating-point operations of one forward pass at height x width.
///
/// A multiply-accumulate counts once, the convention under which the
/// published complexity numbers for this architecture are reported. Bias
/// additions, ReLU, residual additions, max-pooling comparisons, bilinear
/// taps, sigmoid and L2 normalisation add their per-element costs.
std::int64_t count_flops(const ModelConfig& config, std::int64_t height, std::int64_t width);

/// Receptive field (pixels) of the output of encoder block `blocks` (1..4),
/// from the recurrence r += (k-1)*j, j *= stride.
int receptive_field(const ModelConfig& config, int blocks = 4);

template <typename T>
struct ModelVars {
  Var<T> score_map;       // [H,W], sigmoid range
  Var<T> descriptor_map;  // [dim,H,W], unit norm per pixel
};

template <typename T>
struct ModelOutput {
  Tensor<T> score_map;       // [H,W]
  Tensor<T> descriptor_map;  // [dim,H,W]
};

/// Encoder, multi-level aggregation and 1x1 extraction head.
template <typename T>
class Model {
 public:
  /// He-uniform weights, zero biases, deterministic in `seed`.
  explicit Model(ModelConfig config, std::uint64_t seed = 0);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  Parameter<T>& parameter(std::string_view name);
  const Parameter<T>& parameter(std::string_view name) const;
  std::int64_t parameter_count() const;

  void zero_grad();
  void set_zero();

  /// Builds the network on `g` for an image [1,3,H,W]. With `track_grad`
  /// the parameters are attached as gradient-accumulating leaves.
  ModelVars<T> forward(Graph<T>& g, Var<T> image, bool track_grad = true);

  /// Forward pass without gradient tracking.
  ModelOutput<T> infer(const Tensor<T>& image);

  std::vector<NamedTensor> to_named_tensors() const;
  /// Rebuilds the model, inferring its configuration from tensor shapes.
  static Model from_named_tensors(const std::vector<NamedTensor>& tensors);

  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

 private:
  void add_conv(const std::string& name, int in, int out, int kernel);

  ModelConfig config_;
  std::vector<Parameter<T>> params_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace alike
