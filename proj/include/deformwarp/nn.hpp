#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "deformwarp/tensor.hpp"

namespace deformwarp::nn {

enum class LayerKind { Conv, UpConv, InstanceNorm, Relu, Tanh, Sigmoid, Dropout, Concat };

enum class Mode { Train, Eval };

/// One primitive layer. Kernel is 4 for stride-2 (up)convolutions and 3 for
/// stride 1; padding is 1 in both cases so stride 2 exactly halves (conv) or
/// doubles (upconv) the spatial size.
struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::string name;  // parameter prefix
  int filters = 0;
  int stride = 1;
  bool bias = true;
  double dropout_rate = 0.5;

  int kernel() const { return stride == 2 ? 4 : 3; }
  static constexpr int padding() { return 1; }
};

inline constexpr double kInstanceNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

struct AdamState {
  Tensor m;
  Tensor v;
  long step = 0;
};

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using GradStore = std::map<std::string, Tensor>;

/// Named trainable tensors, each paired with its Adam state.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return values_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);
  const AdamState& adam(const std::string& name) const;
  AdamState& adam_mut(const std::string& name);

  const std::map<std::string, Tensor>& values() const { return values_; }
  std::size_t parameter_count() const;

  /// Zero-filled gradient buffers with the parameters' shapes.
  GradStore zero_grads() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b);

 private:
  std::map<std::string, Tensor> values_;
  std::map<std::string, AdamState> adam_;
};

void adam_step(ParamStore& params, const GradStore& grads, const AdamConfig& cfg);

/// Creates the parameters `spec` needs for `in_channels` inputs and returns
/// the layer's output channel count.
int init_layer(const LayerSpec& spec, int in_channels, ParamStore& params, std::mt19937_64& rng);

/// State saved by layer_forward for the matching layer_backward.
struct LayerContext {
  LayerKind kind = LayerKind::Relu;
  Mode mode = Mode::Eval;
  std::vector<Tensor> inputs;
  Tensor output;
  std::vector<double> cols;      // im2col buffer (conv) or normalized input (instance norm)
  std::vector<double> inv_std;   // per (sample, channel), instance norm
  std::vector<std::uint8_t> keep;  // dropout mask
};

struct LayerOutput {
  Tensor output;
  LayerContext ctx;
};

LayerOutput layer_forward(const LayerSpec& spec, const ParamStore& params,
                          std::span<const Tensor> inputs, Mode mode, std::uint64_t seed);
LayerOutput layer_forward(const LayerSpec& spec, const ParamStore& params, const Tensor& input,
                          Mode mode, std::uint64_t seed);

/// Gradients with respect to each forward input; parameter gradients are
/// accumulated into `grads`.
std::vector<Tensor> layer_backward(const LayerSpec& spec, const ParamStore& params,
                                   const LayerContext& ctx, const Tensor& grad_out,
                                   GradStore& grads);

/// Composite block notation: C (conv-ReLU), CN (conv-IN-ReLU), CD (CN plus
/// dropout).
enum class BlockKind { C, CN, CD };
enum class Activation { Relu, Tanh, Sigmoid };

struct BlockSpec {
  BlockKind kind = BlockKind::C;
  int filters = 0;
  int stride = 1;
  bool transpose = false;  // upsampling block
  Activation activation = Activation::Relu;
};

std::vector<LayerSpec> expand_block(const BlockSpec& block, const std::string& name);

/// A chain of single-input layers.
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {}

  void append(const std::vector<LayerSpec>& layers);
  const std::vector<LayerSpec>& layers() const { return layers_; }

  /// Registers parameters; returns output channels.
  int init(int in_channels, ParamStore& params, std::mt19937_64& rng) const;

  struct Trace {
    std::vector<LayerContext> contexts;
  };

  Tensor forward(const ParamStore& params, const Tensor& input, Mode mode, std::uint64_t seed,
                 Trace* trace) const;
  Tensor backward(const ParamStore& params, const Trace& trace, const Tensor& grad_out,
                  GradStore& grads) const;

 private:
  std::vector<LayerSpec> layers_;
};

/// Spatial output size of a layer for an input of size `in`.
int output_extent(const LayerSpec& spec, int in);

/// Deterministic sub-seed for (seed, a, b).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace deformwarp::nn
