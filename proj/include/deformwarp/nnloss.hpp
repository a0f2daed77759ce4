#pragma once

#include <cstdint>
#include <vector>

#include "deformwarp/nn.hpp"
#include "deformwarp/tensor.hpp"

namespace deformwarp {

/// Odd window side n; offsets range over [-(n-1)/2, (n-1)/2] on both axes.
struct NeighborhoodSpec {
  int n = 3;

  explicit NeighborhoodSpec(int side = 3);
  int radius() const { return (n - 1) / 2; }
};

/// Best offset (dy, dx) per pixel from a nearest-neighbour forward pass.
struct ArgminField {
  int height = 0;
  int width = 0;
  std::vector<std::int8_t> dy;
  std::vector<std::int8_t> dx;
};

struct NnLossResult {
  double loss = 0.0;
  ArgminField argmin;
};

/// Reference evaluation: for each pixel, a direct scan of the window.
double nn_loss_bruteforce(const Tensor& c_hat, const Tensor& c_b, NeighborhoodSpec nb);

/// Shifted-tensor evaluation: n^2 shifted copies of c_b with out-of-image
/// sentinels, per-offset channel sums, pointwise min, then a global sum.
NnLossResult nn_loss_shifted(const Tensor& c_hat, const Tensor& c_b, NeighborhoodSpec nb);

/// Subgradient of the loss w.r.t. c_hat, scaled by `grad`.
Tensor nn_loss_backward(double grad, const ArgminField& argmin, const Tensor& c_hat,
                        const Tensor& c_b);

/// Unnormalized sum of absolute differences.
double l1_loss(const Tensor& x_hat, const Tensor& x_b);
Tensor l1_loss_backward(double grad, const Tensor& x_hat, const Tensor& x_b);

/// Element-to-element feature-space L1; the n = 1 case of the NN loss.
double perceptual_elementwise_loss(const Tensor& c_hat, const Tensor& c_b);
Tensor perceptual_elementwise_backward(double grad, const Tensor& c_hat, const Tensor& c_b);

/// Patch descriptor g(.): two stride-1 3x3 convolutions with ReLU, so every
/// output pixel sees a 5x5 input patch. Weights are frozen.
class FeatureExtractor {
 public:
  static constexpr int kDefaultChannels = 16;
  static constexpr std::uint64_t kDefaultSeed = 0x5eed0c0117ULL;

  /// Random stand-in with fixed-seed weights.
  static FeatureExtractor standin(int hidden = kDefaultChannels, int out = kDefaultChannels,
                                  std::uint64_t seed = kDefaultSeed);

  /// Externally supplied weights: "conv1/w" (3,3,3,h), "conv1/b" (1,1,1,h),
  /// "conv2/w" (3,3,h,o), "conv2/b" (1,1,1,o).
  static FeatureExtractor from_params(nn::ParamStore params);

  int out_channels() const { return out_channels_; }
  const nn::ParamStore& params() const { return params_; }

  Tensor extract(const Tensor& image) const;
  Tensor extract(const Tensor& image, nn::Sequential::Trace& trace) const;
  /// dL/dimage given dL/dfeatures; the weights themselves receive no update.
  Tensor backward(const nn::Sequential::Trace& trace, const Tensor& grad_features) const;

 private:
  FeatureExtractor(nn::Sequential net, nn::ParamStore params, int out_channels)
      : net_(std::move(net)), params_(std::move(params)), out_channels_(out_channels) {}

  static nn::Sequential make_net(int hidden, int out);

  nn::Sequential net_;
  nn::ParamStore params_;
  int out_channels_ = 0;
};

}  // namespace deformwarp
