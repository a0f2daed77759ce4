#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deformwarp/nn.hpp"
#include "deformwarp/nnloss.hpp"
#include "deformwarp/pose.hpp"
#include "deformwarp/warp.hpp"

namespace deformwarp {

enum class SkipMode { None, Plain, Deformable };
enum class ReconKind { L1, Perceptual, NN };
enum class Variant { Baseline, DSC, PercLoss, Full };

std::string to_string(SkipMode m);
std::string to_string(ReconKind k);
std::string to_string(Variant v);
SkipMode parse_skip_mode(const std::string& s);
ReconKind parse_recon_kind(const std::string& s);
Variant parse_variant(const std::string& s);

struct GeneratorConfig {
  int image_height = 64;
  int image_width = 32;
  /// CN64(1) then CN128(2) CN256(2) CN512(2) CN512(2) CN512(2), before the divisor.
  std::vector<int> encoder_filters{64, 128, 256, 512, 512, 512};
  /// Upsampling blocks CD512 CD512 CD512 CN256 CN128; an output C3(1) with
  /// tanh follows.
  std::vector<int> decoder_filters{512, 512, 512, 256, 128};
  int decoder_dropout_blocks = 3;
  int channel_divisor = 8;
  /// Adds one CN512(2) block to the encoder and a matching upsampling block to
  /// the decoder (the larger 64x64 geometry).
  bool extra_block = false;
  bool two_stream = true;
  SkipMode skip = SkipMode::Deformable;

  int levels() const;
  /// Filters of encoder block l / decoder block k after the divisor.
  std::vector<int> encoder_channels() const;
  std::vector<int> decoder_channels() const;
  int decoder_dropout_count() const;
  /// Spatial size of encoder level l.
  int level_height(int l) const;
  int level_width(int l) const;
  int stream1_channels() const;
  void validate() const;
};

struct DiscriminatorConfig {
  std::vector<int> filters{64, 128, 256, 512, 1};
  int channel_divisor = 8;

  std::vector<int> channels() const;
};

struct TrainConfig {
  long iterations = 500;
  double lambda = 0.01;
  int neighborhood = 3;
  ReconKind recon = ReconKind::L1;
  nn::AdamConfig adam;
  int batch_size = 4;
  std::uint64_t seed = 0;
  double sigma = kDefaultSigma;
  bool freeze_discriminator = false;

  void validate() const;
};

struct VariantConfig {
  GeneratorConfig generator;
  TrainConfig train;
};

/// Baseline: one stream over (x_a, H_a, H_b), plain skips, L1.
/// DSC: two streams, deformable skips, L1. PercLoss: DSC with the
/// element-wise feature loss. Full: DSC with the nearest-neighbour loss.
VariantConfig build_variant(Variant kind, const GeneratorConfig& geometry = {},
                            const TrainConfig& base = {});

/// Everything the networks consume for one (x_a, x_b) pair. Heat maps and
/// warp plans are computed once, up front.
struct TrainSample {
  Tensor x_a, x_b;  // (1, H, W, 3) in [-1, 1]
  Pose pose_a, pose_b;
  Tensor h_a, h_b;  // (1, H, W, 18)
  RegionPair regions;
  std::vector<WarpPlan> plans;  // one per skip level 0 .. levels-2
  std::optional<RegionMask> eval_mask;  // foreground of x_b, when known
};

TrainSample make_train_sample(Tensor x_a, const Pose& pose_a, Tensor x_b, const Pose& pose_b,
                              const GeneratorConfig& cfg, double sigma = kDefaultSigma);

/// Warp plans for every skip level of `cfg`.
std::vector<WarpPlan> build_level_plans(const RegionPair& regions, const GeneratorConfig& cfg);

struct GanInputs {
  Tensor x_a, h_a, h_b;  // batched
  std::vector<const std::vector<WarpPlan>*> plans;  // per sample
};

GanInputs batch_inputs(std::span<const TrainSample* const> samples);

void init_generator(const GeneratorConfig& cfg, nn::ParamStore& params, std::mt19937_64& rng);
void init_discriminator(const DiscriminatorConfig& cfg, nn::ParamStore& params,
                        std::mt19937_64& rng);

struct GeneratorTrace;

/// Owns the intermediate state of one generator forward pass.
class GeneratorRun {
 public:
  GeneratorRun();
  ~GeneratorRun();
  GeneratorRun(GeneratorRun&&) noexcept;
  GeneratorRun& operator=(GeneratorRun&&) noexcept;

  Tensor output;
  std::unique_ptr<GeneratorTrace> trace;
};

GeneratorRun generator_forward(const GeneratorConfig& cfg, const nn::ParamStore& params,
                               const GanInputs& in, nn::Mode mode, std::uint64_t seed);

/// Accumulates parameter gradients for dL/d(output).
void generator_backward(const GeneratorConfig& cfg, const nn::ParamStore& params,
                        const GeneratorRun& run, const Tensor& grad_output, nn::GradStore& grads);

/// Per-level deformed stream-1 features captured for inspection; empty unless
/// the skip mode is deformable. Index [level][sample].
std::vector<std::vector<Tensor>> deformed_skips(const GeneratorRun& run);
/// Undeformed stream-1 features per level (batched).
std::vector<Tensor> stream1_features(const GeneratorRun& run);

struct DiscriminatorRun {
  std::vector<double> scores;  // per sample, in (0, 1)
  Tensor patch_map;
  nn::Sequential::Trace trace;
  int input_channels = 0;
};

nn::Sequential discriminator_network(const DiscriminatorConfig& cfg);

DiscriminatorRun discriminator_forward(const DiscriminatorConfig& cfg,
                                       const nn::ParamStore& params, const Tensor& x_a,
                                       const Tensor& h_a, const Tensor& y, const Tensor& h_b);

/// Given dL/dscore per sample, accumulates parameter gradients and returns
/// dL/dy.
Tensor discriminator_backward(const DiscriminatorConfig& cfg, const nn::ParamStore& params,
                              const DiscriminatorRun& run, std::span<const double> grad_scores,
                              nn::GradStore& grads);

inline constexpr double kScoreClamp = 1e-7;

struct GanLosses {
  double loss_d = 0.0;
  double loss_g_adv = 0.0;
};

/// loss_D = -log d_real - log(1 - d_fake); loss_G = -log d_fake, with scores
/// clamped to [1e-7, 1 - 1e-7].
GanLosses gan_losses(double d_real, double d_fake);

/// Derivatives of gan_losses w.r.t. the (clamped) scores.
struct GanLossGrads {
  double dloss_d_dreal = 0.0;
  double dloss_d_dfake = 0.0;
  double dloss_g_dfake = 0.0;
};
GanLossGrads gan_loss_grads(double d_real, double d_fake);

double objective(double loss_g_adv, double recon_loss, double lambda);

struct TrainState {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  TrainConfig train;
  nn::ParamStore g_params;
  nn::ParamStore d_params;
  long iteration = 0;
};

TrainState init_train_state(const GeneratorConfig& gcfg, const TrainConfig& tcfg,
                            const DiscriminatorConfig& dcfg = {});

struct StepLosses {
  long iteration = 0;
  double loss_d = 0.0;
  double loss_g_adv = 0.0;
  double recon = 0.0;
  double loss_g = 0.0;
};

/// Reconstruction loss of `x_hat` against `x_b` for one sample, plus
/// dL/dx_hat scaled by `grad_scale`.
struct ReconResult {
  double loss = 0.0;
  Tensor grad;
};
ReconResult reconstruction_loss(ReconKind kind, const Tensor& x_hat, const Tensor& x_b,
                                const FeatureExtractor& features, NeighborhoodSpec nb,
                                double grad_scale);

/// One discriminator update on (real, fake) followed by one generator update
/// on adversarial + lambda * reconstruction. Throws TrainingDiverged when a
/// loss is not finite.
StepLosses train_step(TrainState& state, std::span<const TrainSample* const> batch,
                      const FeatureExtractor& features);

/// Batch indices for an iteration; stateless so a resumed run draws the
/// same batches.
std::vector<std::size_t> batch_indices(std::uint64_t seed, long iteration, int batch_size,
                                       std::size_t dataset_size);

/// Runs iterations until state.iteration == state.train.iterations, calling
/// `on_step` after each one.
template <typename OnStep>
void train_loop(TrainState& state, std::span<const TrainSample> dataset,
                const FeatureExtractor& features, OnStep&& on_step) {
  std::vector<const TrainSample*> batch;
  while (state.iteration < state.train.iterations) {
    batch.clear();
    for (std::size_t i : batch_indices(state.train.seed, state.iteration, state.train.batch_size,
                                       dataset.size())) {
      batch.push_back(&dataset[i]);
    }
    const StepLosses l = train_step(state, batch, features);
    on_step(l);
  }
}

/// Eval-mode generation for one sample.
Tensor generate(const TrainState& state, const TrainSample& sample);

}  // namespace deformwarp
