#include "deformwarp/gan.hpp"

#include <algorithm>
#include <cmath>

#include "deformwarp/error.hpp"

namespace deformwarp {

std::string to_string(SkipMode m) {
  switch (m) {
    case SkipMode::None: return "none";
    case SkipMode::Plain: return "plain";
    case SkipMode::Deformable: return "deformable";
  }
  return "?";
}

std::string to_string(ReconKind k) {
  switch (k) {
    case ReconKind::L1: return "l1";
    case ReconKind::Perceptual: return "perceptual";
    case ReconKind::NN: return "nn";
  }
  return "?";
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::DSC: return "dsc";
    case Variant::PercLoss: return "percloss";
    case Variant::Full: return "full";
  }
  return "?";
}

SkipMode parse_skip_mode(const std::string& s) {
  if (s == "none") return SkipMode::None;
  if (s == "plain") return SkipMode::Plain;
  if (s == "deformable") return SkipMode::Deformable;
  throw InvalidArgument("unknown skip mode '" + s + "'");
}

ReconKind parse_recon_kind(const std::string& s) {
  if (s == "l1") return ReconKind::L1;
  if (s == "perceptual") return ReconKind::Perceptual;
  if (s == "nn") return ReconKind::NN;
  throw InvalidArgument("unknown reconstruction loss '" + s + "'");
}

Variant parse_variant(const std::string& s) {
  if (s == "baseline") return Variant::Baseline;
  if (s == "dsc") return Variant::DSC;
  if (s == "percloss") return Variant::PercLoss;
  if (s == "full") return Variant::Full;
  throw InvalidArgument("unknown variant '" + s + "'");
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

int divide_channels(int filters, int divisor) { return std::max(1, filters / divisor); }

}  // namespace

int GeneratorConfig::levels() const {
  return static_cast<int>(encoder_filters.size()) + (extra_block ? 1 : 0);
}

std::vector<int> GeneratorConfig::encoder_channels() const {
  std::vector<int> out;
  for (int f : encoder_filters) out.push_back(divide_channels(f, channel_divisor));
  if (extra_block) out.push_back(divide_channels(512, channel_divisor));
  return out;
}

std::vector<int> GeneratorConfig::decoder_channels() const {
  std::vector<int> out;
  for (std::size_t k = 0; k < decoder_filters.size(); ++k) {
    out.push_back(divide_channels(decoder_filters[k], channel_divisor));
    if (extra_block && static_cast<int>(k) + 1 == decoder_dropout_blocks) {
      out.push_back(divide_channels(512, channel_divisor));
    }
  }
  return out;
}

int GeneratorConfig::decoder_dropout_count() const { return decoder_dropout_blocks; }

int GeneratorConfig::level_height(int l) const { return image_height >> l; }
int GeneratorConfig::level_width(int l) const { return image_width >> l; }

int GeneratorConfig::stream1_channels() const {
  return 3 + kNumJoints + (two_stream ? 0 : kNumJoints);
}

void GeneratorConfig::validate() const {
  if (encoder_filters.size() < 2) throw InvalidArgument("generator needs at least two encoder blocks");
  if (decoder_filters.size() + 1 != encoder_filters.size()) {
    throw InvalidArgument("generator needs one decoder block per stride-2 encoder block");
  }
  if (channel_divisor < 1) throw InvalidArgument("channel divisor must be >= 1");
  if (decoder_dropout_blocks < 0 || decoder_dropout_blocks > static_cast<int>(decoder_filters.size())) {
    throw InvalidArgument("decoder dropout block count out of range");
  }
  const int down = levels() - 1;
  if (image_height < 1 || image_width < 1 || image_height % (1 << down) != 0 ||
      image_width % (1 << down) != 0) {
    throw InvalidArgument("image " + std::to_string(image_height) + "x" +
                          std::to_string(image_width) + " must be divisible by 2^" +
                          std::to_string(down));
  }
}

std::vector<int> DiscriminatorConfig::channels() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < filters.size(); ++i) {
    out.push_back(i + 1 == filters.size() ? filters[i] : divide_channels(filters[i], channel_divisor));
  }
  return out;
}

void TrainConfig::validate() const {
  if (iterations < 0) throw InvalidArgument("iterations must be >= 0");
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  NeighborhoodSpec check(neighborhood);
  if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
  if (!(sigma > 0.0)) throw InvalidArgument("sigma must be positive");
  if (!(adam.lr > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) ||
      !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.eps > 0.0)) {
    throw InvalidArgument("invalid Adam hyperparameters");
  }
}

VariantConfig build_variant(Variant kind, const GeneratorConfig& geometry, const TrainConfig& base) {
  VariantConfig v{geometry, base};
  v.generator.two_stream = kind != Variant::Baseline;
  v.generator.skip = kind == Variant::Baseline ? SkipMode::Plain : SkipMode::Deformable;
  switch (kind) {
    case Variant::Baseline:
    case Variant::DSC: v.train.recon = ReconKind::L1; break;
    case Variant::PercLoss: v.train.recon = ReconKind::Perceptual; break;
    case Variant::Full: v.train.recon = ReconKind::NN; break;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Samples

std::vector<WarpPlan> build_level_plans(const RegionPair& regions, const GeneratorConfig& cfg) {
  std::vector<WarpPlan> plans;
  for (int l = 0; l + 1 < cfg.levels(); ++l) {
    plans.push_back(build_warp_plan(regions, cfg.image_width, cfg.image_height, cfg.level_width(l),
                                    cfg.level_height(l)));
  }
  return plans;
}

TrainSample make_train_sample(Tensor x_a, const Pose& pose_a, Tensor x_b, const Pose& pose_b,
                              const GeneratorConfig& cfg, double sigma) {
  const int H = cfg.image_height, W = cfg.image_width;
  for (const Tensor* t : {&x_a, &x_b}) {
    if (t->batch() != 1 || t->height() != H || t->width() != W || t->channels() != 3) {
      throw InvalidArgument("sample image " + t->shape_string() + " does not match generator " +
                            std::to_string(H) + "x" + std::to_string(W) + "x3");
    }
  }
  TrainSample s;
  s.x_a = std::move(x_a);
  s.x_b = std::move(x_b);
  s.pose_a = pose_a;
  s.pose_b = pose_b;
  s.h_a = heatmap_from_pose(pose_a, W, H, sigma);
  s.h_b = heatmap_from_pose(pose_b, W, H, sigma);
  s.regions = region_pair(pose_a, pose_b, W, H);
  s.plans = build_level_plans(s.regions, cfg);
  return s;
}

namespace {

Tensor stack(std::span<const TrainSample* const> samples, Tensor TrainSample::*field) {
  const Tensor& first = samples.front()->*field;
  Tensor out(static_cast<int>(samples.size()), first.height(), first.width(), first.channels());
  for (std::size_t i = 0; i < samples.size(); ++i) out.set_sample(static_cast<int>(i), samples[i]->*field);
  return out;
}

}  // namespace

GanInputs batch_inputs(std::span<const TrainSample* const> samples) {
  if (samples.empty()) throw InvalidArgument("empty batch");
  GanInputs in;
  in.x_a = stack(samples, &TrainSample::x_a);
  in.h_a = stack(samples, &TrainSample::h_a);
  in.h_b = stack(samples, &TrainSample::h_b);
  for (const TrainSample* s : samples) in.plans.push_back(&s->plans);
  return in;
}

// ---------------------------------------------------------------------------
// Generator

namespace {

struct GeneratorNet {
  std::vector<nn::Sequential> enc1, enc2, dec;
  nn::Sequential out;
};

GeneratorNet build_generator_net(const GeneratorConfig& cfg) {
  cfg.validate();
  GeneratorNet net;
  const std::vector<int> enc = cfg.encoder_channels();
  for (std::size_t l = 0; l < enc.size(); ++l) {
    const nn::BlockSpec block{nn::BlockKind::CN, enc[l], l == 0 ? 1 : 2, false};
    const std::string idx = std::to_string(l);
    net.enc1.emplace_back(nn::expand_block(block, "enc1/b" + idx));
    if (cfg.two_stream) net.enc2.emplace_back(nn::expand_block(block, "enc2/b" + idx));
  }
  const std::vector<int> dec = cfg.decoder_channels();
  const int dropout = cfg.decoder_dropout_count();
  for (std::size_t k = 0; k < dec.size(); ++k) {
    const nn::BlockKind kind = static_cast<int>(k) < dropout ? nn::BlockKind::CD : nn::BlockKind::CN;
    net.dec.emplace_back(nn::expand_block({kind, dec[k], 2, true}, "dec/b" + std::to_string(k)));
  }
  net.out = nn::Sequential(
      nn::expand_block({nn::BlockKind::C, 3, 1, false, nn::Activation::Tanh}, "dec/out"));
  return net;
}

// Channels each skip level contributes to the decoder.
int skip_channels(const GeneratorConfig& cfg, int enc_channels) {
  if (cfg.skip == SkipMode::None) return 0;
  return enc_channels * (cfg.two_stream ? 2 : 1);
}

}  // namespace

struct GeneratorTrace {
  std::vector<const std::vector<WarpPlan>*> plans;
  std::vector<nn::Sequential::Trace> enc1, enc2, dec;
  nn::Sequential::Trace out;
  std::vector<Tensor> e1, e2;
  std::vector<std::vector<Tensor>> deformed;         // [level][sample]
  std::vector<std::vector<ArgmaxField>> argmax;      // [level][sample]
  std::vector<std::vector<int>> dec_parts;           // channel split after decoder block k
};

GeneratorRun::GeneratorRun() = default;
GeneratorRun::~GeneratorRun() = default;
GeneratorRun::GeneratorRun(GeneratorRun&&) noexcept = default;
GeneratorRun& GeneratorRun::operator=(GeneratorRun&&) noexcept = default;

void init_generator(const GeneratorConfig& cfg, nn::ParamStore& params, std::mt19937_64& rng) {
  const GeneratorNet net = build_generator_net(cfg);
  const int L = cfg.levels();
  const std::vector<int> enc = cfg.encoder_channels();
  int c = cfg.stream1_channels();
  for (const auto& block : net.enc1) c = block.init(c, params, rng);
  if (cfg.two_stream) {
    int c2 = kNumJoints;
    for (const auto& block : net.enc2) c2 = block.init(c2, params, rng);
  }
  int h = enc[L - 1] * (cfg.two_stream ? 2 : 1);
  for (std::size_t k = 0; k < net.dec.size(); ++k) {
    const int level = L - 2 - static_cast<int>(k);
    h = net.dec[k].init(h, params, rng) + skip_channels(cfg, enc[level]);
  }
  net.out.init(h, params, rng);
}

GeneratorRun generator_forward(const GeneratorConfig& cfg, const nn::ParamStore& params,
                               const GanInputs& in, nn::Mode mode, std::uint64_t seed) {
  const GeneratorNet net = build_generator_net(cfg);
  const int L = cfg.levels();
  const int B = in.x_a.batch();
  const int H = cfg.image_height, W = cfg.image_width;
  for (const Tensor* t : {&in.x_a, &in.h_a, &in.h_b}) {
    if (t->batch() != B || t->height() != H || t->width() != W) {
      throw InvalidArgument("generator input " + t->shape_string() + " does not match " +
                            std::to_string(H) + "x" + std::to_string(W));
    }
  }
  if (in.x_a.channels() != 3 || in.h_a.channels() != kNumJoints || in.h_b.channels() != kNumJoints) {
    throw InvalidArgument("generator inputs need 3 image and 18 heat-map channels");
  }
  if (cfg.skip == SkipMode::Deformable) {
    if (static_cast<int>(in.plans.size()) != B) {
      throw InvalidArgument("generator: one warp plan set per sample required");
    }
    for (const auto* plans : in.plans) {
      if (plans == nullptr || static_cast<int>(plans->size()) < L - 1) {
        throw InvalidArgument("generator: warp plans missing for some skip levels");
      }
      for (int l = 0; l + 1 < L; ++l) {
        const WarpPlan& p = (*plans)[l];
        if (p.width != cfg.level_width(l) || p.height != cfg.level_height(l)) {
          throw InvalidArgument("generator: warp plan for level " + std::to_string(l) + " is " +
                                std::to_string(p.height) + "x" + std::to_string(p.width) +
                                ", feature map is " + std::to_string(cfg.level_height(l)) + "x" +
                                std::to_string(cfg.level_width(l)));
        }
      }
    }
  }

  GeneratorRun run;
  run.trace = std::make_unique<GeneratorTrace>();
  GeneratorTrace& tr = *run.trace;
  tr.plans = in.plans;
  tr.enc1.resize(L);
  tr.enc2.resize(cfg.two_stream ? L : 0);
  tr.dec.resize(net.dec.size());
  tr.deformed.resize(L - 1);
  tr.argmax.resize(L - 1);

  Tensor x = cfg.two_stream ? concat_channels(in.x_a, in.h_a) : [&] {
    const Tensor* parts[] = {&in.x_a, &in.h_a, &in.h_b};
    return concat_channels(parts);
  }();
  for (int l = 0; l < L; ++l) {
    x = net.enc1[l].forward(params, x, mode, nn::mix_seed(seed, 100 + l), &tr.enc1[l]);
    tr.e1.push_back(x);
  }
  if (cfg.two_stream) {
    Tensor y = in.h_b;
    for (int l = 0; l < L; ++l) {
      y = net.enc2[l].forward(params, y, mode, nn::mix_seed(seed, 200 + l), &tr.enc2[l]);
      tr.e2.push_back(y);
    }
  }

  Tensor h = cfg.two_stream ? concat_channels(tr.e1[L - 1], tr.e2[L - 1]) : tr.e1[L - 1];
  for (std::size_t k = 0; k < net.dec.size(); ++k) {
    h = net.dec[k].forward(params, h, mode, nn::mix_seed(seed, 300 + k), &tr.dec[k]);
    const int l = L - 2 - static_cast<int>(k);
    if (cfg.skip == SkipMode::None) continue;
    std::vector<const Tensor*> parts{&h};
    if (cfg.two_stream) parts.push_back(&tr.e2[l]);
    Tensor skip1;
    if (cfg.skip == SkipMode::Deformable) {
      skip1 = Tensor::like(tr.e1[l]);
      for (int s = 0; s < B; ++s) {
        MergeResult m = deform(tr.e1[l].sample(s), (*in.plans[s])[l]);
        skip1.set_sample(s, m.merged);
        tr.deformed[l].push_back(std::move(m.merged));
        tr.argmax[l].push_back(std::move(m.argmax));
      }
    } else {
      skip1 = tr.e1[l];
    }
    parts.push_back(&skip1);
    std::vector<int> split;
    for (const Tensor* p : parts) split.push_back(p->channels());
    tr.dec_parts.push_back(std::move(split));
    h = concat_channels(parts);
  }
  run.output = net.out.forward(params, h, mode, nn::mix_seed(seed, 400), &tr.out);
  return run;
}

void generator_backward(const GeneratorConfig& cfg, const nn::ParamStore& params,
                        const GeneratorRun& run, const Tensor& grad_output, nn::GradStore& grads) {
  if (!run.trace) throw InvalidState("generator_backward: no forward trace");
  const GeneratorNet net = build_generator_net(cfg);
  const GeneratorTrace& tr = *run.trace;
  const int L = cfg.levels();
  if (static_cast<int>(tr.e1.size()) != L || !grad_output.same_shape(run.output)) {
    throw InvalidState("generator_backward: trace does not match the configuration");
  }
  const int B = grad_output.batch();

  std::vector<Tensor> g1, g2;
  for (const Tensor& t : tr.e1) g1.push_back(Tensor::like(t));
  for (const Tensor& t : tr.e2) g2.push_back(Tensor::like(t));

  Tensor g = net.out.backward(params, tr.out, grad_output, grads);
  for (std::size_t k = net.dec.size(); k-- > 0;) {
    const int l = L - 2 - static_cast<int>(k);
    if (cfg.skip != SkipMode::None) {
      const std::vector<int>& split = tr.dec_parts[k];
      int begin = 0;
      std::vector<Tensor> pieces;
      for (int c : split) {
        pieces.push_back(slice_channels(g, begin, c));
        begin += c;
      }
      std::size_t next = 1;
      if (cfg.two_stream) g2[l] += pieces[next++];
      const Tensor& gskip = pieces[next];
      if (cfg.skip == SkipMode::Deformable) {
        for (int s = 0; s < B; ++s) {
          const Tensor gs = deform_backward(gskip.sample(s), (*tr.plans[s])[l], tr.e1[l].sample(s),
                                            tr.argmax[l][s]);
          Tensor acc = g1[l].sample(s);
          acc += gs;
          g1[l].set_sample(s, acc);
        }
      } else {
        g1[l] += gskip;
      }
      g = std::move(pieces[0]);
    }
    g = net.dec[k].backward(params, tr.dec[k], g, grads);
  }
  if (cfg.two_stream) {
    const int c1 = tr.e1[L - 1].channels();
    g1[L - 1] += slice_channels(g, 0, c1);
    g2[L - 1] += slice_channels(g, c1, tr.e2[L - 1].channels());
  } else {
    g1[L - 1] += g;
  }
  for (int l = L; l-- > 0;) {
    Tensor gin = net.enc1[l].backward(params, tr.enc1[l], g1[l], grads);
    if (l > 0) g1[l - 1] += gin;
  }
  if (cfg.two_stream) {
    for (int l = L; l-- > 0;) {
      Tensor gin = net.enc2[l].backward(params, tr.enc2[l], g2[l], grads);
      if (l > 0) g2[l - 1] += gin;
    }
  }
}

std::vector<std::vector<Tensor>> deformed_skips(const GeneratorRun& run) {
  if (!run.trace) return {};
  return run.trace->deformed;
}

std::vector<Tensor> stream1_features(const GeneratorRun& run) {
  if (!run.trace) return {};
  return run.trace->e1;
}

// ---------------------------------------------------------------------------
// Discriminator

nn::Sequential discriminator_network(const DiscriminatorConfig& cfg) {
  const std::vector<int> ch = cfg.channels();
  if (ch.empty()) throw InvalidArgument("discriminator needs at least one block");
  nn::Sequential net;
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const bool last = i + 1 == ch.size();
    net.append(nn::expand_block(
        {nn::BlockKind::C, ch[i], 2, false, last ? nn::Activation::Sigmoid : nn::Activation::Relu},
        "disc/b" + std::to_string(i)));
  }
  return net;
}

void init_discriminator(const DiscriminatorConfig& cfg, nn::ParamStore& params,
                        std::mt19937_64& rng) {
  discriminator_network(cfg).init(2 * (3 + kNumJoints), params, rng);
}

DiscriminatorRun discriminator_forward(const DiscriminatorConfig& cfg,
                                       const nn::ParamStore& params, const Tensor& x_a,
                                       const Tensor& h_a, const Tensor& y, const Tensor& h_b) {
  if (!x_a.same_shape(y) || h_a.batch() != x_a.batch() || !h_a.same_shape(h_b) ||
      h_a.height() != x_a.height() || h_a.width() != x_a.width() || x_a.channels() != 3 ||
      h_a.channels() != kNumJoints) {
    throw InvalidArgument("discriminator inputs have inconsistent shapes");
  }
  const nn::Sequential net = discriminator_network(cfg);
  const Tensor* parts[] = {&x_a, &h_a, &y, &h_b};
  const Tensor input = concat_channels(parts);
  DiscriminatorRun run;
  run.input_channels = input.channels();
  run.patch_map = net.forward(params, input, nn::Mode::Eval, 0, &run.trace);
  const Tensor& p = run.patch_map;
  const std::size_t per = static_cast<std::size_t>(p.height()) * p.width() * p.channels();
  for (int b = 0; b < p.batch(); ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < per; ++i) s += p[b * per + i];
    run.scores.push_back(s / static_cast<double>(per));
  }
  return run;
}

Tensor discriminator_backward(const DiscriminatorConfig& cfg, const nn::ParamStore& params,
                              const DiscriminatorRun& run, std::span<const double> grad_scores,
                              nn::GradStore& grads) {
  const Tensor& p = run.patch_map;
  if (static_cast<int>(grad_scores.size()) != p.batch()) {
    throw InvalidState("discriminator_backward: one score gradient per sample required");
  }
  const std::size_t per = static_cast<std::size_t>(p.height()) * p.width() * p.channels();
  Tensor gp = Tensor::like(p);
  for (int b = 0; b < p.batch(); ++b) {
    for (std::size_t i = 0; i < per; ++i) gp[b * per + i] = grad_scores[b] / static_cast<double>(per);
  }
  const nn::Sequential net = discriminator_network(cfg);
  const Tensor gin = net.backward(params, run.trace, gp, grads);
  return slice_channels(gin, 3 + kNumJoints, 3);
}

// ---------------------------------------------------------------------------
// Losses

namespace {

double clamp_score(double d) { return std::clamp(d, kScoreClamp, 1.0 - kScoreClamp); }

}  // namespace

GanLosses gan_losses(double d_real, double d_fake) {
  const double r = clamp_score(d_real);
  const double f = clamp_score(d_fake);
  return {-std::log(r) - std::log(1.0 - f), -std::log(f)};
}

GanLossGrads gan_loss_grads(double d_real, double d_fake) {
  const double r = clamp_score(d_real);
  const double f = clamp_score(d_fake);
  return {-1.0 / r, 1.0 / (1.0 - f), -1.0 / f};
}

double objective(double loss_g_adv, double recon_loss, double lambda) {
  return loss_g_adv + lambda * recon_loss;
}

ReconResult reconstruction_loss(ReconKind kind, const Tensor& x_hat, const Tensor& x_b,
                                const FeatureExtractor& features, NeighborhoodSpec nb,
                                double grad_scale) {
  ReconResult r;
  if (kind == ReconKind::L1) {
    r.loss = l1_loss(x_hat, x_b);
    r.grad = l1_loss_backward(grad_scale, x_hat, x_b);
    return r;
  }
  nn::Sequential::Trace trace;
  const Tensor c_hat = features.extract(x_hat, trace);
  const Tensor c_b = features.extract(x_b);
  Tensor gc;
  if (kind == ReconKind::Perceptual) {
    r.loss = perceptual_elementwise_loss(c_hat, c_b);
    gc = perceptual_elementwise_backward(grad_scale, c_hat, c_b);
  } else {
    NnLossResult nn_res = nn_loss_shifted(c_hat, c_b, nb);
    r.loss = nn_res.loss;
    gc = nn_loss_backward(grad_scale, nn_res.argmin, c_hat, c_b);
  }
  r.grad = features.backward(trace, gc);
  return r;
}

// ---------------------------------------------------------------------------
// Training

TrainState init_train_state(const GeneratorConfig& gcfg, const TrainConfig& tcfg,
                            const DiscriminatorConfig& dcfg) {
  gcfg.validate();
  tcfg.validate();
  TrainState st{gcfg, dcfg, tcfg, {}, {}, 0};
  std::mt19937_64 grng(nn::mix_seed(tcfg.seed, 0x47));
  init_generator(gcfg, st.g_params, grng);
  std::mt19937_64 drng(nn::mix_seed(tcfg.seed, 0x44));
  init_discriminator(dcfg, st.d_params, drng);
  return st;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, long iteration, int batch_size,
                                       std::size_t dataset_size) {
  if (dataset_size == 0) throw InvalidArgument("empty dataset");
  std::mt19937_64 rng(nn::mix_seed(seed, static_cast<std::uint64_t>(iteration), 0xba7c));
  std::vector<std::size_t> idx(static_cast<std::size_t>(batch_size));
  for (auto& i : idx) i = static_cast<std::size_t>(rng() % dataset_size);
  return idx;
}

StepLosses train_step(TrainState& st, std::span<const TrainSample* const> batch,
                      const FeatureExtractor& features) {
  const int B = static_cast<int>(batch.size());
  if (B == 0) throw InvalidArgument("train_step: empty batch");
  const GanInputs in = batch_inputs(batch);
  const Tensor x_b = stack(batch, &TrainSample::x_b);
  const NeighborhoodSpec nb(st.train.neighborhood);
  const long it = st.iteration;

  GeneratorRun gen = generator_forward(st.generator, st.g_params, in, nn::Mode::Train,
                                       nn::mix_seed(st.train.seed, static_cast<std::uint64_t>(it), 1));
  const Tensor& x_hat = gen.output;

  StepLosses out;
  out.iteration = it;

  // Discriminator: real vs fake.
  {
    const DiscriminatorRun real = discriminator_forward(st.discriminator, st.d_params, in.x_a,
                                                        in.h_a, x_b, in.h_b);
    const DiscriminatorRun fake = discriminator_forward(st.discriminator, st.d_params, in.x_a,
                                                        in.h_a, x_hat, in.h_b);
    std::vector<double> g_real(B), g_fake(B);
    for (int b = 0; b < B; ++b) {
      out.loss_d += gan_losses(real.scores[b], fake.scores[b]).loss_d / B;
      const GanLossGrads gg = gan_loss_grads(real.scores[b], fake.scores[b]);
      g_real[b] = gg.dloss_d_dreal / B;
      g_fake[b] = gg.dloss_d_dfake / B;
    }
    if (!std::isfinite(out.loss_d)) throw TrainingDiverged(it, "discriminator loss is not finite");
    if (!st.train.freeze_discriminator) {
      nn::GradStore dgrads = st.d_params.zero_grads();
      discriminator_backward(st.discriminator, st.d_params, real, g_real, dgrads);
      discriminator_backward(st.discriminator, st.d_params, fake, g_fake, dgrads);
      nn::adam_step(st.d_params, dgrads, st.train.adam);
    }
  }

  // Generator: adversarial term against the updated discriminator plus the
  // weighted reconstruction term.
  const DiscriminatorRun fake = discriminator_forward(st.discriminator, st.d_params, in.x_a, in.h_a,
                                                      x_hat, in.h_b);
  std::vector<double> g_adv(B);
  for (int b = 0; b < B; ++b) {
    out.loss_g_adv += gan_losses(0.5, fake.scores[b]).loss_g_adv / B;
    g_adv[b] = gan_loss_grads(0.5, fake.scores[b]).dloss_g_dfake / B;
  }
  nn::GradStore discard;
  Tensor grad_x_hat = discriminator_backward(st.discriminator, st.d_params, fake, g_adv, discard);
  for (int b = 0; b < B; ++b) {
    ReconResult r = reconstruction_loss(st.train.recon, x_hat.sample(b), x_b.sample(b), features, nb,
                                        st.train.lambda / B);
    out.recon += r.loss / B;
    Tensor acc = grad_x_hat.sample(b);
    acc += r.grad;
    grad_x_hat.set_sample(b, acc);
  }
  out.loss_g = objective(out.loss_g_adv, out.recon, st.train.lambda);
  if (!std::isfinite(out.loss_g_adv) || !std::isfinite(out.recon) || !grad_x_hat.all_finite()) {
    throw TrainingDiverged(it, "generator loss is not finite");
  }
  nn::GradStore ggrads = st.g_params.zero_grads();
  generator_backward(st.generator, st.g_params, gen, grad_x_hat, ggrads);
  nn::adam_step(st.g_params, ggrads, st.train.adam);
  st.iteration = it + 1;
  return out;
}

Tensor generate(const TrainState& state, const TrainSample& sample) {
  const TrainSample* one[] = {&sample};
  return generator_forward(state.generator, state.g_params, batch_inputs(one), nn::Mode::Eval, 0)
      .output;
}

}  // namespace deformwarp
