#include "deformwarp/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "deformwarp/error.hpp"

namespace deformwarp::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

// Geometry of a convolution from an (n, hi, wi, ci) input to (ho, wo).
struct ConvGeom {
  int n, hi, wi, ci, ho, wo, k, s, p;

  std::size_t rows() const { return static_cast<std::size_t>(n) * ho * wo; }
  std::size_t patch() const { return static_cast<std::size_t>(k) * k * ci; }
};

ConvGeom conv_geom(int n, int hi, int wi, int ci, int k, int s, int p) {
  const int ho = (hi + 2 * p - k) / s + 1;
  const int wo = (wi + 2 * p - k) / s + 1;
  if (hi + 2 * p < k || wi + 2 * p < k || ho < 1 || wo < 1) {
    throw InvalidArgument("convolution input " + std::to_string(hi) + "x" + std::to_string(wi) +
                          " too small for kernel " + std::to_string(k));
  }
  return {n, hi, wi, ci, ho, wo, k, s, p};
}

void im2col(const double* in, const ConvGeom& g, std::vector<double>& cols) {
  cols.assign(g.rows() * g.patch(), 0.0);
  std::size_t row = 0;
  for (int n = 0; n < g.n; ++n) {
    for (int oy = 0; oy < g.ho; ++oy) {
      for (int ox = 0; ox < g.wo; ++ox, ++row) {
        double* dst = cols.data() + row * g.patch();
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.s - g.p + ky;
          if (iy < 0 || iy >= g.hi) continue;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.s - g.p + kx;
            if (ix < 0 || ix >= g.wi) continue;
            const double* src = in + ((static_cast<std::size_t>(n) * g.hi + iy) * g.wi + ix) * g.ci;
            std::copy_n(src, g.ci, dst + (static_cast<std::size_t>(ky) * g.k + kx) * g.ci);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates patch rows back onto the input grid.
void col2im(const double* cols, const ConvGeom& g, double* in) {
  std::size_t row = 0;
  for (int n = 0; n < g.n; ++n) {
    for (int oy = 0; oy < g.ho; ++oy) {
      for (int ox = 0; ox < g.wo; ++ox, ++row) {
        const double* src = cols + row * g.patch();
        for (int ky = 0; ky < g.k; ++ky) {
          const int iy = oy * g.s - g.p + ky;
          if (iy < 0 || iy >= g.hi) continue;
          for (int kx = 0; kx < g.k; ++kx) {
            const int ix = ox * g.s - g.p + kx;
            if (ix < 0 || ix >= g.wi) continue;
            double* dst = in + ((static_cast<std::size_t>(n) * g.hi + iy) * g.wi + ix) * g.ci;
            const double* s = src + (static_cast<std::size_t>(ky) * g.k + kx) * g.ci;
            for (int c = 0; c < g.ci; ++c) dst[c] += s[c];
          }
        }
      }
    }
  }
}

Tensor& grad_slot(GradStore& grads, const ParamStore& params, const std::string& name) {
  auto it = grads.find(name);
  if (it == grads.end()) it = grads.emplace(name, Tensor::like(params.get(name))).first;
  return it->second;
}

const Tensor& single_input(std::span<const Tensor> inputs, const LayerSpec& spec) {
  if (inputs.size() != 1) {
    throw InvalidArgument("layer '" + spec.name + "' expects exactly one input");
  }
  return inputs.front();
}

void add_bias(Tensor& out, const Tensor& bias) {
  const int c = out.channels();
  const std::size_t pixels = out.size() / c;
  for (std::size_t px = 0; px < pixels; ++px) {
    double* dst = out.data() + px * c;
    for (int k = 0; k < c; ++k) dst[k] += bias[k];
  }
}

void accumulate_bias_grad(const Tensor& grad_out, Tensor& gb) {
  const int c = grad_out.channels();
  const std::size_t pixels = grad_out.size() / c;
  for (std::size_t px = 0; px < pixels; ++px) {
    const double* src = grad_out.data() + px * c;
    for (int k = 0; k < c; ++k) gb[k] += src[k];
  }
}

LayerOutput conv_forward(const LayerSpec& spec, const ParamStore& params, const Tensor& x) {
  const Tensor& w = params.get(spec.name + "/w");
  const int k = spec.kernel();
  if (w.batch() != k || w.height() != k || w.width() != x.channels()) {
    throw InvalidArgument("conv '" + spec.name + "': weights " + w.shape_string() +
                          " do not match input " + x.shape_string());
  }
  const ConvGeom g = conv_geom(x.batch(), x.height(), x.width(), x.channels(), k, spec.stride,
                               LayerSpec::padding());
  LayerOutput r;
  r.ctx.kind = LayerKind::Conv;
  im2col(x.data(), g, r.ctx.cols);
  r.output = Tensor(g.n, g.ho, g.wo, w.channels());
  Eigen::Map<const RowMat> cols(r.ctx.cols.data(), static_cast<Eigen::Index>(g.rows()),
                                static_cast<Eigen::Index>(g.patch()));
  Eigen::Map<const RowMat> wm(w.data(), static_cast<Eigen::Index>(g.patch()), w.channels());
  Eigen::Map<RowMat> out(r.output.data(), static_cast<Eigen::Index>(g.rows()), w.channels());
  out.noalias() = cols * wm;
  if (spec.bias) add_bias(r.output, params.get(spec.name + "/b"));
  r.ctx.inputs = {x};
  return r;
}

Tensor conv_backward(const LayerSpec& spec, const ParamStore& params, const LayerContext& ctx,
                     const Tensor& grad_out, GradStore& grads) {
  const Tensor& x = ctx.inputs.at(0);
  const Tensor& w = params.get(spec.name + "/w");
  const ConvGeom g = conv_geom(x.batch(), x.height(), x.width(), x.channels(), spec.kernel(),
                               spec.stride, LayerSpec::padding());
  if (grad_out.batch() != g.n || grad_out.height() != g.ho || grad_out.width() != g.wo ||
      grad_out.channels() != w.channels() || ctx.cols.size() != g.rows() * g.patch()) {
    throw InvalidState("conv '" + spec.name + "': gradient " + grad_out.shape_string() +
                       " does not match the saved forward");
  }
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto patch = static_cast<Eigen::Index>(g.patch());
  Eigen::Map<const RowMat> cols(ctx.cols.data(), rows, patch);
  Eigen::Map<const RowMat> gout(grad_out.data(), rows, w.channels());
  Eigen::Map<const RowMat> wm(w.data(), patch, w.channels());

  Tensor& gw = grad_slot(grads, params, spec.name + "/w");
  Eigen::Map<RowMat> gwm(gw.data(), patch, w.channels());
  gwm.noalias() += cols.transpose() * gout;
  if (spec.bias) accumulate_bias_grad(grad_out, grad_slot(grads, params, spec.name + "/b"));

  RowMat gcols = gout * wm.transpose();
  Tensor gx = Tensor::like(x);
  col2im(gcols.data(), g, gx.data());
  return gx;
}

// Transposed convolution: the adjoint of a conv that maps the (larger)
// output grid back onto the input grid. Weights are (k, k, out_c, in_c).
LayerOutput upconv_forward(const LayerSpec& spec, const ParamStore& params, const Tensor& x) {
  const Tensor& w = params.get(spec.name + "/w");
  const int k = spec.kernel();
  if (w.batch() != k || w.height() != k || w.channels() != x.channels()) {
    throw InvalidArgument("upconv '" + spec.name + "': weights " + w.shape_string() +
                          " do not match input " + x.shape_string());
  }
  const int co = w.width();
  const int hy = (x.height() - 1) * spec.stride - 2 * LayerSpec::padding() + k;
  const int wy = (x.width() - 1) * spec.stride - 2 * LayerSpec::padding() + k;
  const ConvGeom g = conv_geom(x.batch(), hy, wy, co, k, spec.stride, LayerSpec::padding());
  if (g.ho != x.height() || g.wo != x.width()) {
    throw InvalidArgument("upconv '" + spec.name + "': inconsistent geometry");
  }
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto patch = static_cast<Eigen::Index>(g.patch());
  Eigen::Map<const RowMat> xm(x.data(), rows, x.channels());
  Eigen::Map<const RowMat> wm(w.data(), patch, x.channels());
  RowMat cols = xm * wm.transpose();

  LayerOutput r;
  r.ctx.kind = LayerKind::UpConv;
  r.output = Tensor(x.batch(), hy, wy, co);
  col2im(cols.data(), g, r.output.data());
  if (spec.bias) add_bias(r.output, params.get(spec.name + "/b"));
  r.ctx.inputs = {x};
  return r;
}

Tensor upconv_backward(const LayerSpec& spec, const ParamStore& params, const LayerContext& ctx,
                       const Tensor& grad_out, GradStore& grads) {
  const Tensor& x = ctx.inputs.at(0);
  const Tensor& w = params.get(spec.name + "/w");
  const int co = w.width();
  const int hy = (x.height() - 1) * spec.stride - 2 * LayerSpec::padding() + spec.kernel();
  const int wy = (x.width() - 1) * spec.stride - 2 * LayerSpec::padding() + spec.kernel();
  if (grad_out.batch() != x.batch() || grad_out.height() != hy || grad_out.width() != wy ||
      grad_out.channels() != co) {
    throw InvalidState("upconv '" + spec.name + "': gradient " + grad_out.shape_string() +
                       " does not match the saved forward");
  }
  const ConvGeom g = conv_geom(x.batch(), hy, wy, co, spec.kernel(), spec.stride,
                               LayerSpec::padding());
  std::vector<double> gcols_buf;
  im2col(grad_out.data(), g, gcols_buf);
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto patch = static_cast<Eigen::Index>(g.patch());
  Eigen::Map<const RowMat> gcols(gcols_buf.data(), rows, patch);
  Eigen::Map<const RowMat> xm(x.data(), rows, x.channels());
  Eigen::Map<const RowMat> wm(w.data(), patch, x.channels());

  Tensor& gw = grad_slot(grads, params, spec.name + "/w");
  Eigen::Map<RowMat> gwm(gw.data(), patch, x.channels());
  gwm.noalias() += gcols.transpose() * xm;
  if (spec.bias) accumulate_bias_grad(grad_out, grad_slot(grads, params, spec.name + "/b"));

  Tensor gx = Tensor::like(x);
  Eigen::Map<RowMat> gxm(gx.data(), rows, x.channels());
  gxm.noalias() = gcols * wm;
  return gx;
}

LayerOutput instance_norm_forward(const LayerSpec& spec, const ParamStore& params,
                                  const Tensor& x) {
  const Tensor& gamma = params.get(spec.name + "/gamma");
  const Tensor& beta = params.get(spec.name + "/beta");
  const int C = x.channels();
  if (gamma.channels() != C) {
    throw InvalidArgument("instance_norm '" + spec.name + "': " + std::to_string(gamma.channels()) +
                          " channels in params, input " + x.shape_string());
  }
  const int plane = x.height() * x.width();
  LayerOutput r;
  r.ctx.kind = LayerKind::InstanceNorm;
  r.ctx.cols.assign(x.size(), 0.0);
  r.ctx.inv_std.assign(static_cast<std::size_t>(x.batch()) * C, 0.0);
  r.output = Tensor::like(x);
  for (int n = 0; n < x.batch(); ++n) {
    const double* base = x.data() + static_cast<std::size_t>(n) * plane * C;
    for (int c = 0; c < C; ++c) {
      double mean = 0.0;
      for (int i = 0; i < plane; ++i) mean += base[static_cast<std::size_t>(i) * C + c];
      mean /= plane;
      double var = 0.0;
      for (int i = 0; i < plane; ++i) {
        const double d = base[static_cast<std::size_t>(i) * C + c] - mean;
        var += d * d;
      }
      var /= plane;
      const double inv_std = 1.0 / std::sqrt(var + kInstanceNormEps);
      r.ctx.inv_std[static_cast<std::size_t>(n) * C + c] = inv_std;
      for (int i = 0; i < plane; ++i) {
        const std::size_t idx = (static_cast<std::size_t>(n) * plane + i) * C + c;
        const double xhat = (x[idx] - mean) * inv_std;
        r.ctx.cols[idx] = xhat;
        r.output[idx] = gamma[c] * xhat + beta[c];
      }
    }
  }
  r.ctx.inputs = {x};
  return r;
}

Tensor instance_norm_backward(const LayerSpec& spec, const ParamStore& params,
                              const LayerContext& ctx, const Tensor& grad_out, GradStore& grads) {
  const Tensor& x = ctx.inputs.at(0);
  if (!grad_out.same_shape(x) || ctx.cols.size() != x.size()) {
    throw InvalidState("instance_norm '" + spec.name + "': gradient does not match forward");
  }
  const Tensor& gamma = params.get(spec.name + "/gamma");
  Tensor& ggamma = grad_slot(grads, params, spec.name + "/gamma");
  Tensor& gbeta = grad_slot(grads, params, spec.name + "/beta");
  const int C = x.channels();
  const int plane = x.height() * x.width();
  Tensor gx = Tensor::like(x);
  for (int n = 0; n < x.batch(); ++n) {
    for (int c = 0; c < C; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int i = 0; i < plane; ++i) {
        const std::size_t idx = (static_cast<std::size_t>(n) * plane + i) * C + c;
        const double g = grad_out[idx];
        const double xhat = ctx.cols[idx];
        ggamma[c] += g * xhat;
        gbeta[c] += g;
        sum_g += g * gamma[c];
        sum_gx += g * gamma[c] * xhat;
      }
      const double inv_std = ctx.inv_std[static_cast<std::size_t>(n) * C + c];
      for (int i = 0; i < plane; ++i) {
        const std::size_t idx = (static_cast<std::size_t>(n) * plane + i) * C + c;
        const double dxhat = grad_out[idx] * gamma[c];
        gx[idx] = inv_std * (dxhat - sum_g / plane - ctx.cols[idx] * sum_gx / plane);
      }
    }
  }
  return gx;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

void ParamStore::add(const std::string& name, Tensor value) {
  if (values_.count(name) != 0) throw InvalidArgument("duplicate parameter '" + name + "'");
  adam_[name] = AdamState{Tensor::like(value), Tensor::like(value), 0};
  values_.emplace(name, std::move(value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::get_mut(const std::string& name) {
  auto it = values_.find(name);
  if (it == values_.end()) throw InvalidArgument("unknown parameter '" + name + "'");
  return it->second;
}

const AdamState& ParamStore::adam(const std::string& name) const {
  auto it = adam_.find(name);
  if (it == adam_.end()) throw InvalidArgument("no optimizer state for '" + name + "'");
  return it->second;
}

AdamState& ParamStore::adam_mut(const std::string& name) {
  auto it = adam_.find(name);
  if (it == adam_.end()) throw InvalidArgument("no optimizer state for '" + name + "'");
  return it->second;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : values_) n += t.size();
  return n;
}

GradStore ParamStore::zero_grads() const {
  GradStore g;
  for (const auto& [name, t] : values_) g.emplace(name, Tensor::like(t));
  return g;
}

bool operator==(const ParamStore& a, const ParamStore& b) {
  if (a.values_ != b.values_) return false;
  for (const auto& [name, s] : a.adam_) {
    const AdamState& o = b.adam(name);
    if (s.step != o.step || !(s.m == o.m) || !(s.v == o.v)) return false;
  }
  return true;
}

void adam_step(ParamStore& params, const GradStore& grads, const AdamConfig& cfg) {
  if (grads.size() != params.values().size()) {
    throw InvalidArgument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(params.values().size()) + " parameters");
  }
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw InvalidArgument("adam_step: unknown parameter '" + name + "'");
    if (!g.same_shape(params.get(name))) {
      throw InvalidArgument("adam_step: gradient shape mismatch for '" + name + "'");
    }
  }
  for (const auto& [name, g] : grads) {
    Tensor& theta = params.get_mut(name);
    AdamState& s = params.adam_mut(name);
    s.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g[i];
      s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      theta[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

int init_layer(const LayerSpec& spec, int in_channels, ParamStore& params, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, kInitStd);
  switch (spec.kind) {
    case LayerKind::Conv:
    case LayerKind::UpConv: {
      if (spec.filters < 1) throw InvalidArgument("layer '" + spec.name + "' needs filters >= 1");
      const int k = spec.kernel();
      Tensor w = spec.kind == LayerKind::Conv ? Tensor(k, k, in_channels, spec.filters)
                                              : Tensor(k, k, spec.filters, in_channels);
      for (double& v : w.values()) v = normal(rng);
      params.add(spec.name + "/w", std::move(w));
      if (spec.bias) params.add(spec.name + "/b", Tensor(1, 1, 1, spec.filters, 0.0));
      return spec.filters;
    }
    case LayerKind::InstanceNorm:
      params.add(spec.name + "/gamma", Tensor(1, 1, 1, in_channels, 1.0));
      params.add(spec.name + "/beta", Tensor(1, 1, 1, in_channels, 0.0));
      return in_channels;
    case LayerKind::Concat:
      throw InvalidArgument("concat takes its channel count from both inputs");
    default:
      return in_channels;
  }
}

int output_extent(const LayerSpec& spec, int in) {
  switch (spec.kind) {
    case LayerKind::Conv:
      return (in + 2 * LayerSpec::padding() - spec.kernel()) / spec.stride + 1;
    case LayerKind::UpConv:
      return (in - 1) * spec.stride - 2 * LayerSpec::padding() + spec.kernel();
    default:
      return in;
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the combined words
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0x2545f4914f6cdd1dULL));
}

LayerOutput layer_forward(const LayerSpec& spec, const ParamStore& params,
                          std::span<const Tensor> inputs, Mode mode, std::uint64_t seed) {
  if (spec.kind == LayerKind::Concat) {
    if (inputs.empty()) throw InvalidArgument("concat '" + spec.name + "' needs inputs");
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : inputs) ptrs.push_back(&t);
    LayerOutput r;
    r.ctx.kind = LayerKind::Concat;
    r.ctx.mode = mode;
    r.output = concat_channels(ptrs);
    r.ctx.inputs.assign(inputs.begin(), inputs.end());
    return r;
  }
  const Tensor& x = single_input(inputs, spec);
  LayerOutput r;
  switch (spec.kind) {
    case LayerKind::Conv:
      r = conv_forward(spec, params, x);
      break;
    case LayerKind::UpConv:
      r = upconv_forward(spec, params, x);
      break;
    case LayerKind::InstanceNorm:
      r = instance_norm_forward(spec, params, x);
      break;
    case LayerKind::Relu:
      r.output = Tensor::like(x);
      for (std::size_t i = 0; i < x.size(); ++i) r.output[i] = x[i] > 0.0 ? x[i] : 0.0;
      r.ctx.inputs = {x};
      break;
    case LayerKind::Tanh:
      r.output = Tensor::like(x);
      for (std::size_t i = 0; i < x.size(); ++i) r.output[i] = std::tanh(x[i]);
      break;
    case LayerKind::Sigmoid:
      r.output = Tensor::like(x);
      for (std::size_t i = 0; i < x.size(); ++i) r.output[i] = 1.0 / (1.0 + std::exp(-x[i]));
      break;
    case LayerKind::Dropout: {
      r.output = x;
      if (mode == Mode::Train && spec.dropout_rate > 0.0) {
        const double keep_prob = 1.0 - spec.dropout_rate;
        std::mt19937_64 rng(seed);
        r.ctx.keep.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
          const bool keep = uniform01(rng) < keep_prob;
          r.ctx.keep[i] = keep ? 1 : 0;
          r.output[i] = keep ? x[i] / keep_prob : 0.0;
        }
      }
      r.ctx.inputs = {x};
      break;
    }
    case LayerKind::Concat:
      break;
  }
  r.ctx.kind = spec.kind;
  r.ctx.mode = mode;
  if (spec.kind == LayerKind::Tanh || spec.kind == LayerKind::Sigmoid) r.ctx.output = r.output;
  return r;
}

LayerOutput layer_forward(const LayerSpec& spec, const ParamStore& params, const Tensor& input,
                          Mode mode, std::uint64_t seed) {
  return layer_forward(spec, params, std::span<const Tensor>(&input, 1), mode, seed);
}

std::vector<Tensor> layer_backward(const LayerSpec& spec, const ParamStore& params,
                                   const LayerContext& ctx, const Tensor& grad_out,
                                   GradStore& grads) {
  if (ctx.kind != spec.kind) {
    throw InvalidState("layer '" + spec.name + "': context was saved by a different layer kind");
  }
  auto check_same = [&](const Tensor& ref) {
    if (!grad_out.same_shape(ref)) {
      throw InvalidState("layer '" + spec.name + "': gradient " + grad_out.shape_string() +
                         " does not match forward " + ref.shape_string());
    }
  };
  switch (spec.kind) {
    case LayerKind::Conv:
      return {conv_backward(spec, params, ctx, grad_out, grads)};
    case LayerKind::UpConv:
      return {upconv_backward(spec, params, ctx, grad_out, grads)};
    case LayerKind::InstanceNorm:
      return {instance_norm_backward(spec, params, ctx, grad_out, grads)};
    case LayerKind::Relu: {
      const Tensor& x = ctx.inputs.at(0);
      check_same(x);
      Tensor gx = Tensor::like(x);
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
      return {gx};
    }
    case LayerKind::Tanh: {
      check_same(ctx.output);
      Tensor gx = Tensor::like(ctx.output);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] = grad_out[i] * (1.0 - ctx.output[i] * ctx.output[i]);
      }
      return {gx};
    }
    case LayerKind::Sigmoid: {
      check_same(ctx.output);
      Tensor gx = Tensor::like(ctx.output);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] = grad_out[i] * ctx.output[i] * (1.0 - ctx.output[i]);
      }
      return {gx};
    }
    case LayerKind::Dropout: {
      const Tensor& x = ctx.inputs.at(0);
      check_same(x);
      if (ctx.keep.empty()) return {grad_out};
      const double keep_prob = 1.0 - spec.dropout_rate;
      Tensor gx = Tensor::like(x);
      for (std::size_t i = 0; i < x.size(); ++i) {
        gx[i] = ctx.keep[i] ? grad_out[i] / keep_prob : 0.0;
      }
      return {gx};
    }
    case LayerKind::Concat: {
      int total = 0;
      for (const Tensor& t : ctx.inputs) total += t.channels();
      if (ctx.inputs.empty() || grad_out.channels() != total ||
          grad_out.height() != ctx.inputs[0].height() || grad_out.width() != ctx.inputs[0].width() ||
          grad_out.batch() != ctx.inputs[0].batch()) {
        throw InvalidState("concat '" + spec.name + "': gradient does not match forward");
      }
      std::vector<Tensor> out;
      int begin = 0;
      for (const Tensor& t : ctx.inputs) {
        out.push_back(slice_channels(grad_out, begin, t.channels()));
        begin += t.channels();
      }
      return out;
    }
  }
  throw InvalidState("unhandled layer kind");
}

std::vector<LayerSpec> expand_block(const BlockSpec& block, const std::string& name) {
  std::vector<LayerSpec> out;
  LayerSpec conv;
  conv.kind = block.transpose ? LayerKind::UpConv : LayerKind::Conv;
  conv.name = name + "/conv";
  conv.filters = block.filters;
  conv.stride = block.stride;
  // Instance norm removes any per-channel offset, so normed convs carry no bias.
  conv.bias = block.kind == BlockKind::C;
  out.push_back(conv);
  if (block.kind != BlockKind::C) {
    out.push_back(LayerSpec{LayerKind::InstanceNorm, name + "/norm"});
  }
  switch (block.activation) {
    case Activation::Relu: out.push_back(LayerSpec{LayerKind::Relu, name + "/relu"}); break;
    case Activation::Tanh: out.push_back(LayerSpec{LayerKind::Tanh, name + "/tanh"}); break;
    case Activation::Sigmoid: out.push_back(LayerSpec{LayerKind::Sigmoid, name + "/sigmoid"}); break;
  }
  if (block.kind == BlockKind::CD) {
    LayerSpec drop{LayerKind::Dropout, name + "/dropout"};
    drop.dropout_rate = 0.5;
    out.push_back(drop);
  }
  return out;
}

void Sequential::append(const std::vector<LayerSpec>& layers) {
  layers_.insert(layers_.end(), layers.begin(), layers.end());
}

int Sequential::init(int in_channels, ParamStore& params, std::mt19937_64& rng) const {
  int c = in_channels;
  for (const LayerSpec& l : layers_) c = init_layer(l, c, params, rng);
  return c;
}

Tensor Sequential::forward(const ParamStore& params, const Tensor& input, Mode mode,
                           std::uint64_t seed, Trace* trace) const {
  Tensor x = input;
  if (trace) trace->contexts.clear();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    LayerOutput r = layer_forward(layers_[i], params, x, mode, mix_seed(seed, i));
    x = std::move(r.output);
    if (trace) trace->contexts.push_back(std::move(r.ctx));
  }
  return x;
}

Tensor Sequential::backward(const ParamStore& params, const Trace& trace, const Tensor& grad_out,
                            GradStore& grads) const {
  if (trace.contexts.size() != layers_.size()) {
    throw InvalidState("sequential backward: trace has " + std::to_string(trace.contexts.size()) +
                       " layers, network has " + std::to_string(layers_.size()));
  }
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = std::move(layer_backward(layers_[i], params, trace.contexts[i], g, grads).front());
  }
  return g;
}

}  // namespace deformwarp::nn
