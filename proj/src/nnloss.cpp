#include "deformwarp/nnloss.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "deformwarp/error.hpp"
#include "deformwarp/parallel.hpp"

namespace deformwarp {
namespace {

constexpr double kSentinel = std::numeric_limits<double>::max();

void check_pair(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b)) {
    throw InvalidArgument(std::string(who) + ": shape mismatch " + a.shape_string() + " vs " +
                          b.shape_string());
  }
}

void check_volume(const Tensor& a, const char* who) {
  if (a.batch() != 1) {
    throw InvalidArgument(std::string(who) + ": expected a single feature volume, got batch " +
                          std::to_string(a.batch()));
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double pixel_l1(const double* a, const double* b, int channels) {
  double s = 0.0;
  for (int c = 0; c < channels; ++c) s += std::abs(a[c] - b[c]);
  return s;
}

}  // namespace

NeighborhoodSpec::NeighborhoodSpec(int side) : n(side) {
  if (side < 1 || side % 2 == 0) {
    throw InvalidArgument("neighbourhood side must be odd and >= 1, got " + std::to_string(side));
  }
  if (side > 255) throw InvalidArgument("neighbourhood side too large");
}

double nn_loss_bruteforce(const Tensor& c_hat, const Tensor& c_b, NeighborhoodSpec nb) {
  check_pair(c_hat, c_b, "nn_loss_bruteforce");
  check_volume(c_hat, "nn_loss_bruteforce");
  const int H = c_hat.height(), W = c_hat.width(), C = c_hat.channels();
  const int r = nb.radius();
  double total = 0.0;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      double best = std::numeric_limits<double>::infinity();
      for (int i = -r; i <= r; ++i) {
        for (int j = -r; j <= r; ++j) {
          const int qy = y + i, qx = x + j;
          if (qy < 0 || qy >= H || qx < 0 || qx >= W) continue;
          const double s = pixel_l1(c_hat.data() + c_hat.index(0, y, x, 0),
                                    c_b.data() + c_b.index(0, qy, qx, 0), C);
          if (s < best) best = s;
        }
      }
      total += best;
    }
  }
  return total;
}

NnLossResult nn_loss_shifted(const Tensor& c_hat, const Tensor& c_b, NeighborhoodSpec nb) {
  check_pair(c_hat, c_b, "nn_loss_shifted");
  check_volume(c_hat, "nn_loss_shifted");
  const int H = c_hat.height(), W = c_hat.width(), C = c_hat.channels();
  const int r = nb.radius();
  const int n = nb.n;
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  // S[k](p) = |c_hat(p) - c_b(p + offset_k)|_1, or the sentinel when p + offset_k
  // leaves the image.
  std::vector<std::vector<double>> S(static_cast<std::size_t>(n) * n);
  parallel_for(S.size(), [&](std::size_t k) {
    const int i = static_cast<int>(k) / n - r;
    const int j = static_cast<int>(k) % n - r;
    std::vector<double>& s = S[k];
    s.assign(plane, kSentinel);
    for (int y = 0; y < H; ++y) {
      const int qy = y + i;
      if (qy < 0 || qy >= H) continue;
      for (int x = 0; x < W; ++x) {
        const int qx = x + j;
        if (qx < 0 || qx >= W) continue;
        s[static_cast<std::size_t>(y) * W + x] = pixel_l1(
            c_hat.data() + c_hat.index(0, y, x, 0), c_b.data() + c_b.index(0, qy, qx, 0), C);
      }
    }
  });

  NnLossResult res;
  res.argmin.height = H;
  res.argmin.width = W;
  res.argmin.dy.assign(plane, 0);
  res.argmin.dx.assign(plane, 0);
  std::vector<double> M(plane, std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < S.size(); ++k) {
    const auto i = static_cast<std::int8_t>(static_cast<int>(k) / n - r);
    const auto j = static_cast<std::int8_t>(static_cast<int>(k) % n - r);
    for (std::size_t p = 0; p < plane; ++p) {
      if (S[k][p] < M[p]) {
        M[p] = S[k][p];
        res.argmin.dy[p] = i;
        res.argmin.dx[p] = j;
      }
    }
  }
  for (double m : M) res.loss += m;
  return res;
}

Tensor nn_loss_backward(double grad, const ArgminField& argmin, const Tensor& c_hat,
                        const Tensor& c_b) {
  if (!c_hat.same_shape(c_b) || c_hat.batch() != 1 || argmin.height != c_hat.height() ||
      argmin.width != c_hat.width() ||
      argmin.dy.size() != static_cast<std::size_t>(c_hat.height()) * c_hat.width() ||
      argmin.dx.size() != argmin.dy.size()) {
    throw InvalidState("nn_loss_backward: argmin field does not match the feature volumes");
  }
  const int H = c_hat.height(), W = c_hat.width(), C = c_hat.channels();
  Tensor g = Tensor::like(c_hat);
  if (grad == 0.0) return g;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * W + x;
      const int qy = y + argmin.dy[p];
      const int qx = x + argmin.dx[p];
      if (qy < 0 || qy >= H || qx < 0 || qx >= W) {
        throw InvalidState("nn_loss_backward: argmin offset leaves the image");
      }
      for (int c = 0; c < C; ++c) g(y, x, c) = grad * sign(c_hat(y, x, c) - c_b(qy, qx, c));
    }
  }
  return g;
}

double l1_loss(const Tensor& x_hat, const Tensor& x_b) {
  check_pair(x_hat, x_b, "l1_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < x_hat.size(); ++i) s += std::abs(x_hat[i] - x_b[i]);
  return s;
}

Tensor l1_loss_backward(double grad, const Tensor& x_hat, const Tensor& x_b) {
  check_pair(x_hat, x_b, "l1_loss_backward");
  Tensor g = Tensor::like(x_hat);
  for (std::size_t i = 0; i < x_hat.size(); ++i) g[i] = grad * sign(x_hat[i] - x_b[i]);
  return g;
}

double perceptual_elementwise_loss(const Tensor& c_hat, const Tensor& c_b) {
  check_pair(c_hat, c_b, "perceptual_elementwise_loss");
  // Same accumulation order as the NN loss with a 1x1 window: channel sum per
  // pixel first, then over pixels.
  const int C = c_hat.channels();
  const std::size_t pixels = c_hat.size() / C;
  double total = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    total += pixel_l1(c_hat.data() + p * C, c_b.data() + p * C, C);
  }
  return total;
}

Tensor perceptual_elementwise_backward(double grad, const Tensor& c_hat, const Tensor& c_b) {
  check_pair(c_hat, c_b, "perceptual_elementwise_backward");
  return l1_loss_backward(grad, c_hat, c_b);
}

nn::Sequential FeatureExtractor::make_net(int hidden, int out) {
  nn::LayerSpec conv1{nn::LayerKind::Conv, "conv1", hidden, 1, true};
  nn::LayerSpec conv2{nn::LayerKind::Conv, "conv2", out, 1, true};
  return nn::Sequential({conv1, nn::LayerSpec{nn::LayerKind::Relu, "relu1"}, conv2,
                         nn::LayerSpec{nn::LayerKind::Relu, "relu2"}});
}

FeatureExtractor FeatureExtractor::standin(int hidden, int out, std::uint64_t seed) {
  if (hidden < 1 || out < 1) throw InvalidArgument("feature extractor needs >= 1 channels");
  nn::Sequential net = make_net(hidden, out);
  nn::ParamStore params;
  std::mt19937_64 rng(seed);
  // He-scaled weights keep roughly half the units active on [-1, 1] images.
  auto conv = [&](const std::string& name, int cin, int cout) {
    std::normal_distribution<double> w(0.0, std::sqrt(2.0 / (9.0 * cin)));
    std::normal_distribution<double> b(0.0, 0.1);
    Tensor wt(3, 3, cin, cout);
    for (double& v : wt.values()) v = w(rng);
    Tensor bt(1, 1, 1, cout);
    for (double& v : bt.values()) v = b(rng);
    params.add(name + "/w", std::move(wt));
    params.add(name + "/b", std::move(bt));
  };
  conv("conv1", 3, hidden);
  conv("conv2", hidden, out);
  return FeatureExtractor(std::move(net), std::move(params), out);
}

FeatureExtractor FeatureExtractor::from_params(nn::ParamStore params) {
  for (const char* name : {"conv1/w", "conv1/b", "conv2/w", "conv2/b"}) {
    if (!params.contains(name)) {
      throw InvalidArgument(std::string("feature extractor weights: missing '") + name + "'");
    }
  }
  const Tensor& w1 = params.get("conv1/w");
  const Tensor& w2 = params.get("conv2/w");
  if (w1.batch() != 3 || w1.height() != 3 || w1.width() != 3 || w2.batch() != 3 ||
      w2.height() != 3 || w2.width() != w1.channels() ||
      params.get("conv1/b").channels() != w1.channels() ||
      params.get("conv2/b").channels() != w2.channels()) {
    throw InvalidArgument("feature extractor weights: inconsistent shapes");
  }
  const int out = w2.channels();
  return FeatureExtractor(make_net(w1.channels(), out), std::move(params), out);
}

Tensor FeatureExtractor::extract(const Tensor& image) const {
  if (image.channels() != 3) throw InvalidArgument("extract_features: expected an RGB image");
  return net_.forward(params_, image, nn::Mode::Eval, 0, nullptr);
}

Tensor FeatureExtractor::extract(const Tensor& image, nn::Sequential::Trace& trace) const {
  if (image.channels() != 3) throw InvalidArgument("extract_features: expected an RGB image");
  return net_.forward(params_, image, nn::Mode::Eval, 0, &trace);
}

Tensor FeatureExtractor::backward(const nn::Sequential::Trace& trace,
                                  const Tensor& grad_features) const {
  nn::GradStore discarded;
  return net_.backward(params_, trace, grad_features, discarded);
}

}  // namespace deformwarp
