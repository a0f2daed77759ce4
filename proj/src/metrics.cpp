#include "deformwarp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "deformwarp/error.hpp"

namespace deformwarp {
namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size) * size);
  const int r = size / 2;
  double sum = 0.0;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dy = y - r, dx = x - r;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w[static_cast<std::size_t>(y) * size + x] = v;
      sum += v;
    }
  }
  for (double& v : w) v /= sum;
  return w;
}

std::vector<double> grayscale(const Tensor& img) {
  const int C = img.channels();
  std::vector<double> g(static_cast<std::size_t>(img.height()) * img.width());
  for (std::size_t p = 0; p < g.size(); ++p) {
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += img[p * C + c];
    g[p] = s / C;
  }
  return g;
}

}  // namespace

double ssim(const Tensor& x, const Tensor& y, const SsimConfig& cfg) {
  if (!x.same_shape(y)) {
    throw InvalidArgument("ssim: shape mismatch " + x.shape_string() + " vs " + y.shape_string());
  }
  if (x.batch() != 1) throw InvalidArgument("ssim: expected single images");
  if (cfg.window < 1 || cfg.window % 2 == 0 || !(cfg.window_sigma > 0.0) ||
      !(cfg.dynamic_range > 0.0)) {
    throw InvalidArgument("ssim: invalid configuration");
  }
  const int H = x.height(), W = x.width();
  int size = std::min({cfg.window, H, W});
  if (size % 2 == 0) --size;
  const std::vector<double> win = gaussian_window(size, cfg.window_sigma);
  const std::vector<double> gx = grayscale(x);
  const std::vector<double> gy = grayscale(y);
  const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
  const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);

  double total = 0.0;
  long count = 0;
  for (int oy = 0; oy + size <= H; ++oy) {
    for (int ox = 0; ox + size <= W; ++ox) {
      double mx = 0, my = 0, exx = 0, eyy = 0, exy = 0;
      for (int wy = 0; wy < size; ++wy) {
        for (int wx = 0; wx < size; ++wx) {
          const double w = win[static_cast<std::size_t>(wy) * size + wx];
          const std::size_t p = static_cast<std::size_t>(oy + wy) * W + (ox + wx);
          const double a = gx[p], b = gy[p];
          mx += w * a;
          my += w * b;
          exx += w * a * a;
          eyy += w * b * b;
          exy += w * a * b;
        }
      }
      const double sxx = exx - mx * mx;
      const double syy = eyy - my * my;
      const double sxy = exy - mx * my;
      const double num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
      const double den = (mx * mx + my * my + c1) * (sxx + syy + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

Tensor apply_mask(const Tensor& image, const RegionMask& mask) {
  if (image.batch() != 1 || mask.width != image.width() || mask.height != image.height()) {
    throw InvalidArgument("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                          " does not match image " + image.shape_string());
  }
  Tensor out = image;
  const int C = image.channels();
  for (std::size_t p = 0; p < mask.values.size(); ++p) {
    if (mask.values[p]) continue;
    for (int c = 0; c < C; ++c) out[p * C + c] = 0.0;
  }
  return out;
}

double mask_ssim(const Tensor& x, const Tensor& y, const RegionMask& mask, const SsimConfig& cfg) {
  if (!x.same_shape(y)) {
    throw InvalidArgument("mask_ssim: shape mismatch " + x.shape_string() + " vs " +
                          y.shape_string());
  }
  return ssim(apply_mask(x, mask), apply_mask(y, mask), cfg);
}

}  // namespace deformwarp
