#pragma once

#include "deformwarp/pose.hpp"
#include "deformwarp/tensor.hpp"

namespace deformwarp {

/// Standard SSIM constants: 11x11 Gaussian window with sigma 1.5,
/// K1 = 0.01, K2 = 0.03.
struct SsimConfig {
  int window = 11;
  double window_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 2.0;  // [-1, 1] images; use 255 for 8-bit data

  static SsimConfig signed_unit() { return {}; }
  static SsimConfig eight_bit() {
    SsimConfig c;
    c.dynamic_range = 255.0;
    return c;
  }
};

/// Mean of the local SSIM map over the grayscale (channel mean) images. Only
/// window positions fully inside the image contribute; images smaller than the
/// window use the largest odd window that fits.
double ssim(const Tensor& x, const Tensor& y, const SsimConfig& cfg = {});

/// SSIM after zeroing pixels where mask == 0 in both images.
double mask_ssim(const Tensor& x, const Tensor& y, const RegionMask& mask,
                 const SsimConfig& cfg = {});

/// Multiplies every channel by the mask.
Tensor apply_mask(const Tensor& image, const RegionMask& mask);

}  // namespace deformwarp
