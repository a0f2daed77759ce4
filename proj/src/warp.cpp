#include "deformwarp/warp.hpp"

#include <cmath>
#include <string>

#include "deformwarp/error.hpp"
#include "deformwarp/parallel.hpp"

namespace deformwarp {
namespace {

constexpr double kExtentTol = 1e-9;

struct Taps {
  int count = 0;
  std::array<int, 4> pixel{};  // y * width + x in the source
  std::array<double, 4> weight{};
};

// Bilinear taps of the source point f^-1(q). Points outside the source extent
// get no taps, so their output stays zero.
Taps bilinear_taps(const AffineParams& inv, int qx, int qy, int width, int height) {
  Taps t;
  const Point p = apply_affine(inv, Point{static_cast<double>(qx), static_cast<double>(qy)});
  if (!(p.x >= -kExtentTol && p.x <= width - 1 + kExtentTol && p.y >= -kExtentTol &&
        p.y <= height - 1 + kExtentTol)) {
    return t;
  }
  const int x0 = static_cast<int>(std::floor(p.x));
  const int y0 = static_cast<int>(std::floor(p.y));
  const double fx = p.x - x0;
  const double fy = p.y - y0;
  const int xs[2] = {x0, x0 + 1};
  const int ys[2] = {y0, y0 + 1};
  const double wx[2] = {1.0 - fx, fx};
  const double wy[2] = {1.0 - fy, fy};
  for (int j = 0; j < 2; ++j) {
    if (ys[j] < 0 || ys[j] >= height) continue;
    for (int i = 0; i < 2; ++i) {
      if (xs[i] < 0 || xs[i] >= width) continue;
      const double w = wx[i] * wy[j];
      if (w == 0.0) continue;
      t.pixel[t.count] = ys[j] * width + xs[i];
      t.weight[t.count] = w;
      ++t.count;
    }
  }
  return t;
}

void check_feature_map(const Tensor& F, const char* who) {
  if (F.batch() != 1) {
    throw InvalidArgument(std::string(who) + ": expected a single feature map, got batch " +
                          std::to_string(F.batch()));
  }
}

}  // namespace

std::vector<PartId> WarpPlan::empty_parts() const {
  std::vector<PartId> out;
  for (int i = 0; i < kNumParts; ++i) {
    if (!parts[i].affine) out.push_back(static_cast<PartId>(i));
  }
  return out;
}

RegionPair region_pair(const Pose& pose_a, const Pose& pose_b, int width, int height) {
  RegionPair rp;
  rp.b = decompose_regions(pose_b, width, height);
  rp.a = apply_symmetry_fallback(decompose_regions(pose_a, width, height), rp.b);
  return rp;
}

WarpPlan build_warp_plan(const RegionPair& regions, int image_width, int image_height,
                         int feature_width, int feature_height) {
  if (image_width < 1 || image_height < 1 || feature_width < 1 || feature_height < 1) {
    throw InvalidArgument("build_warp_plan: dimensions must be >= 1");
  }
  WarpPlan plan;
  plan.width = feature_width;
  plan.height = feature_height;
  const double sx = static_cast<double>(feature_width) / image_width;
  const double sy = static_cast<double>(feature_height) / image_height;
  for (int h = 0; h < kNumParts; ++h) {
    const auto id = static_cast<PartId>(h);
    WarpPart& part = plan.parts[h];
    part.mask = RegionMask(id, feature_width, feature_height, 0);
    const BodyRegion& ra = regions.a[id];
    const BodyRegion& rb = regions.b[id];
    if (ra.empty() || rb.empty()) continue;
    AffineParams f;
    try {
      f = fit_affine(*ra.corners, *rb.corners);
      invert(f);
    } catch (const DegenerateGeometry&) {
      continue;
    } catch (const SingularTransform&) {
      continue;
    }
    RegionMask mask = region_mask(ra, image_width, image_height);
    part.mask = scale_mask(mask, feature_width, feature_height);
    part.affine = scale_affine(f, sx, sy);
  }
  return plan;
}

Tensor deform_masked(const Tensor& F, const RegionMask& mask, const AffineParams& params) {
  check_feature_map(F, "deform_masked");
  if (mask.width != F.width() || mask.height != F.height()) {
    throw InvalidArgument("deform_masked: mask " + std::to_string(mask.height) + "x" +
                          std::to_string(mask.width) + " does not match feature map " +
                          F.shape_string());
  }
  const AffineParams inv = invert(params);
  const int H = F.height(), W = F.width(), C = F.channels();
  Tensor out = Tensor::like(F);
  for (int qy = 0; qy < H; ++qy) {
    for (int qx = 0; qx < W; ++qx) {
      const Taps taps = bilinear_taps(inv, qx, qy, W, H);
      double* dst = out.data() + (static_cast<std::size_t>(qy) * W + qx) * C;
      for (int k = 0; k < taps.count; ++k) {
        const int px = taps.pixel[k];
        if (!mask.values[px]) continue;
        const double w = taps.weight[k];
        const double* src = F.data() + static_cast<std::size_t>(px) * C;
        for (int c = 0; c < C; ++c) dst[c] += w * src[c];
      }
    }
  }
  return out;
}

MergeResult merge_max_with_argmax(std::span<const Tensor> parts) {
  if (parts.empty()) throw InvalidArgument("merge_max: no inputs");
  if (parts.size() > 255) throw InvalidArgument("merge_max: too many inputs");
  const Tensor& first = parts.front();
  for (const Tensor& t : parts) {
    if (!t.same_shape(first)) {
      throw InvalidArgument("merge_max: shape mismatch " + t.shape_string() + " vs " +
                            first.shape_string());
    }
  }
  MergeResult r{first, ArgmaxField{first.height(), first.width(), first.channels(),
                                   std::vector<std::uint8_t>(first.size(), 0)}};
  for (std::size_t h = 1; h < parts.size(); ++h) {
    const Tensor& t = parts[h];
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] > r.merged[i]) {
        r.merged[i] = t[i];
        r.argmax.part[i] = static_cast<std::uint8_t>(h);
      }
    }
  }
  return r;
}

Tensor merge_max(std::span<const Tensor> parts) { return merge_max_with_argmax(parts).merged; }

Tensor merge_mean(std::span<const Tensor> parts) {
  if (parts.empty()) throw InvalidArgument("merge_mean: no inputs");
  Tensor out = Tensor::like(parts.front());
  for (const Tensor& t : parts) out += t;
  out *= 1.0 / static_cast<double>(parts.size());
  return out;
}

MergeResult deform(const Tensor& F, const WarpPlan& plan) {
  check_feature_map(F, "deform");
  if (plan.width != F.width() || plan.height != F.height()) {
    throw InvalidArgument("deform: plan resolution " + std::to_string(plan.height) + "x" +
                          std::to_string(plan.width) + " does not match feature map " +
                          F.shape_string());
  }
  std::vector<Tensor> warped(kNumParts);
  for (int h = 0; h < kNumParts; ++h) {
    const WarpPart& part = plan.parts[h];
    if (part.affine) invert(*part.affine);  // surface singular transforms before going parallel
  }
  parallel_for(kNumParts, [&](std::size_t h) {
    const WarpPart& part = plan.parts[h];
    warped[h] = part.affine ? deform_masked(F, part.mask, *part.affine) : Tensor::like(F);
  });
  return merge_max_with_argmax(warped);
}

Tensor deform_backward(const Tensor& grad_out, const WarpPlan& plan, const Tensor& F,
                       const ArgmaxField& argmax) {
  check_feature_map(F, "deform_backward");
  if (!grad_out.same_shape(F) || argmax.height != F.height() || argmax.width != F.width() ||
      argmax.channels != F.channels() || argmax.part.size() != F.size() ||
      plan.width != F.width() || plan.height != F.height()) {
    throw InvalidState("deform_backward: argmax field or plan does not match the feature map " +
                       F.shape_string());
  }
  const int H = F.height(), W = F.width(), C = F.channels();
  Tensor grad_in = Tensor::like(F);
  // Parts scatter into overlapping source pixels, so they run in order.
  for (int h = 0; h < kNumParts; ++h) {
    const WarpPart& part = plan.parts[h];
    if (!part.affine) continue;
    const AffineParams inv = invert(*part.affine);
    const auto tag = static_cast<std::uint8_t>(h);
    for (int qy = 0; qy < H; ++qy) {
      for (int qx = 0; qx < W; ++qx) {
        const std::size_t base = (static_cast<std::size_t>(qy) * W + qx) * C;
        bool any = false;
        for (int c = 0; c < C; ++c) any = any || argmax.part[base + c] == tag;
        if (!any) continue;
        const Taps taps = bilinear_taps(inv, qx, qy, W, H);
        for (int k = 0; k < taps.count; ++k) {
          const int px = taps.pixel[k];
          if (!part.mask.values[px]) continue;
          const double w = taps.weight[k];
          double* dst = grad_in.data() + static_cast<std::size_t>(px) * C;
          for (int c = 0; c < C; ++c) {
            if (argmax.part[base + c] == tag) dst[c] += w * grad_out[base + c];
          }
        }
      }
    }
  }
  return grad_in;
}

}  // namespace deformwarp
