#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "deformwarp/affine.hpp"
#include "deformwarp/pose.hpp"
#include "deformwarp/tensor.hpp"

namespace deformwarp {

struct WarpPart {
  std::optional<AffineParams> affine;  // absent <=> mask is all zero
  RegionMask mask;
};

/// Per-part transforms and masks at one feature resolution.
struct WarpPlan {
  int width = 0;
  int height = 0;
  std::array<WarpPart, kNumParts> parts;

  std::vector<PartId> empty_parts() const;
};

/// Region pair for a conditioning/target pose pair, with the symmetry
/// fallback applied to the conditioning side.
struct RegionPair {
  RegionSet a;
  RegionSet b;
};

RegionPair region_pair(const Pose& pose_a, const Pose& pose_b, int width, int height);

/// Fits f_h from a-regions to b-regions at image resolution and rescales
/// transforms and masks to a width x height feature map. Parts whose fit is
/// degenerate or singular become empty.
WarpPlan build_warp_plan(const RegionPair& regions, int image_width, int image_height,
                         int feature_width, int feature_height);

/// Inverse-bilinear warp of F * mask through `params`. F has batch 1.
/// Throws SingularTransform when |det A| < 1e-8.
Tensor deform_masked(const Tensor& F, const RegionMask& mask, const AffineParams& params);

/// Winning part per element of a max-merge; lowest index wins ties.
struct ArgmaxField {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> part;
};

struct MergeResult {
  Tensor merged;
  ArgmaxField argmax;
};

MergeResult merge_max_with_argmax(std::span<const Tensor> parts);
Tensor merge_max(std::span<const Tensor> parts);

/// Test-only variant of the merge: elementwise mean.
Tensor merge_mean(std::span<const Tensor> parts);

/// d(F): warp every part of the plan (empty parts give zero maps) and
/// max-merge. F has batch 1.
MergeResult deform(const Tensor& F, const WarpPlan& plan);

/// dL/dF for deform(F, plan) given dL/d(d(F)).
Tensor deform_backward(const Tensor& grad_out, const WarpPlan& plan, const Tensor& F,
                       const ArgmaxField& argmax);

}  // namespace deformwarp
