#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "deformwarp/pose.hpp"
#include "deformwarp/tensor.hpp"

namespace deformwarp {

/// Toy textured stick figures. Lengths are fractions of the image height.
struct SyntheticFigureSpec {
  std::uint64_t seed = 0;
  int width = 32;
  int height = 64;

  double head_radius = 0.065;
  double torso_length = 0.30;
  double shoulder_half_width = 0.085;
  double hip_half_width = 0.055;
  double upper_arm = 0.17;
  double lower_arm = 0.15;
  double upper_leg = 0.22;
  double lower_leg = 0.21;
  double limb_width = 0.06;
  double margin = 0.04;  // kept free around the figure

  /// Sampling ranges in radians, measured from straight down.
  double max_arm_swing = 1.1;
  double max_elbow_bend = 1.2;
  double max_leg_swing = 0.45;
  double max_knee_bend = 0.8;
  double max_lean = 0.12;

  bool stripes = true;
  /// Chance that each elbow, wrist, knee and ankle is marked invisible.
  double occlusion_probability = 0.0;

  void validate() const;
};

struct SyntheticPair {
  Tensor x_a, x_b;  // (1, H, W, 3) in [-1, 1]
  Pose pose_a, pose_b;
  RegionMask mask_a, mask_b;  // rendered foreground
};

/// Identity-preserving appearance drawn once from `rng`.
struct FigureAppearance {
  std::array<std::array<double, 3>, kNumParts> part_colors{};
  std::array<double, 3> stripe_color{};
  bool stripes = true;
};

FigureAppearance sample_appearance(const SyntheticFigureSpec& spec, std::mt19937_64& rng);
Pose sample_pose(const SyntheticFigureSpec& spec, std::mt19937_64& rng);
/// Draws the figure over a flat background; returns the foreground mask.
RegionMask render_figure(const SyntheticFigureSpec& spec, const FigureAppearance& look,
                         const Pose& pose, const std::array<double, 3>& background, Tensor& image);

/// Same figure in two sampled poses over two distinct flat backgrounds.
SyntheticPair generate_synthetic_pair(const SyntheticFigureSpec& spec, std::mt19937_64& rng);

/// Pair `index` of the dataset defined by spec.seed.
SyntheticPair synthetic_pair_at(const SyntheticFigureSpec& spec, std::uint64_t index);

}  // namespace deformwarp
