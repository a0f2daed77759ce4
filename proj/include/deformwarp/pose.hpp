#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "deformwarp/tensor.hpp"

namespace deformwarp {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  bool visible = false;
};

inline constexpr int kNumJoints = 18;

/// COCO-18 joint order as produced by OpenPose-style estimators.
enum class Joint : int {
  Nose = 0,
  Neck,
  RShoulder,
  RElbow,
  RWrist,
  LShoulder,
  LElbow,
  LWrist,
  RHip,
  RKnee,
  RAnkle,
  LHip,
  LKnee,
  LAnkle,
  REye,
  LEye,
  REar,
  LEar,
};

struct Pose {
  std::array<Keypoint, kNumJoints> joints{};

  Keypoint& operator[](Joint j) { return joints[static_cast<int>(j)]; }
  const Keypoint& operator[](Joint j) const { return joints[static_cast<int>(j)]; }
};

inline constexpr int kNumParts = 10;

enum class PartId : int {
  Head = 0,
  Torso,
  LUpperArm,
  RUpperArm,
  LLowerArm,
  RLowerArm,
  LUpperLeg,
  RUpperLeg,
  LLowerLeg,
  RLowerLeg,
};

std::string_view part_name(PartId id);
bool is_limb(PartId id);
/// Left/right twin of a limb; head and torso map to themselves.
PartId mirror_part(PartId id);

using Quad = std::array<Point, 4>;

struct BodyRegion {
  PartId part = PartId::Head;
  std::optional<Quad> corners;

  bool empty() const { return !corners.has_value(); }
};

struct RegionSet {
  std::array<BodyRegion, kNumParts> regions{};

  RegionSet();
  BodyRegion& operator[](PartId id) { return regions[static_cast<int>(id)]; }
  const BodyRegion& operator[](PartId id) const { return regions[static_cast<int>(id)]; }
};

struct RegionMask {
  PartId part = PartId::Head;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;  // row-major, height x width

  RegionMask() = default;
  RegionMask(PartId id, int w, int h, std::uint8_t fill = 0)
      : part(id), width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t area() const;
  bool all_zero() const { return area() == 0; }
};

enum class HeatmapKernel {
  /// exp(-|p - p_j| / sigma^2), the unsquared distance.
  AsPrinted,
  /// exp(-|p - p_j|^2 / sigma^2).
  SquaredNorm,
};

inline constexpr double kDefaultSigma = 6.0;

/// Per-joint heat maps as a (1, height, width, 18) tensor. Invisible joints
/// give all-zero channels.
Tensor heatmap_from_pose(const Pose& pose, int width, int height, double sigma = kDefaultSigma,
                         HeatmapKernel kernel = HeatmapKernel::AsPrinted);

/// Ten rigid regions: head bounding box, whole-image torso, and one rotated
/// rectangle per limb segment.
RegionSet decompose_regions(const Pose& pose, int width, int height);

/// Length of the limb rectangles' minor axis for this pose.
double limb_thickness(const Pose& pose, int width, int height);

/// Rotated rectangle with its major axis on [a, b] and total minor-axis
/// length `thickness`. Corner order: a-n, b-n, b+n, a+n with n the left normal.
Quad limb_rectangle(Point a, Point b, double thickness);

RegionMask region_mask(const BodyRegion& region, int width, int height);

/// Fills empty limbs of `a` from their twin in `a` when the same limb is
/// present in `b`.
RegionSet apply_symmetry_fallback(const RegionSet& a, const RegionSet& b);

/// Nearest-neighbour resampling of a binary mask.
RegionMask scale_mask(const RegionMask& mask, int new_width, int new_height);

}  // namespace deformwarp
