#include "deformwarp/pose.hpp"

#include <algorithm>
#include <cmath>

#include "deformwarp/error.hpp"

namespace deformwarp {
namespace {

struct LimbJoints {
  PartId part;
  Joint from;
  Joint to;
};

constexpr std::array<LimbJoints, 8> kLimbs{{
    {PartId::LUpperArm, Joint::LShoulder, Joint::LElbow},
    {PartId::RUpperArm, Joint::RShoulder, Joint::RElbow},
    {PartId::LLowerArm, Joint::LElbow, Joint::LWrist},
    {PartId::RLowerArm, Joint::RElbow, Joint::RWrist},
    {PartId::LUpperLeg, Joint::LHip, Joint::LKnee},
    {PartId::RUpperLeg, Joint::RHip, Joint::RKnee},
    {PartId::LLowerLeg, Joint::LKnee, Joint::LAnkle},
    {PartId::RLowerLeg, Joint::RKnee, Joint::RAnkle},
}};

constexpr std::array<Joint, 6> kHeadJoints{Joint::Nose, Joint::Neck, Joint::REye,
                                           Joint::LEye, Joint::REar, Joint::LEar};

Point to_point(const Keypoint& k) { return {k.x, k.y}; }

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

}  // namespace

std::string_view part_name(PartId id) {
  switch (id) {
    case PartId::Head: return "head";
    case PartId::Torso: return "torso";
    case PartId::LUpperArm: return "left_upper_arm";
    case PartId::RUpperArm: return "right_upper_arm";
    case PartId::LLowerArm: return "left_lower_arm";
    case PartId::RLowerArm: return "right_lower_arm";
    case PartId::LUpperLeg: return "left_upper_leg";
    case PartId::RUpperLeg: return "right_upper_leg";
    case PartId::LLowerLeg: return "left_lower_leg";
    case PartId::RLowerLeg: return "right_lower_leg";
  }
  return "unknown";
}

bool is_limb(PartId id) { return id != PartId::Head && id != PartId::Torso; }

PartId mirror_part(PartId id) {
  if (!is_limb(id)) return id;
  // Limbs come in (left, right) pairs starting at index 2.
  const int i = static_cast<int>(id);
  return static_cast<PartId>(i % 2 == 0 ? i + 1 : i - 1);
}

RegionSet::RegionSet() {
  for (int i = 0; i < kNumParts; ++i) regions[i].part = static_cast<PartId>(i);
}

std::size_t RegionMask::area() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

Tensor heatmap_from_pose(const Pose& pose, int width, int height, double sigma,
                         HeatmapKernel kernel) {
  if (width < 1 || height < 1) throw InvalidArgument("heatmap: width and height must be >= 1");
  if (!(sigma > 0.0)) throw InvalidArgument("heatmap: sigma must be positive");
  Tensor maps(1, height, width, kNumJoints, 0.0);
  const double inv_s2 = 1.0 / (sigma * sigma);
  for (int j = 0; j < kNumJoints; ++j) {
    const Keypoint& k = pose.joints[j];
    if (!k.visible) continue;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double dx = x - k.x;
        const double dy = y - k.y;
        const double d2 = dx * dx + dy * dy;
        const double d = kernel == HeatmapKernel::AsPrinted ? std::sqrt(d2) : d2;
        maps(y, x, j) = std::exp(-d * inv_s2);
      }
    }
  }
  return maps;
}

double limb_thickness(const Pose& pose, int width, int height) {
  const Keypoint& ls = pose[Joint::LShoulder];
  const Keypoint& rs = pose[Joint::RShoulder];
  const Keypoint& lh = pose[Joint::LHip];
  const Keypoint& rh = pose[Joint::RHip];
  if (ls.visible && rs.visible && lh.visible && rh.visible) {
    const double d1 = distance(to_point(ls), to_point(rh));
    const double d2 = distance(to_point(rs), to_point(lh));
    return (d1 + d2) / 2.0 / 3.0;
  }
  return std::hypot(width - 1.0, height - 1.0) / 6.0;
}

Quad limb_rectangle(Point a, Point b, double thickness) {
  const double len = distance(a, b);
  const double half = thickness / 2.0;
  const Point n{-(b.y - a.y) / len * half, (b.x - a.x) / len * half};
  return {Point{a.x - n.x, a.y - n.y}, Point{b.x - n.x, b.y - n.y}, Point{b.x + n.x, b.y + n.y},
          Point{a.x + n.x, a.y + n.y}};
}

RegionSet decompose_regions(const Pose& pose, int width, int height) {
  RegionSet set;

  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  int head_count = 0;
  for (Joint j : kHeadJoints) {
    const Keypoint& k = pose[j];
    if (!k.visible) continue;
    if (head_count == 0) {
      xmin = xmax = k.x;
      ymin = ymax = k.y;
    } else {
      xmin = std::min(xmin, k.x);
      xmax = std::max(xmax, k.x);
      ymin = std::min(ymin, k.y);
      ymax = std::max(ymax, k.y);
    }
    ++head_count;
  }
  if (head_count >= 2 && xmax > xmin && ymax > ymin) {
    set[PartId::Head].corners =
        Quad{Point{xmin, ymin}, Point{xmax, ymin}, Point{xmax, ymax}, Point{xmin, ymax}};
  }

  const double w1 = width - 1.0;
  const double h1 = height - 1.0;
  set[PartId::Torso].corners = Quad{Point{0, 0}, Point{w1, 0}, Point{w1, h1}, Point{0, h1}};

  const double thickness = limb_thickness(pose, width, height);
  for (const LimbJoints& limb : kLimbs) {
    const Keypoint& a = pose[limb.from];
    const Keypoint& b = pose[limb.to];
    if (!a.visible || !b.visible) continue;
    if (distance(to_point(a), to_point(b)) <= 0.0 || !(thickness > 0.0)) continue;
    set[limb.part].corners = limb_rectangle(to_point(a), to_point(b), thickness);
  }
  return set;
}

RegionMask region_mask(const BodyRegion& region, int width, int height) {
  RegionMask mask(region.part, width, height, 0);
  if (region.empty()) return mask;
  const Quad& q = *region.corners;
  const double e1x = q[1].x - q[0].x, e1y = q[1].y - q[0].y;
  const double e3x = q[3].x - q[0].x, e3y = q[3].y - q[0].y;
  const double len1 = e1x * e1x + e1y * e1y;
  const double len3 = e3x * e3x + e3y * e3y;
  const double tol1 = 1e-9 * len1;
  const double tol3 = 1e-9 * len3;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double px = x - q[0].x;
      const double py = y - q[0].y;
      const double u = px * e1x + py * e1y;
      const double v = px * e3x + py * e3y;
      if (u >= -tol1 && u <= len1 + tol1 && v >= -tol3 && v <= len3 + tol3) mask.at(y, x) = 1;
    }
  }
  return mask;
}

RegionSet apply_symmetry_fallback(const RegionSet& a, const RegionSet& b) {
  RegionSet out = a;
  for (int i = 0; i < kNumParts; ++i) {
    const auto id = static_cast<PartId>(i);
    if (!is_limb(id)) continue;
    const BodyRegion& twin = a[mirror_part(id)];
    if (a[id].empty() && !twin.empty() && !b[id].empty()) out[id].corners = twin.corners;
  }
  return out;
}

RegionMask scale_mask(const RegionMask& mask, int new_width, int new_height) {
  if (new_width < 1 || new_height < 1) throw InvalidArgument("scale_mask: target dims must be >= 1");
  if (mask.width < 1 || mask.height < 1) throw InvalidArgument("scale_mask: empty source mask");
  RegionMask out(mask.part, new_width, new_height, 0);
  // Feature pixel i sits at image coordinate i * (src / dst).
  const double sy = static_cast<double>(mask.height) / new_height;
  const double sx = static_cast<double>(mask.width) / new_width;
  for (int y = 0; y < new_height; ++y) {
    const int src_y = std::min(mask.height - 1, static_cast<int>(std::floor(y * sy + 0.5)));
    for (int x = 0; x < new_width; ++x) {
      const int src_x = std::min(mask.width - 1, static_cast<int>(std::floor(x * sx + 0.5)));
      out.at(y, x) = mask.at(src_y, src_x);
    }
  }
  return out;
}

}  // namespace deformwarp
