#include "deformwarp/synth.hpp"

#include <algorithm>
#include <cmath>

#include "deformwarp/error.hpp"
#include "deformwarp/nn.hpp"

namespace deformwarp {
namespace {

using Color = std::array<double, 3>;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Point add(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
Point scale(Point a, double s) { return {a.x * s, a.y * s}; }

// Unit vector at `angle` from straight down, positive towards +x.
Point down_dir(double angle) { return {std::sin(angle), std::cos(angle)}; }

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

bool inside_convex(Point p, const std::array<Point, 4>& q) {
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const Point a = q[i], b = q[(i + 1) % 4];
    const double cr = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    const int s = cr > 0 ? 1 : (cr < 0 ? -1 : 0);
    if (s == 0) continue;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return true;
}

Point joint(const Pose& p, Joint j) { return {p[j].x, p[j].y}; }

Color sample_color(std::mt19937_64& rng) {
  return {uniform(rng, -0.85, 0.85), uniform(rng, -0.85, 0.85), uniform(rng, -0.85, 0.85)};
}

double color_distance(const Color& a, const Color& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

}  // namespace

void SyntheticFigureSpec::validate() const {
  if (width < 8 || height < 8) throw InvalidArgument("synthetic images need at least 8x8 pixels");
  for (double v : {head_radius, torso_length, shoulder_half_width, hip_half_width, upper_arm,
                   lower_arm, upper_leg, lower_leg, limb_width}) {
    if (!(v > 0.0)) throw InvalidArgument("synthetic figure lengths must be positive");
  }
  if (!(margin >= 0.0 && margin < 0.5)) throw InvalidArgument("synthetic margin out of range");
  if (!(occlusion_probability >= 0.0 && occlusion_probability <= 1.0)) {
    throw InvalidArgument("occlusion probability must lie in [0, 1]");
  }
}

FigureAppearance sample_appearance(const SyntheticFigureSpec& spec, std::mt19937_64& rng) {
  FigureAppearance look;
  for (auto& c : look.part_colors) c = sample_color(rng);
  look.stripe_color = sample_color(rng);
  look.stripes = spec.stripes;
  return look;
}

Pose sample_pose(const SyntheticFigureSpec& spec, std::mt19937_64& rng) {
  const double H = spec.height;
  const double lean = uniform(rng, -spec.max_lean, spec.max_lean);
  const Point axis = down_dir(lean);
  const Point right{axis.y, -axis.x};  // image +x for an upright figure

  Pose pose;
  auto set = [&](Joint j, Point p) { pose[j] = {p.x, p.y, true}; };
  const Point neck{0.0, 0.0};
  const Point hip_center = scale(axis, spec.torso_length * H);
  set(Joint::Neck, neck);
  // The figure faces the viewer, so its right side is on image left.
  set(Joint::RShoulder, add(neck, scale(right, -spec.shoulder_half_width * H)));
  set(Joint::LShoulder, add(neck, scale(right, spec.shoulder_half_width * H)));
  set(Joint::RHip, add(hip_center, scale(right, -spec.hip_half_width * H)));
  set(Joint::LHip, add(hip_center, scale(right, spec.hip_half_width * H)));

  const double r = spec.head_radius * H;
  const Point head = add(neck, scale(axis, -1.3 * r));
  const double yaw = uniform(rng, -0.3, 0.3) * r;
  set(Joint::Nose, add(head, {yaw, 0.15 * r}));
  set(Joint::REye, add(head, {yaw - 0.35 * r, -0.25 * r}));
  set(Joint::LEye, add(head, {yaw + 0.35 * r, -0.25 * r}));
  set(Joint::REar, add(head, {-0.9 * r, -0.05 * r}));
  set(Joint::LEar, add(head, {0.9 * r, -0.05 * r}));

  struct Chain {
    Joint root, mid, end;
    double side, upper, lower, swing, bend;
  };
  const Chain chains[] = {
      {Joint::RShoulder, Joint::RElbow, Joint::RWrist, -1, spec.upper_arm, spec.lower_arm,
       spec.max_arm_swing, spec.max_elbow_bend},
      {Joint::LShoulder, Joint::LElbow, Joint::LWrist, 1, spec.upper_arm, spec.lower_arm,
       spec.max_arm_swing, spec.max_elbow_bend},
      {Joint::RHip, Joint::RKnee, Joint::RAnkle, -1, spec.upper_leg, spec.lower_leg,
       spec.max_leg_swing, spec.max_knee_bend},
      {Joint::LHip, Joint::LKnee, Joint::LAnkle, 1, spec.upper_leg, spec.lower_leg,
       spec.max_leg_swing, spec.max_knee_bend},
  };
  for (const Chain& c : chains) {
    const double a = uniform(rng, -0.2 * c.swing, c.swing);
    const double bend = uniform(rng, -c.bend, c.bend);
    const Point mid = add(joint(pose, c.root), scale(down_dir(c.side * a), c.upper * H));
    const Point end = add(mid, scale(down_dir(c.side * (a + bend)), c.lower * H));
    set(c.mid, mid);
    set(c.end, end);
  }

  // Fit the figure inside the frame, then jitter it within the slack.
  const double pad = std::max(r, 0.5 * spec.limb_width * H) + 1.0;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const Keypoint& k : pose.joints) {
    x0 = std::min(x0, k.x - pad);
    x1 = std::max(x1, k.x + pad);
    y0 = std::min(y0, k.y - pad);
    y1 = std::max(y1, k.y + pad);
  }
  y0 = std::min(y0, head.y - r - 1.0);
  const double m = spec.margin * H;
  const double avail_w = spec.width - 1 - 2 * m, avail_h = spec.height - 1 - 2 * m;
  const double s = std::min({1.0, avail_w / (x1 - x0), avail_h / (y1 - y0)});
  const double slack_x = avail_w - s * (x1 - x0), slack_y = avail_h - s * (y1 - y0);
  const double ox = m + uniform(rng, 0.0, slack_x) - s * x0;
  const double oy = m + uniform(rng, 0.0, slack_y) - s * y0;
  for (Keypoint& k : pose.joints) {
    k.x = ox + s * k.x;
    k.y = oy + s * k.y;
  }

  if (spec.occlusion_probability > 0.0) {
    std::bernoulli_distribution hide(spec.occlusion_probability);
    for (Joint j : {Joint::RElbow, Joint::RWrist, Joint::LElbow, Joint::LWrist, Joint::RKnee,
                    Joint::RAnkle, Joint::LKnee, Joint::LAnkle}) {
      if (hide(rng)) pose[j].visible = false;
    }
  }
  return pose;
}

RegionMask render_figure(const SyntheticFigureSpec& spec, const FigureAppearance& look,
                         const Pose& pose, const Color& background, Tensor& image) {
  const int W = spec.width, H = spec.height;
  image = Tensor(1, H, W, 3);
  RegionMask mask(PartId::Torso, W, H);

  // Scale actually used for the figure, recovered from the shoulder span.
  const double nominal = 2.0 * spec.shoulder_half_width * H;
  const double s = std::hypot(pose[Joint::LShoulder].x - pose[Joint::RShoulder].x,
                              pose[Joint::LShoulder].y - pose[Joint::RShoulder].y) /
                   nominal;
  const double half_w = 0.5 * spec.limb_width * H * s;
  const double r = spec.head_radius * H * s;
  const Point neck = joint(pose, Joint::Neck);
  const Point head_center = add(neck, scale({neck.x - (pose[Joint::RHip].x + pose[Joint::LHip].x) / 2,
                                             neck.y - (pose[Joint::RHip].y + pose[Joint::LHip].y) / 2},
                                            1.3 * r / (spec.torso_length * H * s)));

  struct Segment {
    PartId part;
    Joint a, b;
  };
  // Painter's order: legs, torso, arms, head.
  const Segment legs[] = {{PartId::RUpperLeg, Joint::RHip, Joint::RKnee},
                          {PartId::LUpperLeg, Joint::LHip, Joint::LKnee},
                          {PartId::RLowerLeg, Joint::RKnee, Joint::RAnkle},
                          {PartId::LLowerLeg, Joint::LKnee, Joint::LAnkle}};
  const Segment arms[] = {{PartId::RUpperArm, Joint::RShoulder, Joint::RElbow},
                          {PartId::LUpperArm, Joint::LShoulder, Joint::LElbow},
                          {PartId::RLowerArm, Joint::RElbow, Joint::RWrist},
                          {PartId::LLowerArm, Joint::LElbow, Joint::LWrist}};
  const std::array<Point, 4> torso{joint(pose, Joint::RShoulder), joint(pose, Joint::LShoulder),
                                   joint(pose, Joint::LHip), joint(pose, Joint::RHip)};
  const Point torso_axis{(torso[2].x + torso[3].x) / 2 - neck.x, (torso[2].y + torso[3].y) / 2 - neck.y};
  const double torso_len = std::hypot(torso_axis.x, torso_axis.y);
  const double stripe = std::max(2.0, 0.05 * H * s);

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const Point p{static_cast<double>(x), static_cast<double>(y)};
      const Color* c = &background;
      Color torso_px;
      bool fg = false;
      auto paint = [&](const Color& col) {
        c = &col;
        fg = true;
      };
      for (const Segment& seg : legs) {
        if (segment_distance(p, joint(pose, seg.a), joint(pose, seg.b)) <= half_w) {
          paint(look.part_colors[static_cast<int>(seg.part)]);
        }
      }
      bool in_torso = inside_convex(p, torso);
      for (int i = 0; i < 4 && !in_torso; ++i) {
        in_torso = segment_distance(p, torso[i], torso[(i + 1) % 4]) <= half_w;
      }
      if (in_torso) {
        torso_px = look.part_colors[static_cast<int>(PartId::Torso)];
        if (look.stripes && torso_len > 0) {
          const double t = ((p.x - neck.x) * torso_axis.x + (p.y - neck.y) * torso_axis.y) / torso_len;
          if (static_cast<long>(std::floor(t / stripe)) % 2 != 0) torso_px = look.stripe_color;
        }
        paint(torso_px);
      }
      for (const Segment& seg : arms) {
        if (segment_distance(p, joint(pose, seg.a), joint(pose, seg.b)) <= half_w) {
          paint(look.part_colors[static_cast<int>(seg.part)]);
        }
      }
      if (std::hypot(p.x - head_center.x, p.y - head_center.y) <= r ||
          segment_distance(p, neck, head_center) <= 0.5 * half_w) {
        paint(look.part_colors[static_cast<int>(PartId::Head)]);
      }
      for (int ch = 0; ch < 3; ++ch) image(y, x, ch) = (*c)[ch];
      mask.at(y, x) = fg ? 1 : 0;
    }
  }
  return mask;
}

SyntheticPair generate_synthetic_pair(const SyntheticFigureSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  const FigureAppearance look = sample_appearance(spec, rng);
  const Color bg_a = sample_color(rng);
  Color bg_b = sample_color(rng);
  for (int tries = 0; tries < 64 && color_distance(bg_a, bg_b) < 0.6; ++tries) bg_b = sample_color(rng);
  if (color_distance(bg_a, bg_b) < 0.6) {
    for (int ch = 0; ch < 3; ++ch) bg_b[ch] = bg_a[ch] > 0 ? bg_a[ch] - 0.5 : bg_a[ch] + 0.5;
  }
  SyntheticPair pair;
  pair.pose_a = sample_pose(spec, rng);
  pair.pose_b = sample_pose(spec, rng);
  pair.mask_a = render_figure(spec, look, pair.pose_a, bg_a, pair.x_a);
  pair.mask_b = render_figure(spec, look, pair.pose_b, bg_b, pair.x_b);
  return pair;
}

SyntheticPair synthetic_pair_at(const SyntheticFigureSpec& spec, std::uint64_t index) {
  std::mt19937_64 rng(nn::mix_seed(spec.seed, index, 0x5f17));
  return generate_synthetic_pair(spec, rng);
}

}  // namespace deformwarp
