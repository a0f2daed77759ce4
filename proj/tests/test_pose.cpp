#include <doctest.h>

#include <cmath>

#include "deformwarp/error.hpp"
#include "deformwarp/pose.hpp"
#include "support.hpp"

using namespace deformwarp;
using deformwarp::test::Rng;

namespace {

Pose single_joint(Joint j, double x, double y) {
  Pose p;
  p[j] = {x, y, true};
  return p;
}

int channel_of(Joint j) { return static_cast<int>(j); }

}  // namespace

TEST_CASE("heat map peaks at the joint and follows the unsquared kernel") {
  const Pose p = single_joint(Joint::Nose, 10, 10);
  const Tensor hm = heatmap_from_pose(p, 64, 32, 6.0);
  CHECK(hm.height() == 32);
  CHECK(hm.width() == 64);
  CHECK(hm.channels() == kNumJoints);
  CHECK(hm(10, 10, 0) == 1.0);
  CHECK(hm(10, 46, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(hm(10, 46, 0) == doctest::Approx(0.367879).epsilon(1e-6));
}

TEST_CASE("squared-norm kernel switch") {
  const Pose p = single_joint(Joint::Neck, 3, 4);
  const Tensor hm = heatmap_from_pose(p, 16, 16, 6.0, HeatmapKernel::SquaredNorm);
  CHECK(hm(4, 9, channel_of(Joint::Neck)) == doctest::Approx(std::exp(-36.0 / 36.0)));
  CHECK(hm(10, 3, channel_of(Joint::Neck)) == doctest::Approx(std::exp(-1.0)));
}

TEST_CASE("invisible joints give zero maps and values stay in [0, 1]") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Pose p = test::random_pose(rng, 32, 64);
    for (auto& k : p.joints) k.visible = rng.coin(0.7);
    const Tensor hm = heatmap_from_pose(p, 32, 64);
    for (int j = 0; j < kNumJoints; ++j) {
      double peak = 0.0;
      for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 32; ++x) {
          const double v = hm(y, x, j);
          REQUIRE(v >= 0.0);
          REQUIRE(v <= 1.0);
          peak = std::max(peak, v);
        }
      }
      if (!p.joints[j].visible) {
        CHECK(peak == 0.0);
      } else {
        const int rx = static_cast<int>(std::lround(p.joints[j].x));
        const int ry = static_cast<int>(std::lround(p.joints[j].y));
        const double d = std::hypot(rx - p.joints[j].x, ry - p.joints[j].y);
        CHECK(hm(ry, rx, j) == doctest::Approx(std::exp(-d / 36.0)).epsilon(1e-12));
        CHECK(hm(ry, rx, j) >= std::exp(-std::sqrt(0.5) / 36.0));
      }
    }
  }
}

TEST_CASE("heat map is radially monotone") {
  const Pose p = single_joint(Joint::LWrist, 20.3, 11.7);
  const Tensor hm = heatmap_from_pose(p, 40, 30);
  const int c = channel_of(Joint::LWrist);
  for (int y1 = 0; y1 < 30; y1 += 3) {
    for (int x1 = 0; x1 < 40; x1 += 3) {
      for (int y2 = 1; y2 < 30; y2 += 5) {
        for (int x2 = 1; x2 < 40; x2 += 5) {
          const double d1 = std::hypot(x1 - 20.3, y1 - 11.7);
          const double d2 = std::hypot(x2 - 20.3, y2 - 11.7);
          if (d1 < d2 - 1e-9) CHECK(hm(y1, x1, c) > hm(y2, x2, c));
        }
      }
    }
  }
}

TEST_CASE("heat map argument validation") {
  const Pose p;
  CHECK_THROWS_AS(heatmap_from_pose(p, 0, 8), InvalidArgument);
  CHECK_THROWS_AS(heatmap_from_pose(p, 8, -1), InvalidArgument);
  CHECK_THROWS_AS(heatmap_from_pose(p, 8, 8, 0.0), InvalidArgument);
}

TEST_CASE("torso is the full image") {
  const RegionSet r = decompose_regions(Pose{}, 64, 128);
  const Quad expect{Point{0, 0}, Point{63, 0}, Point{63, 127}, Point{0, 127}};
  REQUIRE(!r[PartId::Torso].empty());
  CHECK(*r[PartId::Torso].corners == expect);
  for (int h = 0; h < kNumParts; ++h) {
    if (static_cast<PartId>(h) != PartId::Torso) CHECK(r.regions[h].empty());
  }
  const RegionMask m = region_mask(r[PartId::Torso], 64, 128);
  CHECK(m.area() == 64u * 128u);
}

TEST_CASE("limb rectangle corners") {
  const double m = 2.5;
  const Quad q = limb_rectangle({0, 0}, {10, 0}, 2 * m);
  CHECK(q[0].x == doctest::Approx(0));
  CHECK(q[0].y == doctest::Approx(-m));
  CHECK(q[1].x == doctest::Approx(10));
  CHECK(q[1].y == doctest::Approx(-m));
  CHECK(q[2].x == doctest::Approx(10));
  CHECK(q[2].y == doctest::Approx(m));
  CHECK(q[3].x == doctest::Approx(0));
  CHECK(q[3].y == doctest::Approx(m));
}

TEST_CASE("limb thickness is a third of the mean torso diagonal") {
  Pose p;
  p[Joint::RShoulder] = {10, 10, true};
  p[Joint::LShoulder] = {20, 10, true};
  p[Joint::RHip] = {10, 30, true};
  p[Joint::LHip] = {20, 30, true};
  const double diag = std::hypot(10.0, 20.0);
  CHECK(limb_thickness(p, 32, 64) == doctest::Approx(diag / 3.0));
  p[Joint::LHip].visible = false;
  CHECK(limb_thickness(p, 32, 64) == doctest::Approx(std::hypot(31.0, 63.0) / 6.0));
}

TEST_CASE("regions of a full pose are rectangles") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Pose p = test::random_pose(rng, 32, 64);
    const RegionSet r = decompose_regions(p, 32, 64);
    for (const BodyRegion& b : r.regions) {
      REQUIRE(!b.empty());
      const Quad& q = *b.corners;
      auto len = [&](int i, int j) { return std::hypot(q[j].x - q[i].x, q[j].y - q[i].y); };
      CHECK(std::abs(len(0, 1) - len(3, 2)) <= 1e-6 * len(0, 1));
      CHECK(std::abs(len(0, 3) - len(1, 2)) <= 1e-6 * len(0, 3));
      // Right angle at every corner.
      const double dotp = (q[1].x - q[0].x) * (q[3].x - q[0].x) + (q[1].y - q[0].y) * (q[3].y - q[0].y);
      CHECK(std::abs(dotp) <= 1e-9 * len(0, 1) * len(0, 3));
    }
  }
}

TEST_CASE("head needs two visible head joints and a non-degenerate box") {
  Pose p;
  p[Joint::Nose] = {5, 5, true};
  CHECK(decompose_regions(p, 32, 32)[PartId::Head].empty());
  p[Joint::Neck] = {5, 9, true};  // same x: zero-width box
  CHECK(decompose_regions(p, 32, 32)[PartId::Head].empty());
  p[Joint::LEar] = {8, 4, true};
  const RegionSet r = decompose_regions(p, 32, 32);
  REQUIRE(!r[PartId::Head].empty());
  const Quad& q = *r[PartId::Head].corners;
  CHECK(q[0] == Point{5, 4});
  CHECK(q[2] == Point{8, 9});
}

TEST_CASE("missing limb joint leaves the limb empty") {
  Rng rng(3);
  Pose p = test::random_pose(rng, 32, 64);
  p[Joint::LElbow].visible = false;
  const RegionSet r = decompose_regions(p, 32, 64);
  CHECK(r[PartId::LUpperArm].empty());
  CHECK(r[PartId::LLowerArm].empty());
  CHECK(!r[PartId::RUpperArm].empty());
}

TEST_CASE("decomposition is translation-equivariant") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose p = test::random_pose(rng, 48, 64);
    const double dx = rng.uniform(-5, 5), dy = rng.uniform(-5, 5);
    Pose t = p;
    for (auto& k : t.joints) {
      k.x += dx;
      k.y += dy;
    }
    const RegionSet a = decompose_regions(p, 48, 64);
    const RegionSet b = decompose_regions(t, 48, 64);
    for (int h = 0; h < kNumParts; ++h) {
      if (static_cast<PartId>(h) == PartId::Torso) continue;
      REQUIRE(a.regions[h].empty() == b.regions[h].empty());
      if (a.regions[h].empty()) continue;
      for (int i = 0; i < 4; ++i) {
        CHECK((*b.regions[h].corners)[i].x == doctest::Approx((*a.regions[h].corners)[i].x + dx));
        CHECK((*b.regions[h].corners)[i].y == doctest::Approx((*a.regions[h].corners)[i].y + dy));
      }
    }
  }
}

TEST_CASE("region masks") {
  BodyRegion empty{PartId::LLowerLeg, std::nullopt};
  CHECK(region_mask(empty, 10, 7).all_zero());

  BodyRegion box{PartId::Head, Quad{Point{2, 1}, Point{5, 1}, Point{5, 3}, Point{2, 3}}};
  const RegionMask m = region_mask(box, 8, 6);
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 8; ++x) {
      const bool inside = x >= 2 && x <= 5 && y >= 1 && y <= 3;  // boundary inclusive
      CHECK(m.at(y, x) == (inside ? 1 : 0));
    }
  }
  CHECK(m.part == PartId::Head);
}

TEST_CASE("symmetry fallback copies the twin limb") {
  Rng rng(5);
  const Pose pa = test::random_pose(rng, 32, 64);
  const Pose pb = test::random_pose(rng, 32, 64);
  RegionSet a = decompose_regions(pa, 32, 64);
  const RegionSet b = decompose_regions(pb, 32, 64);
  a[PartId::RUpperArm].corners.reset();

  const RegionSet out = apply_symmetry_fallback(a, b);
  REQUIRE(!out[PartId::RUpperArm].empty());
  CHECK(*out[PartId::RUpperArm].corners == *a[PartId::LUpperArm].corners);
  CHECK(out[PartId::RUpperArm].part == PartId::RUpperArm);

  SUBCASE("idempotent") {
    const RegionSet twice = apply_symmetry_fallback(out, b);
    for (int h = 0; h < kNumParts; ++h) CHECK(twice.regions[h].corners == out.regions[h].corners);
  }
  SUBCASE("both twins empty") {
    RegionSet a2 = a;
    a2[PartId::LUpperArm].corners.reset();
    const RegionSet o = apply_symmetry_fallback(a2, b);
    CHECK(o[PartId::RUpperArm].empty());
    CHECK(o[PartId::LUpperArm].empty());
  }
  SUBCASE("target side empty") {
    RegionSet b2 = b;
    b2[PartId::RUpperArm].corners.reset();
    CHECK(apply_symmetry_fallback(a, b2)[PartId::RUpperArm].empty());
  }
  SUBCASE("head and torso are never substituted") {
    RegionSet a3 = a;
    a3[PartId::Head].corners.reset();
    CHECK(apply_symmetry_fallback(a3, b)[PartId::Head].empty());
  }
}

TEST_CASE("mirror parts") {
  CHECK(mirror_part(PartId::LUpperArm) == PartId::RUpperArm);
  CHECK(mirror_part(PartId::RLowerLeg) == PartId::LLowerLeg);
  CHECK(mirror_part(PartId::Head) == PartId::Head);
  CHECK(mirror_part(PartId::Torso) == PartId::Torso);
  CHECK(!is_limb(PartId::Head));
  CHECK(is_limb(PartId::LLowerArm));
  CHECK(part_name(PartId::RUpperLeg) == "right_upper_leg");
}

TEST_CASE("scale_mask") {
  Rng rng(9);
  RegionMask m(PartId::LUpperLeg, 8, 8);
  for (auto& v : m.values) v = rng.coin() ? 1 : 0;

  CHECK(scale_mask(m, 8, 8).values == m.values);

  const RegionMask ones(PartId::Torso, 8, 8, 1);
  CHECK(scale_mask(ones, 4, 4).area() == 16u);

  // Destination pixel i samples source pixel 2i under the no-offset convention.
  const RegionMask s = scale_mask(m, 4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) CHECK(s.at(y, x) == m.at(2 * y, 2 * x));
  }
  CHECK_THROWS_AS(scale_mask(m, 0, 4), InvalidArgument);
}
