#include <doctest.h>

#include <array>
#include <cmath>

#include "deformwarp/affine.hpp"
#include "deformwarp/error.hpp"
#include "support.hpp"

using namespace deformwarp;
using deformwarp::test::Rng;

namespace {

using Quad4 = std::array<Point, 4>;

Quad4 map_quad(const AffineParams& f, const Quad4& q) {
  Quad4 out;
  for (int i = 0; i < 4; ++i) out[i] = apply_affine(f, q[i]);
  return out;
}

double max_param_error(const AffineParams& a, const AffineParams& b) {
  double e = 0.0;
  const auto x = a.as_array(), y = b.as_array();
  for (int i = 0; i < 6; ++i) e = std::max(e, std::abs(x[i] - y[i]));
  return e;
}

AffineParams random_affine(Rng& rng) {
  for (;;) {
    AffineParams f{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-20, 20),
                   rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-20, 20)};
    if (std::abs(f.det()) > 0.1) return f;
  }
}

double residual(const AffineParams& f, const Quad4& src, const Quad4& dst) {
  double r = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Point p = apply_affine(f, src[i]);
    r += (p.x - dst[i].x) * (p.x - dst[i].x) + (p.y - dst[i].y) * (p.y - dst[i].y);
  }
  return r;
}

const Quad4 kUnit{Point{0, 0}, Point{1, 0}, Point{1, 1}, Point{0, 1}};

}  // namespace

TEST_CASE("identity and translation fits") {
  CHECK(max_param_error(fit_affine(kUnit, kUnit), AffineParams::identity()) < 1e-12);
  const Quad4 shifted = map_quad({1, 0, 1, 0, 1, 2}, kUnit);
  CHECK(max_param_error(fit_affine(kUnit, shifted), {1, 0, 1, 0, 1, 2}) < 1e-12);
}

TEST_CASE("known scale and offset are recovered") {
  const AffineParams f{2, 0, 3, 0, 2, 5};
  CHECK(max_param_error(fit_affine(kUnit, map_quad(f, kUnit)), f) < 1e-9);
}

TEST_CASE("random affines are recovered from rotated rectangles") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const Point a{rng.uniform(0, 50), rng.uniform(0, 50)};
    const Point b{rng.uniform(0, 50), rng.uniform(0, 50)};
    if (std::hypot(b.x - a.x, b.y - a.y) < 1.0) continue;
    const Quad4 src = limb_rectangle(a, b, rng.uniform(1, 10));
    const AffineParams f = random_affine(rng);
    CHECK(max_param_error(fit_affine(src, map_quad(f, src)), f) < 1e-9);
  }
}

TEST_CASE("noisy correspondences: the fit is least-squares optimal") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Quad4 src = limb_rectangle({rng.uniform(0, 10), rng.uniform(0, 10)},
                                     {rng.uniform(20, 30), rng.uniform(20, 30)}, 6.0);
    Quad4 dst = map_quad(random_affine(rng), src);
    for (auto& p : dst) {
      p.x += rng.normal(0.5);
      p.y += rng.normal(0.5);
    }
    const AffineParams best = fit_affine(src, dst);
    const double r0 = residual(best, src, dst);
    for (int k = 0; k < 1000; ++k) {
      AffineParams g = best;
      g.a11 += rng.normal(1e-3);
      g.a12 += rng.normal(1e-3);
      g.tx += rng.normal(1e-2);
      g.a21 += rng.normal(1e-3);
      g.a22 += rng.normal(1e-3);
      g.ty += rng.normal(1e-2);
      REQUIRE(residual(g, src, dst) >= r0 - 1e-9);
    }
  }
}

TEST_CASE("collinear sources are degenerate") {
  const Quad4 line{Point{0, 0}, Point{1, 1}, Point{2, 2}, Point{3, 3}};
  CHECK_THROWS_AS(fit_affine(line, kUnit), DegenerateGeometry);
  const Quad4 point{Point{4, 4}, Point{4, 4}, Point{4, 4}, Point{4, 4}};
  CHECK_THROWS_AS(fit_affine(point, kUnit), DegenerateGeometry);
}

TEST_CASE("apply and compose") {
  const Point p = apply_affine(AffineParams::identity(), {3, 4});
  CHECK(p == Point{3, 4});
  const Point q = apply_affine({2, 0, 3, 0, 2, 5}, {1, 1});
  CHECK(q == Point{5, 7});

  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    const AffineParams f = random_affine(rng), g = random_affine(rng);
    const Point x{rng.uniform(-10, 10), rng.uniform(-10, 10)};
    const Point two = apply_affine(g, apply_affine(f, x));
    const Point one = apply_affine(compose(g, f), x);
    CHECK(one.x == doctest::Approx(two.x).epsilon(1e-12));
    CHECK(one.y == doctest::Approx(two.y).epsilon(1e-12));
  }
}

TEST_CASE("inverse") {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const AffineParams f = random_affine(rng);
    const AffineParams id = compose(invert(f), f);
    CHECK(max_param_error(id, AffineParams::identity()) < 1e-9);
  }
  CHECK_THROWS_AS(invert({1, 2, 0, 2, 4, 0}), SingularTransform);
}

TEST_CASE("scale_affine conjugates by the scale") {
  const AffineParams t{1, 0, 8, 0, 1, -4};
  CHECK(scale_affine(t, 1, 1) == t);
  const AffineParams h = scale_affine(t, 0.5, 0.5);
  CHECK(max_param_error(h, {1, 0, 4, 0, 1, -2}) < 1e-15);

  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    const AffineParams f = random_affine(rng);
    const double sx = rng.uniform(0.1, 2), sy = rng.uniform(0.1, 2);
    const Point p{rng.uniform(-30, 30), rng.uniform(-30, 30)};
    const Point lhs = apply_affine(scale_affine(f, sx, sy), {sx * p.x, sy * p.y});
    const Point fp = apply_affine(f, p);
    CHECK(std::abs(lhs.x - sx * fp.x) < 1e-9);
    CHECK(std::abs(lhs.y - sy * fp.y) < 1e-9);
  }
  CHECK_THROWS_AS(scale_affine(t, 0, 1), InvalidArgument);
  CHECK_THROWS_AS(scale_affine(t, 1, -1), InvalidArgument);
}
