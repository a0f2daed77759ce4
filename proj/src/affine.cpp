#include "deformwarp/affine.hpp"

#include <cmath>

#include "deformwarp/error.hpp"

namespace deformwarp {
namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;
using Vec3 = std::array<double, 3>;

double det3(const Mat3& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

// Cramer's rule; the caller has already rejected tiny determinants.
Vec3 solve3(const Mat3& m, const Vec3& b, double det) {
  Vec3 x{};
  for (int col = 0; col < 3; ++col) {
    Mat3 mc = m;
    for (int r = 0; r < 3; ++r) mc[r][col] = b[r];
    x[col] = det3(mc) / det;
  }
  return x;
}

}  // namespace

bool AffineParams::finite() const {
  for (double v : as_array()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

AffineParams fit_affine(std::span<const Point, 4> src, std::span<const Point, 4> dst) {
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(src[i].x) || !std::isfinite(src[i].y) || !std::isfinite(dst[i].x) ||
        !std::isfinite(dst[i].y)) {
      throw InvalidArgument("fit_affine: non-finite point");
    }
  }
  // Centering the source is a unimodular change of basis: it leaves det(X^T X)
  // unchanged and keeps the normal equations well scaled.
  double cx = 0.0, cy = 0.0;
  for (const Point& p : src) {
    cx += p.x;
    cy += p.y;
  }
  cx /= 4.0;
  cy /= 4.0;

  Mat3 normal{};
  Vec3 rhs_x{}, rhs_y{};
  for (int i = 0; i < 4; ++i) {
    const Vec3 row{src[i].x - cx, src[i].y - cy, 1.0};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) normal[r][c] += row[r] * row[c];
      rhs_x[r] += row[r] * dst[i].x;
      rhs_y[r] += row[r] * dst[i].y;
    }
  }
  const double det = det3(normal);
  if (!(std::abs(det) >= kDegenerateDet)) {
    throw DegenerateGeometry("fit_affine: source corners are collinear (|det| = " +
                             std::to_string(std::abs(det)) + ")");
  }
  const Vec3 kx = solve3(normal, rhs_x, det);
  const Vec3 ky = solve3(normal, rhs_y, det);

  AffineParams f;
  f.a11 = kx[0];
  f.a12 = kx[1];
  f.tx = kx[2] - kx[0] * cx - kx[1] * cy;
  f.a21 = ky[0];
  f.a22 = ky[1];
  f.ty = ky[2] - ky[0] * cx - ky[1] * cy;
  return f;
}

AffineParams scale_affine(const AffineParams& f, double sx, double sy) {
  if (!(sx > 0.0) || !(sy > 0.0)) throw InvalidArgument("scale_affine: scales must be positive");
  AffineParams g;
  g.a11 = f.a11;
  g.a12 = f.a12 * sx / sy;
  g.tx = f.tx * sx;
  g.a21 = f.a21 * sy / sx;
  g.a22 = f.a22;
  g.ty = f.ty * sy;
  return g;
}

Point apply_affine(const AffineParams& f, Point p) {
  return {f.a11 * p.x + f.a12 * p.y + f.tx, f.a21 * p.x + f.a22 * p.y + f.ty};
}

AffineParams compose(const AffineParams& g, const AffineParams& f) {
  AffineParams h;
  h.a11 = g.a11 * f.a11 + g.a12 * f.a21;
  h.a12 = g.a11 * f.a12 + g.a12 * f.a22;
  h.a21 = g.a21 * f.a11 + g.a22 * f.a21;
  h.a22 = g.a21 * f.a12 + g.a22 * f.a22;
  h.tx = g.a11 * f.tx + g.a12 * f.ty + g.tx;
  h.ty = g.a21 * f.tx + g.a22 * f.ty + g.ty;
  return h;
}

AffineParams invert(const AffineParams& f, double min_det) {
  const double det = f.det();
  if (!(std::abs(det) >= min_det)) {
    throw SingularTransform("affine transform is not invertible (|det A| = " +
                            std::to_string(std::abs(det)) + ")");
  }
  AffineParams inv;
  inv.a11 = f.a22 / det;
  inv.a12 = -f.a12 / det;
  inv.a21 = -f.a21 / det;
  inv.a22 = f.a11 / det;
  inv.tx = -(inv.a11 * f.tx + inv.a12 * f.ty);
  inv.ty = -(inv.a21 * f.tx + inv.a22 * f.ty);
  return inv;
}

}  // namespace deformwarp
