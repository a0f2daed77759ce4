#pragma once

#include <array>
#include <span>

#include "deformwarp/pose.hpp"

namespace deformwarp {

/// f(p) = A p + t with A = [[a11, a12], [a21, a22]], t = (tx, ty).
struct AffineParams {
  double a11 = 1.0, a12 = 0.0, tx = 0.0;
  double a21 = 0.0, a22 = 1.0, ty = 0.0;

  static AffineParams identity() { return {}; }
  std::array<double, 6> as_array() const { return {a11, a12, tx, a21, a22, ty}; }
  double det() const { return a11 * a22 - a12 * a21; }
  bool finite() const;

  friend bool operator==(const AffineParams&, const AffineParams&) = default;
};

/// Threshold on |det| of the 3x3 normal matrix below which a fit is refused.
inline constexpr double kDegenerateDet = 1e-12;

/// Least-squares affine mapping src[i] onto dst[i]. Throws DegenerateGeometry
/// for (near-)collinear sources.
AffineParams fit_affine(std::span<const Point, 4> src, std::span<const Point, 4> dst);

/// Conjugate by S = diag(sx, sy): returns S f S^-1.
AffineParams scale_affine(const AffineParams& f, double sx, double sy);

Point apply_affine(const AffineParams& f, Point p);

/// f then g, i.e. g(f(p)).
AffineParams compose(const AffineParams& g, const AffineParams& f);

/// Throws SingularTransform when |det A| < min_det.
AffineParams invert(const AffineParams& f, double min_det = 1e-8);

}  // namespace deformwarp
