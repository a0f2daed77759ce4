#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "deformwarp/pose.hpp"
#include "deformwarp/tensor.hpp"

namespace deformwarp::test {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  double normal(double sd = 1.0) { return std::normal_distribution<double>(0.0, sd)(gen_); }
  bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(gen_); }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

inline Tensor random_tensor(Rng& rng, int n, int h, int w, int c, double lo = -1.0, double hi = 1.0) {
  Tensor t(n, h, w, c);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Dot product; turns a tensor-valued function into a scalar loss.
inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Central-difference gradient of `loss` with respect to every entry of `x`.
inline Tensor numeric_gradient(Tensor& x, const std::function<double()>& loss, double step) {
  Tensor g = Tensor::like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = loss();
    x[i] = keep - step;
    const double down = loss();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor). The floor only matters for
/// entries that are essentially zero in both.
inline double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

/// Upright pose with every joint visible and limbs of nonzero length.
inline Pose random_pose(Rng& rng, int width, int height) {
  Pose p;
  const double cx = rng.uniform(0.4, 0.6) * (width - 1);
  const double top = rng.uniform(0.05, 0.15) * (height - 1);
  const double u = (height - 1) / 10.0;
  auto put = [&](Joint j, double x, double y) {
    p[j] = {x + rng.uniform(-0.3, 0.3) * u, y + rng.uniform(-0.3, 0.3) * u, true};
  };
  const double sw = 0.12 * (width - 1);
  put(Joint::Nose, cx, top + 0.3 * u);
  put(Joint::REye, cx - 0.3 * u, top);
  put(Joint::LEye, cx + 0.3 * u, top);
  put(Joint::REar, cx - 0.6 * u, top + 0.2 * u);
  put(Joint::LEar, cx + 0.6 * u, top + 0.2 * u);
  put(Joint::Neck, cx, top + 1.2 * u);
  put(Joint::RShoulder, cx - sw, top + 1.4 * u);
  put(Joint::LShoulder, cx + sw, top + 1.4 * u);
  put(Joint::RElbow, cx - 1.5 * sw, top + 2.9 * u);
  put(Joint::LElbow, cx + 1.5 * sw, top + 2.9 * u);
  put(Joint::RWrist, cx - 1.7 * sw, top + 4.2 * u);
  put(Joint::LWrist, cx + 1.7 * sw, top + 4.2 * u);
  put(Joint::RHip, cx - 0.7 * sw, top + 4.4 * u);
  put(Joint::LHip, cx + 0.7 * sw, top + 4.4 * u);
  put(Joint::RKnee, cx - 0.8 * sw, top + 6.3 * u);
  put(Joint::LKnee, cx + 0.8 * sw, top + 6.3 * u);
  put(Joint::RAnkle, cx - 0.9 * sw, top + 8.2 * u);
  put(Joint::LAnkle, cx + 0.9 * sw, top + 8.2 * u);
  for (Keypoint& k : p.joints) {
    k.x = std::clamp(k.x, 0.0, width - 1.0);
    k.y = std::clamp(k.y, 0.0, height - 1.0);
  }
  return p;
}

}  // namespace deformwarp::test
