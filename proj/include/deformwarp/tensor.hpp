#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace deformwarp {

/// Dense batch x height x width x channels array of doubles, row-major
/// (channels fastest). A single feature map or image is a Tensor with
/// batch() == 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int batch, int height, int width, int channels, double fill = 0.0);

  static Tensor like(const Tensor& other, double fill = 0.0) {
    return Tensor(other.n_, other.h_, other.w_, other.c_, fill);
  }

  int batch() const { return n_; }
  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
  }
  std::string shape_string() const;

  std::size_t index(int n, int y, int x, int c) const {
    return ((static_cast<std::size_t>(n) * h_ + y) * w_ + x) * c_ + c;
  }
  double& at(int n, int y, int x, int c) { return data_[index(n, y, x, c)]; }
  double at(int n, int y, int x, int c) const { return data_[index(n, y, x, c)]; }

  /// Feature-map accessors for batch() == 1.
  double& operator()(int y, int x, int c) { return data_[index(0, y, x, c)]; }
  double operator()(int y, int x, int c) const { return data_[index(0, y, x, c)]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  /// Copy of one batch entry as a batch-1 tensor.
  Tensor sample(int n) const;
  void set_sample(int n, const Tensor& t);

  void fill(double v);
  Tensor& operator+=(const Tensor& o);
  Tensor& operator*=(double s);

  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  int n_ = 0, h_ = 0, w_ = 0, c_ = 0;
  std::vector<double> data_;
};

/// Concatenates along the channel axis. All inputs share n, h, w.
Tensor concat_channels(std::span<const Tensor* const> parts);
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Splits off channels [begin, begin + count).
Tensor slice_channels(const Tensor& t, int begin, int count);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace deformwarp
