#include "deformwarp/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "deformwarp/error.hpp"

namespace deformwarp {

Tensor::Tensor(int batch, int height, int width, int channels, double fill)
    : n_(batch), h_(height), w_(width), c_(channels) {
  if (batch < 1 || height < 1 || width < 1 || channels < 1) {
    throw InvalidArgument("tensor dimensions must be >= 1, got " + std::to_string(batch) + "x" +
                          std::to_string(height) + "x" + std::to_string(width) + "x" +
                          std::to_string(channels));
  }
  data_.assign(static_cast<std::size_t>(batch) * height * width * channels, fill);
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(n_) + "," + std::to_string(h_) + "," + std::to_string(w_) + "," +
         std::to_string(c_) + "]";
}

Tensor Tensor::sample(int n) const {
  Tensor out(1, h_, w_, c_);
  const std::size_t plane = static_cast<std::size_t>(h_) * w_ * c_;
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(n * plane), plane, out.data_.begin());
  return out;
}

void Tensor::set_sample(int n, const Tensor& t) {
  if (t.n_ != 1 || t.h_ != h_ || t.w_ != w_ || t.c_ != c_) {
    throw InvalidArgument("set_sample: shape " + t.shape_string() + " does not fit " +
                          shape_string());
  }
  const std::size_t plane = static_cast<std::size_t>(h_) * w_ * c_;
  std::copy(t.data_.begin(), t.data_.end(), data_.begin() + static_cast<std::ptrdiff_t>(n * plane));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& o) {
  if (!same_shape(o)) {
    throw InvalidArgument("tensor add: " + shape_string() + " vs " + o.shape_string());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
  if (parts.empty()) throw InvalidArgument("concat_channels: no inputs");
  const Tensor& first = *parts.front();
  int total = 0;
  for (const Tensor* p : parts) {
    if (p->batch() != first.batch() || p->height() != first.height() ||
        p->width() != first.width()) {
      throw InvalidArgument("concat_channels: spatial mismatch " + p->shape_string() + " vs " +
                            first.shape_string());
    }
    total += p->channels();
  }
  Tensor out(first.batch(), first.height(), first.width(), total);
  const std::size_t pixels = static_cast<std::size_t>(first.batch()) * first.height() * first.width();
  for (std::size_t px = 0; px < pixels; ++px) {
    double* dst = out.data() + px * total;
    for (const Tensor* p : parts) {
      const int c = p->channels();
      std::memcpy(dst, p->data() + px * c, sizeof(double) * c);
      dst += c;
    }
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Tensor* parts[] = {&a, &b};
  return concat_channels(parts);
}

Tensor slice_channels(const Tensor& t, int begin, int count) {
  if (begin < 0 || count < 1 || begin + count > t.channels()) {
    throw InvalidArgument("slice_channels: range out of bounds");
  }
  Tensor out(t.batch(), t.height(), t.width(), count);
  const std::size_t pixels = static_cast<std::size_t>(t.batch()) * t.height() * t.width();
  for (std::size_t px = 0; px < pixels; ++px) {
    std::memcpy(out.data() + px * count, t.data() + px * t.channels() + begin,
                sizeof(double) * count);
  }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw InvalidArgument("max_abs_diff: " + a.shape_string() + " vs " + b.shape_string());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace deformwarp
