#include "freediff/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "freediff/error.hpp"

namespace freediff {

std::string Shape::str() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

LatentTensor::LatentTensor(Shape shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape_.size()) {
    throw Error(ErrorKind::Shape, "tensor of shape " + shape_.str() + " needs " +
                                      std::to_string(shape_.size()) + " values, got " +
                                      std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw Error(ErrorKind::DataIntegrity,
                  "non-finite tensor value at flat index " + std::to_string(i));
    }
  }
}

LatentTensor LatentTensor::zeros(Shape shape) { return filled(shape, 0.0); }

LatentTensor LatentTensor::filled(Shape shape, double value) {
  return LatentTensor(shape, std::vector<double>(shape.size(), value));
}

std::span<const double> LatentTensor::channel(std::size_t c) const {
  if (c >= shape_.channels) throw Error(ErrorKind::Shape, "channel index out of range");
  return std::span<const double>(values_).subspan(c * shape_.plane(), shape_.plane());
}

double LatentTensor::squared_norm() const noexcept {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

double LatentTensor::norm() const noexcept { return std::sqrt(squared_norm()); }

double LatentTensor::max_abs() const noexcept {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

LatentTensor LatentTensor::hadamard(std::span<const double> factor) const {
  const std::size_t plane = shape_.plane();
  std::vector<double> out(values_.size());
  if (factor.size() == values_.size()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = values_[i] * factor[i];
  } else if (factor.size() == plane) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = values_[i] * factor[i % plane];
  } else {
    throw Error(ErrorKind::Shape, "factor of " + std::to_string(factor.size()) +
                                      " cells does not broadcast over " + shape_.str());
  }
  return LatentTensor(shape_, std::move(out));
}

void require_same_shape(const LatentTensor& a, const LatentTensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorKind::Shape, std::string(what) + ": shape " + a.shape().str() +
                                      " does not match " + b.shape().str());
  }
}

LatentTensor lincomb(double a, const LatentTensor& x, double b, const LatentTensor& y) {
  require_same_shape(x, y, "lincomb");
  auto xs = x.values();
  auto ys = y.values();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * xs[i] + b * ys[i];
  return LatentTensor(x.shape(), std::move(out));
}

LatentTensor operator+(const LatentTensor& a, const LatentTensor& b) { return lincomb(1.0, a, 1.0, b); }
LatentTensor operator-(const LatentTensor& a, const LatentTensor& b) { return lincomb(1.0, a, -1.0, b); }

LatentTensor operator*(double s, const LatentTensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= s;
  return LatentTensor(a.shape(), std::move(out));
}

double relative_error(const LatentTensor& a, const LatentTensor& b) {
  require_same_shape(a, b, "relative_error");
  const double diff = (a - b).norm();
  const double ref = b.norm();
  return ref > 0.0 ? diff / ref : diff;
}

}  // namespace freediff
