#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace freediff {

struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t plane() const noexcept { return height * width; }
  std::size_t size() const noexcept { return channels * height * width; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Real C x H x W grid, row-major per channel. Holds x_0, x_t, the
/// guidance g_t and the x0 predictions. Values are always finite.
class LatentTensor {
 public:
  LatentTensor() = default;
  /// Throws Shape if `values.size() != shape.size()` and DataIntegrity on
  /// any NaN/Inf.
  LatentTensor(Shape shape, std::vector<double> values);

  static LatentTensor zeros(Shape shape);
  static LatentTensor filled(Shape shape, double value);

  template <typename F>
  static LatentTensor generate(Shape shape, F&& fn) {
    std::vector<double> v(shape.size());
    std::size_t i = 0;
    for (std::size_t c = 0; c < shape.channels; ++c)
      for (std::size_t y = 0; y < shape.height; ++y)
        for (std::size_t x = 0; x < shape.width; ++x) v[i++] = fn(c, y, x);
    return LatentTensor(shape, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const double> channel(std::size_t c) const;
  double operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return values_[(c * shape_.height + y) * shape_.width + x];
  }
  bool empty() const noexcept { return values_.empty(); }

  double squared_norm() const noexcept;
  double norm() const noexcept;
  double max_abs() const noexcept;

  /// Element-wise product with a C x H x W or 1 x H x W (broadcast) factor.
  LatentTensor hadamard(std::span<const double> factor) const;

  friend LatentTensor operator+(const LatentTensor& a, const LatentTensor& b);
  friend LatentTensor operator-(const LatentTensor& a, const LatentTensor& b);
  friend LatentTensor operator*(double s, const LatentTensor& a);
  friend bool operator==(const LatentTensor&, const LatentTensor&) = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// a*x + b*y; shapes must match.
LatentTensor lincomb(double a, const LatentTensor& x, double b, const LatentTensor& y);

/// ||a - b|| / ||b||, or ||a|| when b is zero.
double relative_error(const LatentTensor& a, const LatentTensor& b);

void require_same_shape(const LatentTensor& a, const LatentTensor& b, const char* what);

}  // namespace freediff
