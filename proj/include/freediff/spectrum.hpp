#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "freediff/tensor.hpp"

namespace freediff {

using Complex = std::complex<double>;

/// Signed frequency index held by centered position `i` on an axis of
/// length `n`: ranges over -floor(n/2) .. ceil(n/2)-1.
inline long centered_frequency(std::size_t i, std::size_t n) noexcept {
  return static_cast<long>(i) - static_cast<long>(n / 2);
}

/// Per-channel centered 2D spectrum. The DC bin of each channel sits at
/// (floor(H/2), floor(W/2)).
class Spectrum {
 public:
  Spectrum() = default;
  Spectrum(Shape shape, std::vector<Complex> bins);

  const Shape& shape() const noexcept { return shape_; }
  std::span<const Complex> bins() const noexcept { return bins_; }
  std::span<Complex> mutable_bins() noexcept { return bins_; }
  std::span<const Complex> channel(std::size_t c) const;

  const Complex& operator()(std::size_t c, std::size_t y, std::size_t x) const {
    return bins_[(c * shape_.height + y) * shape_.width + x];
  }
  Complex& operator()(std::size_t c, std::size_t y, std::size_t x) {
    return bins_[(c * shape_.height + y) * shape_.width + x];
  }
  /// Bin at signed frequency (fy, fx) of channel c.
  const Complex& at_frequency(std::size_t c, long fy, long fx) const;
  Complex& at_frequency(std::size_t c, long fy, long fx);

 private:
  Shape shape_;
  std::vector<Complex> bins_;
};

/// H x W real map over centered frequencies (power, F_diff, prior).
struct FrequencyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double operator()(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

/// H x W indicator over centered frequencies.
struct FrequencyMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  bool operator()(std::size_t y, std::size_t x) const { return values[y * width + x] != 0; }
  std::size_t count() const noexcept;
};

enum class RadiusMetric { Chebyshev, Euclidean };

RadiusMetric parse_radius_metric(std::string_view name);
std::string_view to_string(RadiusMetric metric) noexcept;

/// Radial distance of every centered frequency cell from DC.
class FreqGrid {
 public:
  FreqGrid(std::size_t height, std::size_t width, RadiusMetric metric);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  RadiusMetric metric() const noexcept { return metric_; }
  std::span<const double> radii() const noexcept { return radii_; }
  double operator()(std::size_t y, std::size_t x) const { return radii_[y * width_ + x]; }
  double max_radius() const noexcept { return max_radius_; }

 private:
  std::size_t height_;
  std::size_t width_;
  RadiusMetric metric_;
  std::vector<double> radii_;
  double max_radius_ = 0.0;
};

/// Chebyshev radius max(|fy|, |fx|) unless another metric is asked for.
FreqGrid radial_grid(std::size_t height, std::size_t width,
                     RadiusMetric metric = RadiusMetric::Chebyshev);

/// Forward transform, unnormalized, centered. Rejects non-finite input.
Spectrum dft2(const LatentTensor& x);
Spectrum dft2(const Shape& shape, std::span<const double> values);

struct InverseResult {
  LatentTensor tensor;
  /// ||Im|| / ||result|| before the imaginary part was dropped.
  double imaginary_residue = 0.0;
};

inline constexpr double kImaginaryResidueTolerance = 1e-9;

/// Inverse transform scaled by 1/(H*W). Throws Numerical when the
/// imaginary residue exceeds kImaginaryResidueTolerance.
LatentTensor idft2(const Spectrum& spectrum);
InverseResult idft2_with_residue(const Spectrum& spectrum);

/// Zeroes, in every channel, the bins whose cell is off in `mask`.
Spectrum apply_mask(Spectrum spectrum, const FrequencyMask& mask);

}  // namespace freediff
