#include "freediff/spectrum.hpp"

#include <algorithm>
#include <cmath>

#include "fft.hpp"
#include "freediff/error.hpp"

namespace freediff {
namespace {

// Natural-order index of centered position i on an axis of length n.
std::size_t natural_index(std::size_t i, std::size_t n) {
  return (i + n - n / 2) % n;
}

std::size_t centered_index(long f, std::size_t n) {
  const long lo = -static_cast<long>(n / 2);
  const long hi = static_cast<long>(n) + lo - 1;
  if (f < lo || f > hi) throw Error(ErrorKind::Shape, "frequency index out of range");
  return static_cast<std::size_t>(f - lo);
}

}  // namespace

Spectrum::Spectrum(Shape shape, std::vector<Complex> bins) : shape_(shape), bins_(std::move(bins)) {
  if (bins_.size() != shape_.size()) {
    throw Error(ErrorKind::Shape, "spectrum of shape " + shape_.str() + " needs " +
                                      std::to_string(shape_.size()) + " bins");
  }
}

std::span<const Complex> Spectrum::channel(std::size_t c) const {
  if (c >= shape_.channels) throw Error(ErrorKind::Shape, "channel index out of range");
  return std::span<const Complex>(bins_).subspan(c * shape_.plane(), shape_.plane());
}

const Complex& Spectrum::at_frequency(std::size_t c, long fy, long fx) const {
  return (*this)(c, centered_index(fy, shape_.height), centered_index(fx, shape_.width));
}

Complex& Spectrum::at_frequency(std::size_t c, long fy, long fx) {
  return (*this)(c, centered_index(fy, shape_.height), centered_index(fx, shape_.width));
}

std::size_t FrequencyMask::count() const noexcept {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

RadiusMetric parse_radius_metric(std::string_view name) {
  if (name == "chebyshev") return RadiusMetric::Chebyshev;
  if (name == "euclidean") return RadiusMetric::Euclidean;
  throw Error(ErrorKind::Validation, "unknown radius metric '" + std::string(name) + "'",
              "radius_metric");
}

std::string_view to_string(RadiusMetric metric) noexcept {
  return metric == RadiusMetric::Chebyshev ? "chebyshev" : "euclidean";
}

FreqGrid::FreqGrid(std::size_t height, std::size_t width, RadiusMetric metric)
    : height_(height), width_(width), metric_(metric), radii_(height * width) {
  if (height == 0 || width == 0) throw Error(ErrorKind::Shape, "frequency grid needs H, W >= 1");
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::abs(static_cast<double>(centered_frequency(y, height)));
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::abs(static_cast<double>(centered_frequency(x, width)));
      const double r = metric == RadiusMetric::Chebyshev ? std::max(fy, fx) : std::hypot(fy, fx);
      radii_[y * width + x] = r;
      max_radius_ = std::max(max_radius_, r);
    }
  }
}

FreqGrid radial_grid(std::size_t height, std::size_t width, RadiusMetric metric) {
  return FreqGrid(height, width, metric);
}

Spectrum dft2(const Shape& shape, std::span<const double> values) {
  if (values.size() != shape.size()) throw Error(ErrorKind::Shape, "dft2: value count mismatch");
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::DataIntegrity, "dft2: non-finite input");
  }
  const std::size_t h = shape.height, w = shape.width, plane = shape.plane();
  std::vector<Complex> in(plane), out(plane), bins(shape.size());
  for (std::size_t c = 0; c < shape.channels; ++c) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(c * plane), plane, in.begin());
    detail::fft2_plane(in.data(), out.data(), h, w, -1);
    Complex* dst = bins.data() + c * plane;
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t ny = natural_index(y, h);
      for (std::size_t x = 0; x < w; ++x) dst[y * w + x] = out[ny * w + natural_index(x, w)];
    }
  }
  return Spectrum(shape, std::move(bins));
}

Spectrum dft2(const LatentTensor& x) { return dft2(x.shape(), x.values()); }

InverseResult idft2_with_residue(const Spectrum& spectrum) {
  const Shape& shape = spectrum.shape();
  const std::size_t h = shape.height, w = shape.width, plane = shape.plane();
  const double scale = 1.0 / static_cast<double>(plane);
  std::vector<Complex> in(plane), out(plane);
  std::vector<double> real(shape.size());
  double imag_sq = 0.0, total_sq = 0.0;
  for (std::size_t c = 0; c < shape.channels; ++c) {
    auto src = spectrum.channel(c);
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t ny = natural_index(y, h);
      for (std::size_t x = 0; x < w; ++x) in[ny * w + natural_index(x, w)] = src[y * w + x];
    }
    detail::fft2_plane(in.data(), out.data(), h, w, +1);
    for (std::size_t i = 0; i < plane; ++i) {
      const Complex v = out[i] * scale;
      real[c * plane + i] = v.real();
      imag_sq += v.imag() * v.imag();
      total_sq += std::norm(v);
    }
  }
  const double residue = total_sq > 0.0 ? std::sqrt(imag_sq / total_sq) : 0.0;
  return {LatentTensor(shape, std::move(real)), residue};
}

LatentTensor idft2(const Spectrum& spectrum) {
  auto result = idft2_with_residue(spectrum);
  if (result.imaginary_residue > kImaginaryResidueTolerance) {
    throw Error(ErrorKind::Numerical, "idft2: imaginary residue " +
                                          std::to_string(result.imaginary_residue) +
                                          " exceeds tolerance");
  }
  return std::move(result.tensor);
}

Spectrum apply_mask(Spectrum spectrum, const FrequencyMask& mask) {
  const Shape shape = spectrum.shape();
  if (mask.height != shape.height || mask.width != shape.width) {
    throw Error(ErrorKind::Shape, "mask grid does not match spectrum " + shape.str());
  }
  auto bins = spectrum.mutable_bins();
  const std::size_t plane = shape.plane();
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (mask.values[i % plane] == 0) bins[i] = 0.0;
  }
  return spectrum;
}

}  // namespace freediff
