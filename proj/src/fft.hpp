#pragma once

#include <complex>
#include <cstddef>

namespace freediff::detail {

/// Unnormalized 2D complex transform of one H x W plane in natural
/// (uncentered) order. sign = -1 forward, +1 backward. Thread-safe.
void fft2_plane(std::complex<double>* in, std::complex<double>* out, std::size_t height,
                std::size_t width, int sign);

}  // namespace freediff::detail
