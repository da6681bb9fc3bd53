#pragma once

#include <vector>

#include "freediff/schedule.hpp"
#include "freediff/spectrum.hpp"
#include "freediff/tensor.hpp"

namespace freediff {

/// Channel-summed |X(w)|^2 on the centered grid. `noise_reference` is the
/// expected power per bin of unit-variance white noise under the same
/// transform (C*H*W for spectra of latents), so power / noise_reference is
/// in units of the per-pixel noise variance.
struct PowerSpectrum {
  FrequencyMap power;
  double noise_reference = 1.0;

  /// A prior S already expressed in noise-variance units.
  static PowerSpectrum from_prior(FrequencyMap prior);
};

PowerSpectrum power_spectrum(const LatentTensor& x);

/// sum_c |F{a}_c(w) - F{b}_c(w)|.
FrequencyMap f_diff(const LatentTensor& a, const LatentTensor& b);

/// Divides by the maximum (display only; zero maps stay zero).
FrequencyMap normalize_for_display(const FrequencyMap& map);

/// Mean of `map` over each Chebyshev shell r = 0..max radius.
std::vector<double> radial_profile(const FrequencyMap& map);

struct PowerLawFit {
  /// Amplitude-spectrum exponent: power ~ (1 + r)^(-2 beta).
  double beta;
  double slope;      // of log mean power vs log(1 + r)
  double intercept;
};

/// Least-squares fit over shells r >= 1; throws DataIntegrity when there
/// is no off-DC energy.
PowerLawFit fit_power_law(const PowerSpectrum& p);

/// Largest Chebyshev radius r* with ab_t * p(r) / (1 - ab_t) >= 1 on every
/// shell r <= r* (p radially averaged, in noise units); 0 if none.
/// With `check_monotone` the radial profile must be non-increasing beyond
/// DC (Precondition error otherwise).
int snr_box(int t, const PowerSpectrum& p, const NoiseSchedule& schedule,
            bool check_monotone = true);

}  // namespace freediff
