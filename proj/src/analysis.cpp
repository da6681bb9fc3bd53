#include "freediff/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "freediff/error.hpp"

namespace freediff {

PowerSpectrum PowerSpectrum::from_prior(FrequencyMap prior) {
  return PowerSpectrum{std::move(prior), 1.0};
}

PowerSpectrum power_spectrum(const LatentTensor& x) {
  const Shape& s = x.shape();
  const Spectrum spec = dft2(x);
  FrequencyMap map{s.height, s.width, std::vector<double>(s.plane(), 0.0)};
  for (std::size_t c = 0; c < s.channels; ++c) {
    auto bins = spec.channel(c);
    for (std::size_t i = 0; i < bins.size(); ++i) map.values[i] += std::norm(bins[i]);
  }
  return PowerSpectrum{std::move(map), static_cast<double>(s.size())};
}

FrequencyMap f_diff(const LatentTensor& a, const LatentTensor& b) {
  require_same_shape(a, b, "f_diff");
  const Shape& s = a.shape();
  const Spectrum fa = dft2(a), fb = dft2(b);
  FrequencyMap map{s.height, s.width, std::vector<double>(s.plane(), 0.0)};
  for (std::size_t c = 0; c < s.channels; ++c) {
    auto ba = fa.channel(c), bb = fb.channel(c);
    for (std::size_t i = 0; i < ba.size(); ++i) map.values[i] += std::abs(ba[i] - bb[i]);
  }
  return map;
}

FrequencyMap normalize_for_display(const FrequencyMap& map) {
  FrequencyMap out = map;
  const double peak = out.values.empty() ? 0.0 : *std::max_element(out.values.begin(), out.values.end());
  if (peak > 0.0) {
    for (double& v : out.values) v /= peak;
  }
  return out;
}

std::vector<double> radial_profile(const FrequencyMap& map) {
  const FreqGrid grid = radial_grid(map.height, map.width, RadiusMetric::Chebyshev);
  const auto shells = static_cast<std::size_t>(grid.max_radius()) + 1;
  std::vector<double> sum(shells, 0.0);
  std::vector<std::size_t> count(shells, 0);
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    const auto r = static_cast<std::size_t>(grid.radii()[i]);
    sum[r] += map.values[i];
    ++count[r];
  }
  for (std::size_t r = 0; r < shells; ++r) sum[r] = count[r] ? sum[r] / static_cast<double>(count[r]) : 0.0;
  return sum;
}

PowerLawFit fit_power_law(const PowerSpectrum& p) {
  const std::vector<double> profile = radial_profile(p.power);
  std::vector<double> xs, ys;
  for (std::size_t r = 1; r < profile.size(); ++r) {
    if (profile[r] > 0.0) {
      xs.push_back(std::log(1.0 + static_cast<double>(r)));
      ys.push_back(std::log(profile[r]));
    }
  }
  if (xs.empty()) throw Error(ErrorKind::DataIntegrity, "power spectrum has no off-DC energy");
  if (xs.size() < 2) throw Error(ErrorKind::DataIntegrity, "need at least two non-empty shells to fit");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  const double slope = sxy / sxx;
  return PowerLawFit{-slope / 2.0, slope, my - slope * mx};
}

int snr_box(int t, const PowerSpectrum& p, const NoiseSchedule& schedule, bool check_monotone) {
  const std::vector<double> profile = radial_profile(p.power);
  if (check_monotone) {
    for (std::size_t r = 2; r < profile.size(); ++r) {
      if (profile[r] > profile[r - 1] * (1.0 + 1e-12)) {
        throw Error(ErrorKind::Precondition, "power spectrum is not radially non-increasing at r=" +
                                                 std::to_string(r));
      }
    }
  }
  const double a = schedule.alpha_bar(t);
  int best = -1;
  for (std::size_t r = 0; r < profile.size(); ++r) {
    if (a * profile[r] / p.noise_reference >= 1.0 - a) {
      best = static_cast<int>(r);
    } else {
      break;
    }
  }
  return std::max(best, 0);
}

}  // namespace freediff
