#pragma once

#include <span>
#include <vector>

#include "freediff/spectrum.hpp"
#include "freediff/tensor.hpp"

namespace freediff {

struct ScheduleParams {
  double beta_start = 0.00085;
  double beta_end = 0.012;
  int training_steps = 1000;
  int steps = 50;
  double gamma = 7.5;
};

/// Cumulative signal coefficients alpha_bar_t for t = 1..T. Timestep 0
/// denotes the clean latent and has alpha_bar_0 = 1.
class NoiseSchedule {
 public:
  /// `alpha_bar[i]` is alpha_bar at t = i + 1; must lie in (0, 1] and be
  /// strictly decreasing.
  explicit NoiseSchedule(std::vector<double> alpha_bar);

  /// beta_i on a linear grid in sqrt space, alpha_bar_t = prod (1 - beta_i).
  static NoiseSchedule scaled_linear(int training_steps, double beta_start, double beta_end);

  int training_steps() const noexcept { return static_cast<int>(alpha_bar_.size()); }
  /// Valid for t in [0, T].
  double alpha_bar(int t) const;

 private:
  std::vector<double> alpha_bar_;
};

NoiseSchedule make_sd_schedule();
NoiseSchedule make_schedule(const ScheduleParams& params);

/// Descending sampling timesteps t_k = 1 + floor(T/steps) * k.
class TimestepGrid {
 public:
  explicit TimestepGrid(std::vector<int> descending);

  std::size_t steps() const noexcept { return timesteps_.size(); }
  std::span<const int> timesteps() const noexcept { return timesteps_; }
  int first() const noexcept { return timesteps_.front(); }
  int last() const noexcept { return timesteps_.back(); }
  bool contains(int t) const noexcept;
  /// Position of t in the descending list; throws Schedule when off-grid.
  std::size_t index_of(int t) const;
  /// Next timestep in generation order; the smallest grid step is
  /// followed by 0, the clean latent.
  int next_lower(int t) const;
  /// Next timestep in inversion order; 0 is followed by the smallest step.
  /// Throws Schedule for the largest step.
  int next_higher(int t) const;

 private:
  std::vector<int> timesteps_;
};

TimestepGrid make_timestep_grid(int steps = 50, int training_steps = 1000);

class GuidanceScale {
 public:
  explicit GuidanceScale(double gamma);
  double value() const noexcept { return gamma_; }

 private:
  double gamma_;
};

/// Signed weight of g_t in the final latent of a DDIM run:
///   -gamma * sqrt(ab_first) * (sqrt(1/ab_t - 1) - sqrt(1/ab_prev - 1))
/// where t_prev is the next lower grid step and t_first the smallest.
double guidance_weight(const NoiseSchedule& schedule, const TimestepGrid& grid, int t,
                       GuidanceScale gamma);

/// sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise.
LatentTensor perturb(const LatentTensor& x0, int t, const LatentTensor& noise,
                     const NoiseSchedule& schedule);

/// Cells where ab_t * S / (1 - ab_t) >= 1, S in units of the injected
/// noise variance. Cells with S = 0 are never in the band.
FrequencyMask snr_gate(int t, const FrequencyMap& signal_power, const NoiseSchedule& schedule);

}  // namespace freediff
