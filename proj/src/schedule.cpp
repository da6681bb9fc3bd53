#include "freediff/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "freediff/error.hpp"

namespace freediff {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {
  if (alpha_bar_.empty()) throw Error(ErrorKind::Validation, "empty noise schedule", "T");
  for (std::size_t i = 0; i < alpha_bar_.size(); ++i) {
    const double a = alpha_bar_[i];
    if (!(a > 0.0 && a <= 1.0)) {
      throw Error(ErrorKind::Validation, "alpha_bar must lie in (0, 1]", "alpha_bar");
    }
    if (i > 0 && !(a < alpha_bar_[i - 1])) {
      throw Error(ErrorKind::Validation, "alpha_bar must be strictly decreasing", "alpha_bar");
    }
  }
}

NoiseSchedule NoiseSchedule::scaled_linear(int training_steps, double beta_start, double beta_end) {
  if (training_steps < 2) throw Error(ErrorKind::Validation, "T must be >= 2", "T");
  if (!(beta_start > 0.0 && beta_start < 1.0)) {
    throw Error(ErrorKind::Validation, "beta_start must lie in (0, 1)", "beta_start");
  }
  if (!(beta_end > beta_start && beta_end < 1.0)) {
    throw Error(ErrorKind::Validation, "beta_end must lie in (beta_start, 1)", "beta_end");
  }
  const double lo = std::sqrt(beta_start), hi = std::sqrt(beta_end);
  std::vector<double> alpha_bar(static_cast<std::size_t>(training_steps));
  double prod = 1.0;
  for (int i = 0; i < training_steps; ++i) {
    const double s = lo + (hi - lo) * static_cast<double>(i) / (training_steps - 1);
    prod *= 1.0 - s * s;
    alpha_bar[static_cast<std::size_t>(i)] = prod;
  }
  return NoiseSchedule(std::move(alpha_bar));
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > training_steps()) {
    throw Error(ErrorKind::Schedule, "timestep " + std::to_string(t) + " outside [0, " +
                                         std::to_string(training_steps()) + "]");
  }
  return alpha_bar_[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_sd_schedule() { return NoiseSchedule::scaled_linear(1000, 0.00085, 0.012); }

NoiseSchedule make_schedule(const ScheduleParams& p) {
  return NoiseSchedule::scaled_linear(p.training_steps, p.beta_start, p.beta_end);
}

TimestepGrid::TimestepGrid(std::vector<int> descending) : timesteps_(std::move(descending)) {
  if (timesteps_.empty()) throw Error(ErrorKind::Validation, "empty timestep grid", "steps");
  for (std::size_t i = 0; i < timesteps_.size(); ++i) {
    if (timesteps_[i] < 1) throw Error(ErrorKind::Validation, "grid timesteps must be >= 1", "steps");
    if (i > 0 && timesteps_[i] >= timesteps_[i - 1]) {
      throw Error(ErrorKind::Validation, "grid must be strictly decreasing", "steps");
    }
  }
}

bool TimestepGrid::contains(int t) const noexcept {
  return std::find(timesteps_.begin(), timesteps_.end(), t) != timesteps_.end();
}

std::size_t TimestepGrid::index_of(int t) const {
  auto it = std::find(timesteps_.begin(), timesteps_.end(), t);
  if (it == timesteps_.end()) {
    throw Error(ErrorKind::Schedule, "timestep " + std::to_string(t) + " is not on the grid");
  }
  return static_cast<std::size_t>(it - timesteps_.begin());
}

int TimestepGrid::next_lower(int t) const {
  const std::size_t i = index_of(t);
  return i + 1 < timesteps_.size() ? timesteps_[i + 1] : 0;
}

int TimestepGrid::next_higher(int t) const {
  if (t == 0) return timesteps_.back();
  const std::size_t i = index_of(t);
  if (i == 0) {
    throw Error(ErrorKind::Schedule,
                "timestep " + std::to_string(t) + " is the top of the grid; nothing above it");
  }
  return timesteps_[i - 1];
}

TimestepGrid make_timestep_grid(int steps, int training_steps) {
  if (steps < 1 || steps > training_steps) {
    throw Error(ErrorKind::Validation, "steps must lie in [1, T]", "steps");
  }
  // Floor spacing when T is not a multiple of steps.
  const int spacing = training_steps / steps;
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(steps));
  for (int k = steps - 1; k >= 0; --k) ts.push_back(1 + spacing * k);
  return TimestepGrid(std::move(ts));
}

GuidanceScale::GuidanceScale(double gamma) : gamma_(gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw Error(ErrorKind::Validation, "guidance scale must be positive", "gamma");
  }
}

double guidance_weight(const NoiseSchedule& schedule, const TimestepGrid& grid, int t,
                       GuidanceScale gamma) {
  const std::size_t i = grid.index_of(t);
  if (i + 1 == grid.steps()) {
    throw Error(ErrorKind::Schedule, "guidance weight undefined at the last grid step " +
                                         std::to_string(t));
  }
  const int prev = grid.timesteps()[i + 1];
  const double a_t = schedule.alpha_bar(t);
  const double a_prev = schedule.alpha_bar(prev);
  const double a_first = schedule.alpha_bar(grid.last());
  return -gamma.value() * std::sqrt(a_first) *
         (std::sqrt(1.0 / a_t - 1.0) - std::sqrt(1.0 / a_prev - 1.0));
}

LatentTensor perturb(const LatentTensor& x0, int t, const LatentTensor& noise,
                     const NoiseSchedule& schedule) {
  require_same_shape(x0, noise, "perturb");
  const double a = schedule.alpha_bar(t);
  return lincomb(std::sqrt(a), x0, std::sqrt(1.0 - a), noise);
}

FrequencyMask snr_gate(int t, const FrequencyMap& signal_power, const NoiseSchedule& schedule) {
  const double a = schedule.alpha_bar(t);
  FrequencyMask mask{signal_power.height, signal_power.width,
                     std::vector<std::uint8_t>(signal_power.values.size())};
  for (std::size_t i = 0; i < signal_power.values.size(); ++i) {
    const double s = signal_power.values[i];
    if (s < 0.0) throw Error(ErrorKind::DataIntegrity, "negative signal power");
    mask.values[i] = (s > 0.0 && a * s >= 1.0 - a) ? 1 : 0;
  }
  return mask;
}

}  // namespace freediff
