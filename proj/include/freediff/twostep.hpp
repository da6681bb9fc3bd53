#pragma once

#include <span>
#include <vector>

#include "freediff/freqtrunc.hpp"
#include "freediff/sampler.hpp"
#include "freediff/tensor.hpp"

namespace freediff {

/// Single-channel H x W mask with values in [0, 1].
class CoarseMask {
 public:
  CoarseMask(std::size_t height, std::size_t width, std::vector<double> values);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::span<const double> values() const noexcept { return values_; }
  double operator()(std::size_t y, std::size_t x) const { return values_[y * width_ + x]; }

  LatentTensor to_tensor() const;
  static CoarseMask from_tensor(const LatentTensor& t);

  friend bool operator==(const CoarseMask&, const CoarseMask&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> values_;
};

inline constexpr double kDefaultMaskQuantile = 0.7;
inline constexpr double kDefaultAmplify = 2.0;

/// Sums |g*_t| over steps and channels per cell, scales to [0, 1] and
/// binarizes: cells at or above the nearest-rank `quantile` of the
/// normalized map, and non-zero, become 1.
CoarseMask accumulate_coarse_mask(std::span<const LatentTensor> refined, double quantile = kDefaultMaskQuantile);

CoarseMask invert_mask(const CoarseMask& mask);

/// amplify * (g . mask), mask broadcast over channels.
LatentTensor masked_guidance_edit(const LatentTensor& g, int t, const CoarseMask& mask,
                                  double amplify);

struct TwoStepOptions {
  TruncationSchedule descriptor_schedule;
  double quantile = kDefaultMaskQuantile;
  double amplify = kDefaultAmplify;
  /// Edit the surroundings instead of the object.
  bool invert = false;
  /// Also apply the progressive truncation in pass 2.
  bool compose_with_truncation = false;
  TruncationSchedule edit_schedule;
};

struct TwoStepResult {
  CoarseMask mask;
  GenerationResult descriptor_pass;
  GenerationResult edit_pass;
};

/// Pass 1 generates with the descriptor condition under the progressive
/// truncation and records g*_t; pass 2 regenerates with the edit condition
/// gated by the aggregated mask. `on_pass` is told which pass starts.
TwoStepResult run_two_step(const LatentTensor& x_T, const Denoiser& model,
                           const Condition& descriptor, const Condition& edit, GuidanceScale gamma,
                           const TwoStepOptions& options, const NoiseSchedule& schedule,
                           const TimestepGrid& grid, const FreqGrid& freq_grid,
                           const GenerateOptions& pass1 = {}, const GenerateOptions& pass2 = {});

}  // namespace freediff
