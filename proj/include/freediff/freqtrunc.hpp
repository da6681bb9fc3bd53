#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "freediff/spectrum.hpp"
#include "freediff/tensor.hpp"

namespace freediff {

/// Pass band r > r_high.
FrequencyMask highpass_mask(const FreqGrid& grid, double r_high);
/// Pass band r < r_low.
FrequencyMask lowpass_mask(const FreqGrid& grid, double r_low);

/// IDFT(DFT(g) . M_H . M_L), channel by channel. Without r_low there is no
/// low-pass factor.
LatentTensor freq_truncate(const LatentTensor& g, const FreqGrid& grid, double r_high,
                           std::optional<double> r_low = std::nullopt);

struct SpatialMaskResult {
  std::vector<std::uint8_t> mask;  // M^S, one entry per C*H*W cell
  LatentTensor filtered;           // g_tilde = g_hat . M^S
};

/// Keeps cells with |g_hat - g| / |g| < kappa. Where g = 0 the cell is
/// kept only if g_hat is also 0.
SpatialMaskResult spatial_rel_change_mask(const LatentTensor& g_hat, const LatentTensor& g,
                                          double kappa);

struct EtaResult {
  std::vector<std::uint8_t> mask;  // M^V
  LatentTensor truncated;          // g* = g_tilde . M^V
  double threshold;
};

/// Zeroes the `eta_fraction` smallest-magnitude cells: threshold is the
/// nearest-rank eta-quantile of |g_tilde| over all cells (zeros included)
/// and only cells strictly above it survive.
EtaResult eta_truncate(const LatentTensor& g_tilde, double eta_fraction);

struct Segment {
  int tau;
  double r_high;
  std::optional<double> r_low;

  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Progressive truncation plan. Segment k covers [tau_k, tau_{k-1}) and
/// the first covers [tau_0, horizon], so the taus are the lower ends of
/// their intervals. A segment whose r_high reaches the grid's
/// maximal radius zeroes the guidance, which is how timesteps outside the
/// response period are encoded.
struct TruncationSchedule {
  std::vector<Segment> segments;
  double kappa = 0.6;
  double eta_fraction = 0.8;
  bool spatial_enabled = true;
  bool eta_enabled = true;
  int horizon = 1000;

  /// Throws Validation naming the offending field.
  void validate() const;
  /// Index of the segment covering t; Schedule error outside [1, horizon].
  std::size_t active_segment(int t) const;

  friend bool operator==(const TruncationSchedule&, const TruncationSchedule&) = default;
};

inline constexpr double kDefaultKappa = 0.6;
inline constexpr double kDefaultEta = 0.8;

/// freq_truncate -> spatial_rel_change_mask -> eta_truncate with the
/// parameters of the segment active at t.
LatentTensor refine_guidance(const LatentTensor& g, int t, const TruncationSchedule& schedule,
                             const FreqGrid& grid);

enum class EditCategory { SF0, SF1, SF2 };

std::string_view to_string(EditCategory category) noexcept;

struct Preset {
  EditCategory category;
  int variant;
  std::vector<int> taus;
  std::vector<double> radii;

  /// "sf1.0", "sf2.1", ...
  std::string id() const;
};

/// The five tabulated hyperparameter sets (SF-1 x3, SF-2 x2). SF-0 has
/// none; it requires the two-step process.
std::span<const Preset> preset_catalog();

TruncationSchedule load_preset(EditCategory category, int variant);
/// Accepts "sf1.0" style ids. NotFound for unknown ids.
TruncationSchedule load_preset(std::string_view id);

}  // namespace freediff
