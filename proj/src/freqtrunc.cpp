#include "freediff/freqtrunc.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "freediff/error.hpp"

namespace freediff {

FrequencyMask highpass_mask(const FreqGrid& grid, double r_high) {
  if (!(r_high >= 0.0)) throw Error(ErrorKind::Validation, "r_high must be >= 0", "r_h");
  FrequencyMask m{grid.height(), grid.width(), {}};
  m.values.reserve(grid.radii().size());
  for (double r : grid.radii()) m.values.push_back(r > r_high ? 1 : 0);
  return m;
}

FrequencyMask lowpass_mask(const FreqGrid& grid, double r_low) {
  if (!(r_low >= 0.0)) throw Error(ErrorKind::Validation, "r_low must be >= 0", "r_l");
  FrequencyMask m{grid.height(), grid.width(), {}};
  m.values.reserve(grid.radii().size());
  for (double r : grid.radii()) m.values.push_back(r < r_low ? 1 : 0);
  return m;
}

LatentTensor freq_truncate(const LatentTensor& g, const FreqGrid& grid, double r_high,
                           std::optional<double> r_low) {
  if (grid.height() != g.shape().height || grid.width() != g.shape().width) {
    throw Error(ErrorKind::Shape, "frequency grid does not match guidance " + g.shape().str());
  }
  FrequencyMask mask = highpass_mask(grid, r_high);
  if (r_low) {
    const FrequencyMask low = lowpass_mask(grid, *r_low);
    for (std::size_t i = 0; i < mask.values.size(); ++i) mask.values[i] &= low.values[i];
  }
  return idft2(apply_mask(dft2(g), mask));
}

SpatialMaskResult spatial_rel_change_mask(const LatentTensor& g_hat, const LatentTensor& g,
                                          double kappa) {
  require_same_shape(g_hat, g, "spatial_rel_change_mask");
  if (!(kappa > 0.0)) throw Error(ErrorKind::Validation, "kappa must be positive", "kappa");
  auto gh = g_hat.values();
  auto gv = g.values();
  SpatialMaskResult out;
  out.mask.resize(gv.size());
  std::vector<double> filtered(gv.size());
  for (std::size_t i = 0; i < gv.size(); ++i) {
    bool keep;
    if (gv[i] == 0.0) {
      keep = gh[i] == 0.0;
    } else {
      keep = std::abs(gh[i] - gv[i]) / std::abs(gv[i]) < kappa;
    }
    out.mask[i] = keep ? 1 : 0;
    filtered[i] = keep ? gh[i] : 0.0;
  }
  out.filtered = LatentTensor(g.shape(), std::move(filtered));
  return out;
}

EtaResult eta_truncate(const LatentTensor& g_tilde, double eta_fraction) {
  if (!(eta_fraction >= 0.0 && eta_fraction <= 1.0)) {
    throw Error(ErrorKind::Validation, "eta must lie in [0, 1]", "eta");
  }
  auto v = g_tilde.values();
  std::vector<double> mags(v.size());
  std::transform(v.begin(), v.end(), mags.begin(), [](double x) { return std::abs(x); });
  // Nearest rank k = ceil(eta * n): at most n - k >= (1 - eta) n cells lie above it.
  const auto n = mags.size();
  const auto k = static_cast<std::size_t>(std::ceil(eta_fraction * static_cast<double>(n) - 1e-9));
  double threshold = 0.0;
  if (k > 0 && n > 0) {
    std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(k - 1), mags.end());
    threshold = mags[k - 1];
  }
  EtaResult out;
  out.threshold = threshold;
  out.mask.resize(n);
  std::vector<double> kept(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool keep = std::abs(v[i]) > threshold;
    out.mask[i] = keep ? 1 : 0;
    kept[i] = keep ? v[i] : 0.0;
  }
  out.truncated = LatentTensor(g_tilde.shape(), std::move(kept));
  return out;
}

void TruncationSchedule::validate() const {
  if (segments.empty()) throw Error(ErrorKind::Validation, "schedule has no segments", "segments");
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const Segment& s = segments[i];
    if (i > 0 && s.tau >= segments[i - 1].tau) {
      throw Error(ErrorKind::Validation,
                  "segment taus must be strictly decreasing (got " +
                      std::to_string(segments[i - 1].tau) + " then " +
                      std::to_string(s.tau) + ")",
                  "segments");
    }
    if (!(s.r_high >= 0.0) || !std::isfinite(s.r_high)) {
      throw Error(ErrorKind::Validation, "r_h must be a finite radius >= 0", "segments");
    }
    if (s.r_low && !(*s.r_low > s.r_high)) {
      throw Error(ErrorKind::Validation, "r_l must exceed r_h", "segments");
    }
  }
  if (segments.back().tau != 1) {
    throw Error(ErrorKind::Validation, "the last segment must end at tau = 1", "segments");
  }
  if (horizon < segments.front().tau) {
    throw Error(ErrorKind::Validation, "horizon lies below the first tau", "horizon");
  }
  if (!(kappa > 0.0)) throw Error(ErrorKind::Validation, "kappa must be positive", "kappa");
  if (!(eta_fraction >= 0.0 && eta_fraction <= 1.0)) {
    throw Error(ErrorKind::Validation, "eta must lie in [0, 1]", "eta");
  }
}

std::size_t TruncationSchedule::active_segment(int t) const {
  if (t < 1 || t > horizon) {
    throw Error(ErrorKind::Schedule, "timestep " + std::to_string(t) +
                                         " is outside the schedule coverage [1, " +
                                         std::to_string(horizon) + "]");
  }
  // First segment whose lower end tau_k is reached; the last tau is 1.
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (t >= segments[i].tau) return i;
  }
  return segments.size() - 1;
}

LatentTensor refine_guidance(const LatentTensor& g, int t, const TruncationSchedule& schedule,
                             const FreqGrid& grid) {
  const Segment& seg = schedule.segments[schedule.active_segment(t)];
  if (grid.height() != g.shape().height || grid.width() != g.shape().width) {
    throw Error(ErrorKind::Shape, "frequency grid does not match guidance " + g.shape().str());
  }
  if (seg.r_high >= grid.max_radius()) return LatentTensor::zeros(g.shape());

  LatentTensor g_hat = freq_truncate(g, grid, seg.r_high, seg.r_low);
  LatentTensor g_tilde =
      schedule.spatial_enabled ? spatial_rel_change_mask(g_hat, g, schedule.kappa).filtered : g_hat;
  return schedule.eta_enabled ? eta_truncate(g_tilde, schedule.eta_fraction).truncated : g_tilde;
}

std::string_view to_string(EditCategory category) noexcept {
  switch (category) {
    case EditCategory::SF0: return "SF-0";
    case EditCategory::SF1: return "SF-1";
    case EditCategory::SF2: return "SF-2";
  }
  return "?";
}

std::string Preset::id() const {
  const char digit = category == EditCategory::SF0 ? '0' : category == EditCategory::SF1 ? '1' : '2';
  return std::string("sf") + digit + "." + std::to_string(variant);
}

std::span<const Preset> preset_catalog() {
  static const std::array<Preset, 5> catalog{{
      {EditCategory::SF1, 0, {781, 581, 1}, {32, 10, 10}},
      {EditCategory::SF1, 1, {781, 581, 1}, {32, 32, 10}},
      {EditCategory::SF1, 2, {681, 581, 481, 1}, {32, 20, 8, 1}},
      {EditCategory::SF2, 0, {781, 581, 1}, {32, 32, 20}},
      {EditCategory::SF2, 1, {781, 481, 1}, {32, 32, 24}},
  }};
  return catalog;
}

TruncationSchedule load_preset(EditCategory category, int variant) {
  if (category == EditCategory::SF0) {
    throw Error(ErrorKind::Unsupported,
                "SF-0 edits have no truncation preset; two-step process required", "preset");
  }
  for (const Preset& p : preset_catalog()) {
    if (p.category != category || p.variant != variant) continue;
    TruncationSchedule s;
    for (std::size_t i = 0; i < p.taus.size(); ++i) s.segments.push_back({p.taus[i], p.radii[i], std::nullopt});
    s.kappa = kDefaultKappa;
    s.eta_fraction = kDefaultEta;
    return s;
  }
  throw Error(ErrorKind::NotFound,
              "no preset " + std::string(to_string(category)) + " variant " + std::to_string(variant),
              "preset");
}

TruncationSchedule load_preset(std::string_view id) {
  if (id.size() == 5 && id.substr(0, 2) == "sf" && id[3] == '.' && id[2] >= '0' && id[2] <= '2' &&
      id[4] >= '0' && id[4] <= '9') {
    const auto category = static_cast<EditCategory>(id[2] - '0');
    return load_preset(category, id[4] - '0');
  }
  throw Error(ErrorKind::NotFound, "unknown preset '" + std::string(id) + "'", "preset");
}

}  // namespace freediff
