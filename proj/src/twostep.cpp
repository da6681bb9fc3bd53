#include "freediff/twostep.hpp"

#include <algorithm>
#include <cmath>

#include "freediff/error.hpp"

namespace freediff {

CoarseMask::CoarseMask(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (values_.size() != height_ * width_) throw Error(ErrorKind::Shape, "mask size mismatch");
  for (double& v : values_) {
    if (!std::isfinite(v)) throw Error(ErrorKind::DataIntegrity, "non-finite mask value");
    v = std::clamp(v, 0.0, 1.0);
  }
}

LatentTensor CoarseMask::to_tensor() const {
  return LatentTensor(Shape{1, height_, width_}, values_);
}

CoarseMask CoarseMask::from_tensor(const LatentTensor& t) {
  if (t.shape().channels != 1) {
    throw Error(ErrorKind::Shape, "a coarse mask is single-channel, got " + t.shape().str());
  }
  return CoarseMask(t.shape().height, t.shape().width, {t.values().begin(), t.values().end()});
}

CoarseMask accumulate_coarse_mask(std::span<const LatentTensor> refined, double quantile) {
  if (refined.empty()) throw Error(ErrorKind::Precondition, "no refined guidance recorded");
  if (!(quantile >= 0.0 && quantile <= 1.0)) {
    throw Error(ErrorKind::Validation, "mask quantile must lie in [0, 1]", "mask_quantile");
  }
  const Shape shape = refined.front().shape();
  for (const auto& g : refined) {
    if (g.shape().height != shape.height || g.shape().width != shape.width) {
      throw Error(ErrorKind::Shape, "refined guidance maps disagree on H x W");
    }
  }
  const std::size_t plane = shape.plane();
  // Per-cell terms are summed in sorted order so the result does not depend
  // on the order of the artifacts.
  std::vector<double> sum(plane, 0.0), terms;
  for (std::size_t cell = 0; cell < plane; ++cell) {
    terms.clear();
    for (const auto& g : refined) {
      for (std::size_t c = 0; c < g.shape().channels; ++c) {
        terms.push_back(std::abs(g.values()[c * plane + cell]));
      }
    }
    std::sort(terms.begin(), terms.end());
    for (double v : terms) sum[cell] += v;
  }
  const double peak = *std::max_element(sum.begin(), sum.end());
  std::vector<double> out(plane, 0.0);
  if (peak > 0.0) {
    for (double& v : sum) v /= peak;
    const auto k = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(plane) - 1e-9));
    double threshold = 0.0;
    if (k > 0) {
      std::vector<double> sorted = sum;
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
      threshold = sorted[k - 1];
    }
    for (std::size_t i = 0; i < plane; ++i) out[i] = (sum[i] > 0.0 && sum[i] >= threshold) ? 1.0 : 0.0;
  }
  return CoarseMask(shape.height, shape.width, std::move(out));
}

CoarseMask invert_mask(const CoarseMask& mask) {
  std::vector<double> out(mask.values().begin(), mask.values().end());
  for (double& v : out) v = 1.0 - v;
  return CoarseMask(mask.height(), mask.width(), std::move(out));
}

LatentTensor masked_guidance_edit(const LatentTensor& g, int /*t*/, const CoarseMask& mask,
                                  double amplify) {
  if (!(amplify > 0.0)) throw Error(ErrorKind::Validation, "amplify must be positive", "amplify");
  if (mask.height() != g.shape().height || mask.width() != g.shape().width) {
    throw Error(ErrorKind::Shape, "mask " + std::to_string(mask.height()) + "x" +
                                      std::to_string(mask.width()) + " does not match guidance " +
                                      g.shape().str());
  }
  return amplify * g.hadamard(mask.values());
}

TwoStepResult run_two_step(const LatentTensor& x_T, const Denoiser& model,
                           const Condition& descriptor, const Condition& edit, GuidanceScale gamma,
                           const TwoStepOptions& options, const NoiseSchedule& schedule,
                           const TimestepGrid& grid, const FreqGrid& freq_grid,
                           const GenerateOptions& pass1, const GenerateOptions& pass2) {
  options.descriptor_schedule.validate();
  if (options.compose_with_truncation) options.edit_schedule.validate();

  GenerateOptions first = pass1;
  first.record = true;
  const auto& descriptor_schedule = options.descriptor_schedule;
  GenerationResult descriptor_pass = generate(
      x_T, model, descriptor, gamma,
      [&](const LatentTensor& g, int t) { return refine_guidance(g, t, descriptor_schedule, freq_grid); },
      schedule, grid, first);

  std::vector<LatentTensor> refined;
  refined.reserve(descriptor_pass.steps.size());
  for (const auto& s : descriptor_pass.steps) refined.push_back(s.refined_guidance);
  CoarseMask mask = accumulate_coarse_mask(refined, options.quantile);
  if (options.invert) mask = invert_mask(mask);

  GuidanceRefiner gated = [&](const LatentTensor& g, int t) {
    if (options.compose_with_truncation) {
      return masked_guidance_edit(refine_guidance(g, t, options.edit_schedule, freq_grid), t, mask,
                                  options.amplify);
    }
    return masked_guidance_edit(g, t, mask, options.amplify);
  };
  GenerationResult edit_pass = generate(x_T, model, edit, gamma, gated, schedule, grid, pass2);
  return {std::move(mask), std::move(descriptor_pass), std::move(edit_pass)};
}

}  // namespace freediff
