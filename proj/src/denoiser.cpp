#include "freediff/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "freediff/error.hpp"

namespace freediff {

Condition Condition::parse(std::string_view spec) {
  if (spec == "null" || spec.empty()) return null();
  if (spec.starts_with("pattern:") && spec.size() > 8) return pattern(std::string(spec.substr(8)));
  if (spec.starts_with("text:")) return text(std::string(spec.substr(5)));
  throw Error(ErrorKind::Validation,
              "condition must be 'null', 'pattern:<id>' or 'text:<prompt>', got '" +
                  std::string(spec) + "'",
              "condition");
}

std::string Condition::str() const {
  switch (kind_) {
    case Kind::Null: return "null";
    case Kind::Pattern: return "pattern:" + value_;
    case Kind::Text: return "text:" + value_;
  }
  return "null";
}

EpsilonPair Denoiser::epsilon_pair(const LatentTensor& x, int t, const Condition& c) const {
  LatentTensor uncond = epsilon(x, t, Condition::null());
  LatentTensor cond = c.is_null() ? uncond : epsilon(x, t, c);
  return {std::move(uncond), std::move(cond)};
}

double PowerLawPrior::power(double radius) const {
  return amplitude * std::pow(1.0 + radius, -2.0 * beta);
}

FrequencyMap prior_power_map(const FreqGrid& grid, const PowerLawPrior& prior) {
  if (!(prior.amplitude > 0.0) || !(prior.beta >= 0.0)) {
    throw Error(ErrorKind::Validation, "power-law prior needs amplitude > 0 and beta >= 0",
                "prior");
  }
  FrequencyMap map{grid.height(), grid.width(), {}};
  map.values.reserve(grid.radii().size());
  for (double r : grid.radii()) map.values.push_back(prior.power(r));
  return map;
}

GaussianFieldModel::GaussianFieldModel(Shape shape, FrequencyMap prior_power,
                                       NoiseSchedule schedule,
                                       std::map<std::string, LatentTensor> patterns)
    : shape_(shape),
      prior_(std::move(prior_power)),
      schedule_(std::move(schedule)),
      patterns_(std::move(patterns)) {
  if (prior_.height != shape_.height || prior_.width != shape_.width ||
      prior_.values.size() != shape_.plane()) {
    throw Error(ErrorKind::Shape, "prior spectrum does not match latent shape " + shape_.str());
  }
  for (double s : prior_.values) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw Error(ErrorKind::Validation, "prior power must be positive everywhere", "prior");
    }
  }
  for (const auto& [id, mu] : patterns_) {
    if (mu.shape() != shape_) {
      throw Error(ErrorKind::Shape, "pattern '" + id + "' has shape " + mu.shape().str());
    }
  }
}

GaussianFieldModel GaussianFieldModel::power_law(Shape shape, PowerLawPrior prior,
                                                 NoiseSchedule schedule,
                                                 std::map<std::string, LatentTensor> patterns,
                                                 RadiusMetric metric) {
  return GaussianFieldModel(shape, prior_power_map(radial_grid(shape.height, shape.width, metric), prior),
                            std::move(schedule), std::move(patterns));
}

LatentTensor GaussianFieldModel::mean(const Condition& c) const {
  switch (c.kind()) {
    case Condition::Kind::Null: return LatentTensor::zeros(shape_);
    case Condition::Kind::Pattern: {
      auto it = patterns_.find(c.value());
      if (it == patterns_.end()) {
        throw Error(ErrorKind::NotFound, "unknown pattern id '" + c.value() + "'", "condition");
      }
      return it->second;
    }
    case Condition::Kind::Text: break;
  }
  throw Error(ErrorKind::Unsupported, "the analytic backend does not accept text conditions",
              "condition");
}

LatentTensor GaussianFieldModel::epsilon(const LatentTensor& x, int t, const Condition& c) const {
  return gaussian_epsilon(*this, x, t, c);
}

LatentTensor gaussian_epsilon(const GaussianFieldModel& model, const LatentTensor& x, int t,
                              const Condition& c) {
  const Shape shape = model.latent_shape();
  if (x.shape() != shape) {
    throw Error(ErrorKind::Shape, "latent " + x.shape().str() + " does not match model " + shape.str());
  }
  if (t < 1 || t > model.schedule().training_steps()) {
    throw Error(ErrorKind::Schedule, "epsilon needs t in [1, T], got " + std::to_string(t));
  }
  const double a = model.schedule().alpha_bar(t);
  const double sa = std::sqrt(a), s1a = std::sqrt(1.0 - a);
  const auto& prior = model.prior_power().values;
  const std::size_t plane = shape.plane();

  Spectrum xs = dft2(x);
  const bool has_mean = !c.is_null();
  Spectrum ms = has_mean ? dft2(model.mean(c)) : Spectrum();
  auto bins = xs.mutable_bins();
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const double s = prior[i % plane];
    const double gain = sa * s / (a * s + 1.0 - a);
    const Complex mu = has_mean ? ms.bins()[i] : Complex{};
    const Complex posterior = mu + gain * (bins[i] - sa * mu);
    bins[i] = (bins[i] - sa * posterior) / s1a;
  }
  return idft2(xs);
}

LatentTensor GaussianFieldModel::analytic_guidance(int t, const Condition& c) const {
  if (c.is_null()) return LatentTensor::zeros(shape_);
  const double a = schedule_.alpha_bar(t);
  Spectrum ms = dft2(mean(c));
  auto bins = ms.mutable_bins();
  const std::size_t plane = shape_.plane();
  for (std::size_t i = 0; i < bins.size(); ++i) {
    const double s = prior_.values[i % plane];
    bins[i] *= -std::sqrt(a) * std::sqrt(1.0 - a) / (a * s + 1.0 - a);
  }
  return idft2(ms);
}

LatentTensor GaussianFieldModel::sample(std::mt19937_64& rng, const Condition& c) const {
  LatentTensor field = sample_gaussian_field(shape_, prior_, rng);
  return c.is_null() ? field : field + mean(c);
}

LatentTensor white_noise(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(shape.size());
  for (double& e : v) e = normal(rng);
  return LatentTensor(shape, std::move(v));
}

LatentTensor sample_gaussian_field(Shape shape, const FrequencyMap& power, std::mt19937_64& rng) {
  if (power.height != shape.height || power.width != shape.width) {
    throw Error(ErrorKind::Shape, "power map does not match " + shape.str());
  }
  Spectrum spec = dft2(white_noise(shape, rng));
  auto bins = spec.mutable_bins();
  const std::size_t plane = shape.plane();
  for (std::size_t i = 0; i < bins.size(); ++i) bins[i] *= std::sqrt(power.values[i % plane]);
  return idft2(spec);
}

LatentTensor gaussian_blob(Shape shape, double center_y, double center_x, double sigma,
                           double amplitude) {
  if (!(sigma > 0.0)) throw Error(ErrorKind::Validation, "blob sigma must be positive", "sigma");
  const double cy = center_y * static_cast<double>(shape.height);
  const double cx = center_x * static_cast<double>(shape.width);
  const double sp = sigma * static_cast<double>(std::min(shape.height, shape.width));
  return LatentTensor::generate(shape, [&](std::size_t, std::size_t y, std::size_t x) {
    const double dy = static_cast<double>(y) + 0.5 - cy;
    const double dx = static_cast<double>(x) + 0.5 - cx;
    return amplitude * std::exp(-(dy * dy + dx * dx) / (2.0 * sp * sp));
  });
}

}  // namespace freediff
