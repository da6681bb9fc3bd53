#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <string_view>

#include "freediff/schedule.hpp"
#include "freediff/spectrum.hpp"
#include "freediff/tensor.hpp"

namespace freediff {

/// What the denoiser is conditioned on. The null condition plays the
/// role of the empty prompt.
class Condition {
 public:
  enum class Kind { Null, Pattern, Text };

  static Condition null() { return Condition(Kind::Null, {}); }
  static Condition pattern(std::string id) { return Condition(Kind::Pattern, std::move(id)); }
  static Condition text(std::string prompt) { return Condition(Kind::Text, std::move(prompt)); }

  /// "null", "pattern:<id>" or "text:<prompt>".
  static Condition parse(std::string_view spec);

  Kind kind() const noexcept { return kind_; }
  bool is_null() const noexcept { return kind_ == Kind::Null; }
  const std::string& value() const noexcept { return value_; }
  std::string str() const;

  friend bool operator==(const Condition&, const Condition&) = default;

 private:
  Condition(Kind kind, std::string value) : kind_(kind), value_(std::move(value)) {}

  Kind kind_;
  std::string value_;
};

/// Unconditional and conditional noise predictions from the same model
/// state.
struct EpsilonPair {
  LatentTensor uncond;
  LatentTensor cond;

  /// g_t = eps(x, c) - eps(x, null).
  LatentTensor guidance() const { return cond - uncond; }
};

/// The epsilon-prediction contract. Implementations must be deterministic
/// and safe to call concurrently.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual Shape latent_shape() const = 0;
  virtual LatentTensor epsilon(const LatentTensor& x, int t, const Condition& c) const = 0;
  virtual EpsilonPair epsilon_pair(const LatentTensor& x, int t, const Condition& c) const;
};

/// Power-law prior in amplitude convention: the amplitude spectrum falls
/// as (1 + r)^-beta, so the power is A * (1 + r)^(-2 beta). The default A
/// gives a per-pixel variance of roughly 0.7 on a 32 x 32 grid.
struct PowerLawPrior {
  double amplitude = 64.0;
  double beta = 1.1;

  double power(double radius) const;
};

/// Stationary Gaussian field x0 ~ N(mu_c, S) with S diagonal in frequency.
/// S is expressed in units of per-pixel noise variance, so a white field of
/// unit variance has S = 1 everywhere. Conditions are mean shifts mu_c; the
/// null condition has mean zero.
class GaussianFieldModel final : public Denoiser {
 public:
  GaussianFieldModel(Shape shape, FrequencyMap prior_power, NoiseSchedule schedule,
                     std::map<std::string, LatentTensor> patterns = {});

  static GaussianFieldModel power_law(Shape shape, PowerLawPrior prior, NoiseSchedule schedule,
                                      std::map<std::string, LatentTensor> patterns = {},
                                      RadiusMetric metric = RadiusMetric::Chebyshev);

  Shape latent_shape() const override { return shape_; }
  LatentTensor epsilon(const LatentTensor& x, int t, const Condition& c) const override;

  const FrequencyMap& prior_power() const noexcept { return prior_; }
  const NoiseSchedule& schedule() const noexcept { return schedule_; }
  /// mu_c; zeros for the null condition. Throws NotFound for unknown ids
  /// and Unsupported for text conditions.
  LatentTensor mean(const Condition& c) const;

  /// Closed form of eps(., c) - eps(., null) at t, per frequency
  ///   -sqrt(ab) sqrt(1 - ab) / (ab S + 1 - ab) * mu_c.
  LatentTensor analytic_guidance(int t, const Condition& c) const;

  /// Draws x0 from the prior (plus mu_c).
  LatentTensor sample(std::mt19937_64& rng, const Condition& c = Condition::null()) const;

 private:
  Shape shape_;
  FrequencyMap prior_;
  NoiseSchedule schedule_;
  std::map<std::string, LatentTensor> patterns_;
};

/// Posterior-mean noise prediction:
///   K = sqrt(ab) S / (ab S + 1 - ab)
///   E[x0 | x_t, c] = mu_c + K (x_t - sqrt(ab) mu_c)      (per frequency)
///   eps = (x_t - sqrt(ab) E[x0 | x_t, c]) / sqrt(1 - ab)
LatentTensor gaussian_epsilon(const GaussianFieldModel& model, const LatentTensor& x, int t,
                              const Condition& c);

/// Isotropic Gaussian bump replicated across channels. The centre is given
/// as fractions of height/width, sigma as a fraction of min(H, W).
LatentTensor gaussian_blob(Shape shape, double center_y, double center_x, double sigma,
                           double amplitude);

/// Unit-variance white noise.
LatentTensor white_noise(Shape shape, std::mt19937_64& rng);

/// Field whose expected power spectrum is H*W*S (S centered, H x W).
LatentTensor sample_gaussian_field(Shape shape, const FrequencyMap& power, std::mt19937_64& rng);

/// S(r) of `prior` evaluated on `grid`.
FrequencyMap prior_power_map(const FreqGrid& grid, const PowerLawPrior& prior);

}  // namespace freediff
