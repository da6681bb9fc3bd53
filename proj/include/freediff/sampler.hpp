#pragma once

#include <functional>
#include <vector>

#include "freediff/denoiser.hpp"
#include "freediff/schedule.hpp"
#include "freediff/tensor.hpp"

namespace freediff {

struct TrajectoryPoint {
  int t;
  LatentTensor x;
};

struct Trajectory {
  enum class Direction { Inversion, Generation };

  Direction direction = Direction::Inversion;
  std::vector<TrajectoryPoint> points;
  /// Fixed-point residuals of each inversion step (empty for generation).
  std::vector<std::vector<double>> residuals;

  const LatentTensor& final_latent() const { return points.back().x; }
};

struct FixedPointSettings {
  int iterations = 5;
};

/// Coefficients of x_to = scale * x_from + eps_coef * eps.
struct DdimCoefficients {
  double scale;
  double eps_coef;
};

DdimCoefficients ddim_coefficients(double alpha_bar_from, double alpha_bar_to);

/// One deterministic DDIM update between adjacent timesteps of the grid
/// extended with 0. Works in both directions; Schedule error when the pair
/// is not adjacent.
LatentTensor ddim_step(const LatentTensor& x_from, const LatentTensor& eps, int t_from, int t_to,
                       const NoiseSchedule& schedule, const TimestepGrid& grid);

/// Classifier-free combination eps_null + gamma * g (just eps_null when c
/// is null).
LatentTensor guided_epsilon(const Denoiser& model, const LatentTensor& x, int t,
                            const Condition& c, GuidanceScale gamma);

/// Explicit inversion step: eps evaluated at the current latent with the
/// target timestep.
LatentTensor ddim_invert_step_approx(const LatentTensor& x_t, int t, const Denoiser& model,
                                     const Condition& c, GuidanceScale gamma,
                                     const NoiseSchedule& schedule, const TimestepGrid& grid);

struct FixedPointResult {
  LatentTensor x;
  /// ||x^{i+1} - x^i|| for each refinement.
  std::vector<double> residuals;
};

/// Seeds with the explicit step, then applies x <- f(x) `iterations`
/// times where f(x) = step(x_t, eps(x, t+1)). Convergence error when an
/// iterate grows past 10x the seed norm.
FixedPointResult fixed_point_invert_step(const LatentTensor& x_t, int t, const Denoiser& model,
                                         const Condition& c, GuidanceScale gamma,
                                         FixedPointSettings settings,
                                         const NoiseSchedule& schedule, const TimestepGrid& grid);

/// Called before inversion step `index` leaves timestep t.
using StepCallback = std::function<void(std::size_t index, int t)>;

/// Inverts x0 (t = 0) up to the largest grid timestep. The trajectory has
/// steps + 1 points.
Trajectory invert(const LatentTensor& x0, const Denoiser& model, const Condition& c,
                  GuidanceScale gamma, FixedPointSettings settings, const NoiseSchedule& schedule,
                  const TimestepGrid& grid, const StepCallback& on_step = {});

/// x0|t = x_t / sqrt(ab_t) - sqrt(1 - ab_t) / sqrt(ab_t) * eps.
LatentTensor predict_x0(const LatentTensor& x_t, int t, const LatentTensor& eps,
                        const NoiseSchedule& schedule);

/// Maps raw guidance g_t at timestep t to the guidance actually applied.
/// Must be pure and shape-preserving.
using GuidanceRefiner = std::function<LatentTensor(const LatentTensor& g, int t)>;

GuidanceRefiner identity_refiner();
GuidanceRefiner zero_refiner();

struct StepRecord {
  std::size_t index;
  int t;
  LatentTensor guidance;          // g_t
  LatentTensor refined_guidance;  // g*_t
  LatentTensor x0_prediction;     // x0|t under the applied eps
};

struct GenerateOptions {
  bool record = false;
  /// Called before step `index` (0-based) runs at timestep t.
  std::function<void(std::size_t index, int t)> on_step;
};

struct GenerationResult {
  LatentTensor x0;
  std::vector<StepRecord> steps;
};

/// Runs the grid from its largest timestep down to 0. Each step queries
/// eps_null and eps_c, forms g = eps_c - eps_null, refines it, applies
/// eps = eps_null + gamma * g* and takes a DDIM step.
GenerationResult generate(const LatentTensor& x_T, const Denoiser& model, const Condition& c,
                          GuidanceScale gamma, const GuidanceRefiner& refiner,
                          const NoiseSchedule& schedule, const TimestepGrid& grid,
                          const GenerateOptions& options = {});

}  // namespace freediff
