#include "freediff/sampler.hpp"

#include <cmath>

#include "freediff/error.hpp"

namespace freediff {

DdimCoefficients ddim_coefficients(double alpha_bar_from, double alpha_bar_to) {
  const double sf = std::sqrt(alpha_bar_from);
  return {std::sqrt(alpha_bar_to) / sf,
          -(std::sqrt(alpha_bar_to * (1.0 - alpha_bar_from)) -
            std::sqrt((1.0 - alpha_bar_to) * alpha_bar_from)) /
              sf};
}

LatentTensor ddim_step(const LatentTensor& x_from, const LatentTensor& eps, int t_from, int t_to,
                       const NoiseSchedule& schedule, const TimestepGrid& grid) {
  const bool adjacent = t_to < t_from ? grid.contains(t_from) && grid.next_lower(t_from) == t_to
                        : t_to > t_from ? (t_from == 0 || grid.contains(t_from)) &&
                                              t_from != grid.first() &&
                                              grid.next_higher(t_from) == t_to
                                        : false;
  if (!adjacent) {
    throw Error(ErrorKind::Schedule, "ddim_step: " + std::to_string(t_from) + " -> " +
                                         std::to_string(t_to) + " is not a grid step");
  }
  require_same_shape(x_from, eps, "ddim_step");
  const auto k = ddim_coefficients(schedule.alpha_bar(t_from), schedule.alpha_bar(t_to));
  return lincomb(k.scale, x_from, k.eps_coef, eps);
}

LatentTensor guided_epsilon(const Denoiser& model, const LatentTensor& x, int t,
                            const Condition& c, GuidanceScale gamma) {
  if (c.is_null()) return model.epsilon(x, t, c);
  auto pair = model.epsilon_pair(x, t, c);
  return lincomb(1.0, pair.uncond, gamma.value(), pair.guidance());
}

LatentTensor ddim_invert_step_approx(const LatentTensor& x_t, int t, const Denoiser& model,
                                     const Condition& c, GuidanceScale gamma,
                                     const NoiseSchedule& schedule, const TimestepGrid& grid) {
  const int t_next = grid.next_higher(t);
  return ddim_step(x_t, guided_epsilon(model, x_t, t_next, c, gamma), t, t_next, schedule, grid);
}

FixedPointResult fixed_point_invert_step(const LatentTensor& x_t, int t, const Denoiser& model,
                                         const Condition& c, GuidanceScale gamma,
                                         FixedPointSettings settings,
                                         const NoiseSchedule& schedule, const TimestepGrid& grid) {
  if (settings.iterations < 0) {
    throw Error(ErrorKind::Validation, "fixed-point iterations must be >= 0", "fp_iters");
  }
  const int t_next = grid.next_higher(t);
  FixedPointResult result{ddim_invert_step_approx(x_t, t, model, c, gamma, schedule, grid), {}};
  const double seed_norm = result.x.norm();
  for (int i = 0; i < settings.iterations; ++i) {
    LatentTensor next =
        ddim_step(x_t, guided_epsilon(model, result.x, t_next, c, gamma), t, t_next, schedule, grid);
    result.residuals.push_back((next - result.x).norm());
    if (seed_norm > 0.0 && next.norm() > 10.0 * seed_norm) {
      throw Error(ErrorKind::Convergence,
                  "fixed-point inversion diverged at t=" + std::to_string(t_next) + " iteration " +
                      std::to_string(i + 1));
    }
    result.x = std::move(next);
  }
  return result;
}

Trajectory invert(const LatentTensor& x0, const Denoiser& model, const Condition& c,
                  GuidanceScale gamma, FixedPointSettings settings, const NoiseSchedule& schedule,
                  const TimestepGrid& grid, const StepCallback& on_step) {
  Trajectory traj;
  traj.direction = Trajectory::Direction::Inversion;
  traj.points.reserve(grid.steps() + 1);
  traj.points.push_back({0, x0});
  int t = 0;
  while (t != grid.first()) {
    if (on_step) on_step(traj.residuals.size(), t);
    const int t_next = grid.next_higher(t);
    auto step = fixed_point_invert_step(traj.points.back().x, t, model, c, gamma, settings,
                                        schedule, grid);
    traj.residuals.push_back(std::move(step.residuals));
    traj.points.push_back({t_next, std::move(step.x)});
    t = t_next;
  }
  return traj;
}

LatentTensor predict_x0(const LatentTensor& x_t, int t, const LatentTensor& eps,
                        const NoiseSchedule& schedule) {
  const double a = schedule.alpha_bar(t);
  const double sa = std::sqrt(a);
  return lincomb(1.0 / sa, x_t, -std::sqrt(1.0 - a) / sa, eps);
}

GuidanceRefiner identity_refiner() {
  return [](const LatentTensor& g, int) { return g; };
}

GuidanceRefiner zero_refiner() {
  return [](const LatentTensor& g, int) { return LatentTensor::zeros(g.shape()); };
}

GenerationResult generate(const LatentTensor& x_T, const Denoiser& model, const Condition& c,
                          GuidanceScale gamma, const GuidanceRefiner& refiner,
                          const NoiseSchedule& schedule, const TimestepGrid& grid,
                          const GenerateOptions& options) {
  GenerationResult result;
  LatentTensor x = x_T;
  const auto ts = grid.timesteps();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    if (options.on_step) options.on_step(i, t);
    auto pair = model.epsilon_pair(x, t, c);
    LatentTensor g = pair.guidance();
    LatentTensor refined = refiner(g, t);
    if (refined.shape() != g.shape()) {
      throw Error(ErrorKind::Shape, "refiner changed guidance shape at t=" + std::to_string(t));
    }
    LatentTensor eps = lincomb(1.0, pair.uncond, gamma.value(), refined);
    if (options.record) {
      result.steps.push_back({i, t, std::move(g), refined, predict_x0(x, t, eps, schedule)});
    }
    x = ddim_step(x, eps, t, grid.next_lower(t), schedule, grid);
  }
  result.x0 = std::move(x);
  return result;
}

}  // namespace freediff
