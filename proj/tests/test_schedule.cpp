#include <cmath>
#include <ranges>

#include "doctest.h"
#include "freediff/denoiser.hpp"
#include "freediff/error.hpp"
#include "freediff/schedule.hpp"
#include "test_support.hpp"

using namespace freediff;

namespace {

// Reference values of the scaled-linear product, computed once with a
// 50-digit arbitrary-precision implementation.
constexpr double kAlphaBar500 = 0.277669650456467814070068114322;
constexpr double kAlphaBar981 = 0.00584378331868329568778073743025;
constexpr double kAlphaBar1000 = 0.00466009851307724040389766636593;

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::Numerical;
}

std::vector<int> as_vector(const TimestepGrid& g) { return {g.timesteps().begin(), g.timesteps().end()}; }

}  // namespace

TEST_CASE("default schedule values") {
  const NoiseSchedule s = make_sd_schedule();
  CHECK(s.training_steps() == 1000);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.99915).epsilon(1e-15));
  CHECK(std::abs(s.alpha_bar(500) - kAlphaBar500) < 1e-14);
  CHECK(std::abs(s.alpha_bar(981) - kAlphaBar981) < 1e-15);
  CHECK(std::abs(s.alpha_bar(1000) - kAlphaBar1000) < 1e-15);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1) > 0.99);
  CHECK(s.alpha_bar(1000) < 0.01);
}

TEST_CASE("alpha_bar is strictly decreasing") {
  const NoiseSchedule s = make_sd_schedule();
  for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
}

TEST_CASE("schedule rejects bad tables and out-of-range timesteps") {
  CHECK_THROWS_AS(NoiseSchedule({0.9, 0.95}), Error);
  CHECK_THROWS_AS(NoiseSchedule({1.2, 0.5}), Error);
  CHECK_THROWS_AS(NoiseSchedule({}), Error);
  const NoiseSchedule s = make_sd_schedule();
  CHECK(kind_of([&] { s.alpha_bar(1001); }) == ErrorKind::Schedule);
  CHECK(kind_of([&] { s.alpha_bar(-1); }) == ErrorKind::Schedule);
}

TEST_CASE("sampling grid") {
  const TimestepGrid g = make_timestep_grid(50, 1000);
  CHECK(g.steps() == 50);
  CHECK(g.first() == 981);
  CHECK(g.last() == 1);
  for (int t : {981, 781, 681, 581, 481, 181, 1}) CHECK(g.contains(t));
  for (std::size_t i = 1; i < g.steps(); ++i) CHECK(g.timesteps()[i] < g.timesteps()[i - 1]);

  CHECK(as_vector(make_timestep_grid(1, 1000)) == std::vector<int>{1});
  CHECK(as_vector(make_timestep_grid(4, 1000)) == std::vector<int>{751, 501, 251, 1});
  // 1000 / 3 floors to 333.
  CHECK(as_vector(make_timestep_grid(3, 1000)) == std::vector<int>{667, 334, 1});

  CHECK(kind_of([] { make_timestep_grid(0, 1000); }) == ErrorKind::Validation);
  CHECK(kind_of([] { make_timestep_grid(1001, 1000); }) == ErrorKind::Validation);
}

TEST_CASE("grid neighbours") {
  const TimestepGrid g = make_timestep_grid();
  CHECK(g.next_lower(981) == 961);
  CHECK(g.next_lower(1) == 0);
  CHECK(g.next_higher(0) == 1);
  CHECK(g.next_higher(961) == 981);
  CHECK(g.index_of(981) == 0);
  CHECK(g.index_of(1) == 49);
  CHECK(kind_of([&] { g.next_higher(981); }) == ErrorKind::Schedule);
  CHECK(kind_of([&] { g.index_of(980); }) == ErrorKind::Schedule);
}

TEST_CASE("guidance weights follow the decreasing trend") {
  const NoiseSchedule s = make_sd_schedule();
  const TimestepGrid g = make_timestep_grid();
  const GuidanceScale one(1.0);
  const double w981 = guidance_weight(s, g, 981, one);
  const double w681 = guidance_weight(s, g, 681, one);
  const double w181 = guidance_weight(s, g, 181, one);
  CHECK(std::abs(w981) / std::abs(w681) == doctest::Approx(5.43).epsilon(0.25));
  CHECK(std::abs(w681) / std::abs(w181) == doctest::Approx(5.0).epsilon(0.25));

  for (int t : g.timesteps()) {
    if (t == g.last()) continue;
    CHECK(guidance_weight(s, g, t, one) < 0.0);
  }
  // Non-increasing magnitude from 981 down to 181.
  for (int t = 981; t > 181; t -= 20) {
    CHECK(std::abs(guidance_weight(s, g, t - 20, one)) <= std::abs(guidance_weight(s, g, t, one)));
  }
}

TEST_CASE("guidance weight matches its closed form and is linear in gamma") {
  const NoiseSchedule s = make_sd_schedule();
  const TimestepGrid g = make_timestep_grid();
  for (int t : {981, 581, 21}) {
    const double a = s.alpha_bar(t), prev = s.alpha_bar(t - 20), first = s.alpha_bar(1);
    const double expected = -7.5 * std::sqrt(first) * (std::sqrt(1.0 / a - 1.0) - std::sqrt(1.0 / prev - 1.0));
    CHECK(guidance_weight(s, g, t, GuidanceScale(7.5)) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(guidance_weight(s, g, t, GuidanceScale(15.0)) == 2.0 * guidance_weight(s, g, t, GuidanceScale(7.5)));
  }
  CHECK(kind_of([&] { guidance_weight(s, g, 1, GuidanceScale(1.0)); }) == ErrorKind::Schedule);
}

TEST_CASE("guidance scale must be positive") {
  CHECK(kind_of([] { GuidanceScale(0.0); }) == ErrorKind::Validation);
  CHECK(kind_of([] { GuidanceScale(-1.0); }) == ErrorKind::Validation);
  CHECK(GuidanceScale(7.5).value() == 7.5);
}

TEST_CASE("perturb") {
  const NoiseSchedule s = make_sd_schedule();
  std::mt19937_64 rng(21);
  const auto x0 = freediff::testing::random_tensor({1, 4, 4}, rng);
  const auto zero = LatentTensor::zeros(x0.shape());
  CHECK(perturb(x0, 0, freediff::testing::random_tensor({1, 4, 4}, rng), s) == x0);
  CHECK(relative_error(perturb(x0, 500, zero, s), std::sqrt(s.alpha_bar(500)) * x0) < 1e-15);
  CHECK(kind_of([&] { perturb(x0, 10, LatentTensor::zeros({1, 4, 5}), s); }) == ErrorKind::Shape);
}

TEST_CASE("perturb output variance over unit-noise draws is 1 - alpha_bar") {
  const NoiseSchedule s = make_sd_schedule();
  std::mt19937_64 rng(22);
  const LatentTensor x0({1, 1, 1}, {0.7});
  for (int t : {21, 481, 981}) {
    double sum = 0.0, sum_sq = 0.0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
      const double v = perturb(x0, t, freediff::testing::random_tensor({1, 1, 1}, rng), s).values()[0];
      sum += v;
      sum_sq += v * v;
    }
    const double mean = sum / draws;
    const double var = sum_sq / draws - mean * mean;
    CHECK(var == doctest::Approx(1.0 - s.alpha_bar(t)).epsilon(0.05));
  }
}

TEST_CASE("snr gate") {
  const NoiseSchedule s = make_sd_schedule();
  const FreqGrid grid = radial_grid(32, 32);

  SUBCASE("near-clean timestep with positive spectrum passes everything") {
    FrequencyMap S{32, 32, std::vector<double>(32 * 32, 1.0)};
    CHECK(snr_gate(1, S, s).count() == 32 * 32);
  }
  SUBCASE("zero spectrum passes nothing") {
    FrequencyMap S{32, 32, std::vector<double>(32 * 32, 0.0)};
    CHECK(snr_gate(1, S, s).count() == 0);
  }
  SUBCASE("power-law gate radius follows the closed-form threshold and shrinks with t") {
    const PowerLawPrior prior{1.0, 1.1};
    const FrequencyMap S = prior_power_map(grid, prior);
    int previous = 1 << 20;
    const TimestepGrid steps = make_timestep_grid();
    for (int t : steps.timesteps() | std::views::reverse) {
      const FrequencyMask m = snr_gate(t, S, s);
      const double a = s.alpha_bar(t);
      // A (1 + r)^(-2 beta) a = 1 - a  =>  r* = (a / (1 - a))^(1 / (2 beta)) - 1.
      const double r_star = std::pow(a / (1.0 - a), 1.0 / (2.0 * prior.beta)) - 1.0;
      int widest = -1;
      for (std::size_t i = 0; i < m.values.size(); ++i) {
        const double r = grid.radii()[i];
        CHECK(static_cast<bool>(m.values[i]) == (r <= r_star + 1e-12));
        if (m.values[i]) widest = std::max(widest, static_cast<int>(r));
      }
      CHECK(widest <= previous);
      previous = widest;
    }
  }
  SUBCASE("gates are nested for radially non-increasing spectra") {
    const FrequencyMap S = prior_power_map(grid, PowerLawPrior{40.0, 0.8});
    const TimestepGrid steps = make_timestep_grid();
    const auto ts = steps.timesteps();
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
      const FrequencyMask hi = snr_gate(ts[i], S, s), lo = snr_gate(ts[i + 1], S, s);
      for (std::size_t k = 0; k < hi.values.size(); ++k) {
        if (hi.values[k]) CHECK(lo.values[k]);
      }
    }
  }
  SUBCASE("negative power is rejected") {
    FrequencyMap S{2, 2, {1.0, -1.0, 1.0, 1.0}};
    CHECK(kind_of([&] { snr_gate(5, S, s); }) == ErrorKind::DataIntegrity);
  }
}
