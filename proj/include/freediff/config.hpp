#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>

#include "freediff/denoiser.hpp"
#include "freediff/freqtrunc.hpp"
#include "freediff/schedule.hpp"
#include "json.hpp"

namespace freediff {

// TruncationSchedule <-> {"segments":[{"tau":781,"r_h":32,"r_l":null},...],
//   "kappa":0.6,"eta":0.8,"spatial_enabled":true,"eta_enabled":true}
nlohmann::json schedule_to_json(const TruncationSchedule& schedule);
/// Parses and validates; Validation errors name the field.
TruncationSchedule schedule_from_json(const nlohmann::json& doc);

/// Five tabulated presets plus the SF-0 entry flagged two_step = true.
nlohmann::json preset_catalog_json();

struct BlobSpec {
  double center_y = 0.5;
  double center_x = 0.5;
  double sigma = 0.12;
  double amplitude = 1.0;
};

struct AnalyticBackendConfig {
  PowerLawPrior prior;
  std::map<std::string, BlobSpec> patterns{{"blob", BlobSpec{}}};
};

enum class BackendKind { Analytic, Remote };

struct RemoteBackendConfig {
  std::string endpoint;
  double timeout_seconds = 60.0;
};

/// Everything a session (or a CLI run) needs besides the latent itself.
struct SessionConfig {
  ScheduleParams schedule;
  int fp_iters = 5;
  /// Inversion runs with the source condition (true) or the null one.
  bool invert_with_source = true;
  Condition source_condition = Condition::null();
  /// Defaults to schedule.gamma.
  std::optional<double> inversion_gamma;
  BackendKind backend = BackendKind::Analytic;
  AnalyticBackendConfig analytic;
  RemoteBackendConfig remote;
  RadiusMetric radius_metric = RadiusMetric::Chebyshev;
  double mask_quantile = 0.7;
  double amplify = 2.0;
  std::optional<TruncationSchedule> truncation;

  void validate() const;
  double effective_inversion_gamma() const { return inversion_gamma.value_or(schedule.gamma); }
  Condition inversion_condition() const {
    return invert_with_source ? source_condition : Condition::null();
  }
};

/// Missing members keep their defaults; unknown members are rejected.
SessionConfig session_config_from_json(const nlohmann::json& doc);
nlohmann::json session_config_to_json(const SessionConfig& config);

nlohmann::json condition_to_json(const Condition& c);
/// {"type":"null"} | {"type":"pattern","id":..} | {"type":"text","text":..}
/// or the "pattern:<id>" string shorthand.
Condition condition_from_json(const nlohmann::json& doc);

std::map<std::string, LatentTensor> make_patterns(const AnalyticBackendConfig& config, Shape shape);

/// Builds the configured backend for latents of `shape`.
std::unique_ptr<Denoiser> make_denoiser(const SessionConfig& config, Shape shape,
                                        const NoiseSchedule& schedule);

}  // namespace freediff
