#include "doctest.h"
#include "freediff/config.hpp"
#include "freediff/error.hpp"
#include "freediff/remote_denoiser.hpp"

using namespace freediff;
using nlohmann::json;

namespace {

std::string field_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Validation);
    return e.field();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("session config defaults") {
  const SessionConfig c = session_config_from_json(json(nullptr));
  CHECK(c.schedule.gamma == 7.5);
  CHECK(c.schedule.steps == 50);
  CHECK(c.schedule.training_steps == 1000);
  CHECK(c.schedule.beta_start == 0.00085);
  CHECK(c.schedule.beta_end == 0.012);
  CHECK(c.fp_iters == 5);
  CHECK(c.backend == BackendKind::Analytic);
  CHECK(c.analytic.prior.beta == 1.1);
  CHECK(c.mask_quantile == 0.7);
  CHECK(c.amplify == 2.0);
  CHECK_FALSE(c.truncation.has_value());
  CHECK(c.effective_inversion_gamma() == 7.5);
  CHECK(session_config_from_json(json::object()).schedule.gamma == 7.5);
}

TEST_CASE("session config round trip") {
  SessionConfig c;
  c.schedule.gamma = 3.0;
  c.schedule.steps = 20;
  c.fp_iters = 2;
  c.invert_with_source = false;
  c.source_condition = Condition::pattern("cat");
  c.inversion_gamma = 1.0;
  c.analytic.patterns = {{"cat", BlobSpec{0.2, 0.3, 0.05, 2.0}}};
  c.radius_metric = RadiusMetric::Euclidean;
  c.amplify = 1.5;
  c.truncation = load_preset("sf2.0");
  const SessionConfig back = session_config_from_json(session_config_to_json(c));
  CHECK(session_config_to_json(back) == session_config_to_json(c));
  CHECK(back.inversion_condition() == Condition::null());
  CHECK(back.effective_inversion_gamma() == 1.0);
  CHECK(back.truncation == c.truncation);
}

TEST_CASE("session config validation names the field") {
  CHECK(field_of([] { session_config_from_json(json{{"schedule", {{"gamma", 0}}}}); }) == "gamma");
  CHECK(field_of([] { session_config_from_json(json{{"schedule", {{"gamma", -1.5}}}}); }) == "gamma");
  CHECK(field_of([] { session_config_from_json(json{{"schedule", {{"steps", 0}}}}); }) == "steps");
  CHECK(field_of([] { session_config_from_json(json{{"schedule", {{"steps", 2000}}}}); }) == "steps");
  CHECK(field_of([] { session_config_from_json(json{{"schedule", {{"steps", "ten"}}}}); }) == "steps");
  CHECK(field_of([] { session_config_from_json(json{{"schedule", {{"beta_end", 0.0001}}}}); }) == "beta_end");
  CHECK(field_of([] { session_config_from_json(json{{"sampler", {{"fp_iters", -1}}}}); }) == "fp_iters");
  CHECK(field_of([] { session_config_from_json(json{{"sampler", {{"inversion_condition", "x"}}}}); }) ==
        "inversion_condition");
  CHECK(field_of([] { session_config_from_json(json{{"backend", {{"kind", "gpu"}}}}); }) == "kind");
  CHECK(field_of([] { session_config_from_json(json{{"backend", {{"kind", "remote"}}}}); }) == "endpoint");
  CHECK(field_of([] {
          session_config_from_json(json{{"backend", {{"kind", "remote"}, {"endpoint", "ftp://host"}}}});
        }) == "endpoint");
  CHECK(field_of([] {
          session_config_from_json(json{{"backend", {{"prior", {{"amplitude", 0}}}}}});
        }) == "amplitude");
  CHECK(field_of([] { session_config_from_json(json{{"two_step", {{"amplify", 0}}}}); }) == "amplify");
  CHECK(field_of([] { session_config_from_json(json{{"two_step", {{"mask_quantile", 2}}}}); }) ==
        "mask_quantile");
  CHECK(field_of([] { session_config_from_json(json{{"truncation", {{"segments", json::array()}}}}); }) ==
        "segments");
  CHECK(field_of([] { session_config_from_json(json{{"bogus", 1}}); }) == "bogus");
  CHECK(field_of([] { session_config_from_json(json::array()); }) == "config");
}

TEST_CASE("conditions in JSON") {
  for (const Condition& c : {Condition::null(), Condition::pattern("hat"), Condition::text("a white hat")}) {
    CHECK(condition_from_json(condition_to_json(c)) == c);
  }
  CHECK(condition_from_json("pattern:blob") == Condition::pattern("blob"));
  CHECK(condition_from_json(json(nullptr)) == Condition::null());
  CHECK(field_of([] { condition_from_json(json{{"type", "pattern"}}); }) == "condition");
  CHECK(field_of([] { condition_from_json(json{{"type", "audio"}}); }) == "condition");
  CHECK(field_of([] { condition_from_json(3); }) == "condition");
}

TEST_CASE("preset catalog document") {
  const json doc = preset_catalog_json();
  const auto& p = doc["presets"];
  REQUIRE(p.size() == 6);
  CHECK(p[0]["category"] == "SF-0");
  CHECK(p[0]["two_step"] == true);
  CHECK(p[0]["tau"].is_null());
  int sf1 = 0, sf2 = 0;
  for (const auto& e : p) {
    sf1 += e["category"] == "SF-1";
    sf2 += e["category"] == "SF-2";
  }
  CHECK(sf1 == 3);
  CHECK(sf2 == 2);
  CHECK(p[1]["id"] == "sf1.0");
  CHECK(p[1]["tau"] == json::array({781, 581, 1}));
  CHECK(p[1]["r_h"] == json::array({32, 10, 10}));
  CHECK(p[5]["tau"] == json::array({781, 481, 1}));
  CHECK(p[5]["r_h"] == json::array({32, 32, 24}));
  CHECK(schedule_from_json(p[3]["schedule"]) == load_preset("sf1.2"));
  CHECK(preset_catalog_json() == doc);
}

TEST_CASE("make_denoiser") {
  const NoiseSchedule s = make_sd_schedule();
  SessionConfig c;
  auto analytic = make_denoiser(c, {2, 8, 8}, s);
  CHECK(dynamic_cast<GaussianFieldModel*>(analytic.get()) != nullptr);
  CHECK(analytic->latent_shape() == Shape{2, 8, 8});
  CHECK(analytic->epsilon(LatentTensor::zeros({2, 8, 8}), 500, Condition::pattern("blob")).max_abs() > 0.0);

  c.backend = BackendKind::Remote;
  c.remote.endpoint = "http://127.0.0.1:9";
  auto remote = make_denoiser(c, {2, 8, 8}, s);
  CHECK(dynamic_cast<RemoteDenoiser*>(remote.get()) != nullptr);

  const auto patterns = make_patterns(AnalyticBackendConfig{}, {1, 16, 16});
  REQUIRE(patterns.count("blob") == 1);
  CHECK(patterns.at("blob") == gaussian_blob({1, 16, 16}, 0.5, 0.5, 0.12, 1.0));
}
