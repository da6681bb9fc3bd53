#include "freediff/config.hpp"

#include <cmath>
#include <set>

#include "freediff/error.hpp"
#include "freediff/remote_denoiser.hpp"

namespace freediff {
namespace {

using nlohmann::json;

[[noreturn]] void invalid(const std::string& field, const std::string& message) {
  throw Error(ErrorKind::Validation, field + ": " + message, field);
}

void expect_object(const json& doc, const std::string& field, std::initializer_list<const char*> allowed) {
  if (!doc.is_object()) invalid(field, "expected a JSON object");
  std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& item : doc.items()) {
    if (!keys.contains(item.key())) invalid(item.key(), "unknown field");
  }
}

double get_number(const json& doc, const char* field, double fallback) {
  auto it = doc.find(field);
  if (it == doc.end()) return fallback;
  if (!it->is_number()) invalid(field, "expected a number");
  return it->get<double>();
}

int get_int(const json& doc, const char* field, int fallback) {
  auto it = doc.find(field);
  if (it == doc.end()) return fallback;
  if (!it->is_number_integer()) invalid(field, "expected an integer");
  return it->get<int>();
}

bool get_bool(const json& doc, const char* field, bool fallback) {
  auto it = doc.find(field);
  if (it == doc.end()) return fallback;
  if (!it->is_boolean()) invalid(field, "expected true or false");
  return it->get<bool>();
}

std::string get_string(const json& doc, const char* field, const std::string& fallback) {
  auto it = doc.find(field);
  if (it == doc.end()) return fallback;
  if (!it->is_string()) invalid(field, "expected a string");
  return it->get<std::string>();
}

// Tabulated radii are whole numbers; print them that way.
json integral_radii(const std::vector<double>& radii) {
  json out = json::array();
  for (double r : radii) {
    if (r == std::floor(r)) {
      out.push_back(static_cast<long>(r));
    } else {
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace

json schedule_to_json(const TruncationSchedule& s) {
  json segments = json::array();
  for (const auto& seg : s.segments) {
    segments.push_back({{"tau", seg.tau},
                        {"r_h", seg.r_high},
                        {"r_l", seg.r_low ? json(*seg.r_low) : json(nullptr)}});
  }
  return json{{"segments", segments},           {"kappa", s.kappa},
              {"eta", s.eta_fraction},          {"spatial_enabled", s.spatial_enabled},
              {"eta_enabled", s.eta_enabled},   {"horizon", s.horizon}};
}

TruncationSchedule schedule_from_json(const json& doc) {
  expect_object(doc, "truncation", {"segments", "kappa", "eta", "spatial_enabled", "eta_enabled", "horizon"});
  TruncationSchedule s;
  auto it = doc.find("segments");
  if (it == doc.end() || !it->is_array()) invalid("segments", "expected an array of segments");
  for (const auto& seg : *it) {
    if (!seg.is_object() || !seg.contains("tau") || !seg.contains("r_h")) {
      invalid("segments", "each segment needs tau and r_h");
    }
    if (!seg["tau"].is_number_integer() || !seg["r_h"].is_number()) {
      invalid("segments", "tau must be an integer and r_h a number");
    }
    Segment out{seg["tau"].get<int>(), seg["r_h"].get<double>(), std::nullopt};
    if (auto rl = seg.find("r_l"); rl != seg.end() && !rl->is_null()) {
      if (!rl->is_number()) invalid("segments", "r_l must be a number or null");
      out.r_low = rl->get<double>();
    }
    s.segments.push_back(out);
  }
  s.kappa = get_number(doc, "kappa", kDefaultKappa);
  s.eta_fraction = get_number(doc, "eta", kDefaultEta);
  s.spatial_enabled = get_bool(doc, "spatial_enabled", true);
  s.eta_enabled = get_bool(doc, "eta_enabled", true);
  s.horizon = get_int(doc, "horizon", 1000);
  s.validate();
  return s;
}

json preset_catalog_json() {
  json entries = json::array();
  entries.push_back({{"id", "sf0"},
                     {"category", "SF-0"},
                     {"two_step", true},
                     {"tau", nullptr},
                     {"r_h", nullptr}});
  for (const Preset& p : preset_catalog()) {
    entries.push_back({{"id", p.id()},
                       {"category", std::string(to_string(p.category))},
                       {"variant", p.variant},
                       {"two_step", false},
                       {"tau", p.taus},
                       {"r_h", integral_radii(p.radii)},
                       {"schedule", schedule_to_json(load_preset(p.category, p.variant))}});
  }
  return json{{"presets", entries}};
}

json condition_to_json(const Condition& c) {
  switch (c.kind()) {
    case Condition::Kind::Null: return json{{"type", "null"}};
    case Condition::Kind::Pattern: return json{{"type", "pattern"}, {"id", c.value()}};
    case Condition::Kind::Text: return json{{"type", "text"}, {"text", c.value()}};
  }
  return json{{"type", "null"}};
}

Condition condition_from_json(const json& doc) {
  if (doc.is_null()) return Condition::null();
  if (doc.is_string()) return Condition::parse(doc.get<std::string>());
  if (!doc.is_object()) invalid("condition", "expected an object or string");
  const std::string type = get_string(doc, "type", "null");
  if (type == "null") return Condition::null();
  if (type == "pattern") {
    const std::string id = get_string(doc, "id", "");
    if (id.empty()) invalid("condition", "pattern condition needs an id");
    return Condition::pattern(id);
  }
  if (type == "text") return Condition::text(get_string(doc, "text", ""));
  invalid("condition", "unknown condition type '" + type + "'");
}

void SessionConfig::validate() const {
  if (!(schedule.gamma > 0.0) || !std::isfinite(schedule.gamma)) invalid("gamma", "must be > 0");
  if (inversion_gamma && !(*inversion_gamma > 0.0)) invalid("inversion_gamma", "must be > 0");
  if (schedule.training_steps < 2) invalid("T", "must be >= 2");
  if (schedule.steps < 1 || schedule.steps > schedule.training_steps) invalid("steps", "must lie in [1, T]");
  if (!(schedule.beta_start > 0.0 && schedule.beta_start < 1.0)) invalid("beta_start", "must lie in (0, 1)");
  if (!(schedule.beta_end > schedule.beta_start && schedule.beta_end < 1.0)) {
    invalid("beta_end", "must lie in (beta_start, 1)");
  }
  if (fp_iters < 0) invalid("fp_iters", "must be >= 0");
  if (!(analytic.prior.amplitude > 0.0)) invalid("amplitude", "must be > 0");
  if (!(analytic.prior.beta >= 0.0)) invalid("beta", "must be >= 0");
  for (const auto& [id, blob] : analytic.patterns) {
    if (!(blob.sigma > 0.0)) invalid("patterns", "sigma of '" + id + "' must be > 0");
  }
  if (backend == BackendKind::Remote) {
    if (remote.endpoint.empty()) invalid("endpoint", "remote backend needs an endpoint");
    if (!remote.endpoint.starts_with("http://")) invalid("endpoint", "expected an http:// URL");
    if (!(remote.timeout_seconds > 0.0)) invalid("timeout", "must be > 0");
  }
  if (!(mask_quantile >= 0.0 && mask_quantile <= 1.0)) invalid("mask_quantile", "must lie in [0, 1]");
  if (!(amplify > 0.0)) invalid("amplify", "must be > 0");
  if (truncation) truncation->validate();
}

SessionConfig session_config_from_json(const json& doc) {
  SessionConfig cfg;
  if (doc.is_null()) return cfg;
  expect_object(doc, "config", {"schedule", "sampler", "source_condition", "backend", "radius_metric",
                                "two_step", "truncation"});
  if (auto it = doc.find("schedule"); it != doc.end()) {
    expect_object(*it, "schedule", {"beta_start", "beta_end", "T", "steps", "gamma"});
    cfg.schedule.beta_start = get_number(*it, "beta_start", cfg.schedule.beta_start);
    cfg.schedule.beta_end = get_number(*it, "beta_end", cfg.schedule.beta_end);
    cfg.schedule.training_steps = get_int(*it, "T", cfg.schedule.training_steps);
    cfg.schedule.steps = get_int(*it, "steps", cfg.schedule.steps);
    cfg.schedule.gamma = get_number(*it, "gamma", cfg.schedule.gamma);
  }
  if (auto it = doc.find("sampler"); it != doc.end()) {
    expect_object(*it, "sampler", {"fp_iters", "inversion_condition", "inversion_gamma"});
    cfg.fp_iters = get_int(*it, "fp_iters", cfg.fp_iters);
    const std::string mode = get_string(*it, "inversion_condition", "source");
    if (mode != "source" && mode != "null") invalid("inversion_condition", "expected 'source' or 'null'");
    cfg.invert_with_source = mode == "source";
    if (auto g = it->find("inversion_gamma"); g != it->end() && !g->is_null()) {
      if (!g->is_number()) invalid("inversion_gamma", "expected a number");
      cfg.inversion_gamma = g->get<double>();
    }
  }
  if (auto it = doc.find("source_condition"); it != doc.end()) cfg.source_condition = condition_from_json(*it);
  if (auto it = doc.find("backend"); it != doc.end()) {
    expect_object(*it, "backend", {"kind", "prior", "patterns", "endpoint", "timeout"});
    const std::string kind = get_string(*it, "kind", "analytic");
    if (kind == "analytic") {
      cfg.backend = BackendKind::Analytic;
    } else if (kind == "remote") {
      cfg.backend = BackendKind::Remote;
    } else {
      invalid("kind", "expected 'analytic' or 'remote'");
    }
    if (auto p = it->find("prior"); p != it->end()) {
      expect_object(*p, "prior", {"amplitude", "beta"});
      cfg.analytic.prior.amplitude = get_number(*p, "amplitude", cfg.analytic.prior.amplitude);
      cfg.analytic.prior.beta = get_number(*p, "beta", cfg.analytic.prior.beta);
    }
    if (auto p = it->find("patterns"); p != it->end()) {
      if (!p->is_object()) invalid("patterns", "expected an object of blob specs");
      cfg.analytic.patterns.clear();
      for (const auto& item : p->items()) {
        expect_object(item.value(), "patterns", {"center_y", "center_x", "sigma", "amplitude"});
        BlobSpec b;
        b.center_y = get_number(item.value(), "center_y", b.center_y);
        b.center_x = get_number(item.value(), "center_x", b.center_x);
        b.sigma = get_number(item.value(), "sigma", b.sigma);
        b.amplitude = get_number(item.value(), "amplitude", b.amplitude);
        cfg.analytic.patterns[item.key()] = b;
      }
    }
    cfg.remote.endpoint = get_string(*it, "endpoint", cfg.remote.endpoint);
    cfg.remote.timeout_seconds = get_number(*it, "timeout", cfg.remote.timeout_seconds);
  }
  if (auto it = doc.find("radius_metric"); it != doc.end()) {
    if (!it->is_string()) invalid("radius_metric", "expected a string");
    cfg.radius_metric = parse_radius_metric(it->get<std::string>());
  }
  if (auto it = doc.find("two_step"); it != doc.end()) {
    expect_object(*it, "two_step", {"mask_quantile", "amplify"});
    cfg.mask_quantile = get_number(*it, "mask_quantile", cfg.mask_quantile);
    cfg.amplify = get_number(*it, "amplify", cfg.amplify);
  }
  if (auto it = doc.find("truncation"); it != doc.end() && !it->is_null()) {
    cfg.truncation = schedule_from_json(*it);
  }
  cfg.validate();
  return cfg;
}

json session_config_to_json(const SessionConfig& c) {
  json patterns = json::object();
  for (const auto& [id, b] : c.analytic.patterns) {
    patterns[id] = {{"center_y", b.center_y}, {"center_x", b.center_x}, {"sigma", b.sigma}, {"amplitude", b.amplitude}};
  }
  json doc{
      {"schedule",
       {{"beta_start", c.schedule.beta_start},
        {"beta_end", c.schedule.beta_end},
        {"T", c.schedule.training_steps},
        {"steps", c.schedule.steps},
        {"gamma", c.schedule.gamma}}},
      {"sampler",
       {{"fp_iters", c.fp_iters},
        {"inversion_condition", c.invert_with_source ? "source" : "null"},
        {"inversion_gamma", c.inversion_gamma ? json(*c.inversion_gamma) : json(nullptr)}}},
      {"source_condition", condition_to_json(c.source_condition)},
      {"backend",
       {{"kind", c.backend == BackendKind::Analytic ? "analytic" : "remote"},
        {"prior", {{"amplitude", c.analytic.prior.amplitude}, {"beta", c.analytic.prior.beta}}},
        {"patterns", patterns},
        {"endpoint", c.remote.endpoint},
        {"timeout", c.remote.timeout_seconds}}},
      {"radius_metric", std::string(to_string(c.radius_metric))},
      {"two_step", {{"mask_quantile", c.mask_quantile}, {"amplify", c.amplify}}},
      {"truncation", c.truncation ? schedule_to_json(*c.truncation) : json(nullptr)},
  };
  return doc;
}

std::map<std::string, LatentTensor> make_patterns(const AnalyticBackendConfig& config, Shape shape) {
  std::map<std::string, LatentTensor> out;
  for (const auto& [id, b] : config.patterns) {
    out.emplace(id, gaussian_blob(shape, b.center_y, b.center_x, b.sigma, b.amplitude));
  }
  return out;
}

std::unique_ptr<Denoiser> make_denoiser(const SessionConfig& config, Shape shape,
                                        const NoiseSchedule& schedule) {
  if (config.backend == BackendKind::Remote) {
    return std::make_unique<RemoteDenoiser>(
        RemoteDenoiserConfig{config.remote.endpoint, config.remote.timeout_seconds, shape});
  }
  return std::make_unique<GaussianFieldModel>(GaussianFieldModel::power_law(
      shape, config.analytic.prior, schedule, make_patterns(config.analytic, shape),
      config.radius_metric));
}

}  // namespace freediff
