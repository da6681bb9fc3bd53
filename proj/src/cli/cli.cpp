#include "freediff/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "freediff/analysis.hpp"
#include "freediff/config.hpp"
#include "freediff/error.hpp"
#include "freediff/latent_io.hpp"
#include "freediff/sampler.hpp"
#include "freediff/twostep.hpp"
#include "json.hpp"

namespace freediff {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonOptions {
  std::string config_path;
  std::string backend;
  std::string endpoint;
  double gamma = 7.5;
  int steps = 50;
  int fp_iters = 5;
  bool json = false;
  CLI::Option* gamma_opt = nullptr;
  CLI::Option* steps_opt = nullptr;
  CLI::Option* fp_opt = nullptr;
};

void add_common(CLI::App& sub, CommonOptions& o) {
  sub.add_option("--config", o.config_path, "Session config JSON file")->check(CLI::ExistingFile);
  sub.add_option("--backend", o.backend, "Denoiser backend")->check(CLI::IsMember({"analytic", "remote"}));
  sub.add_option("--endpoint", o.endpoint, "Remote denoiser URL (else FREEDIFF_REMOTE_ENDPOINT)");
  o.gamma_opt = sub.add_option("--gamma", o.gamma, "Guidance scale")->capture_default_str();
  o.steps_opt = sub.add_option("--steps", o.steps, "Sampling steps")->capture_default_str();
  o.fp_opt = sub.add_option("--fp-iters,--n", o.fp_iters, "Fixed-point refinements per inversion step")
                 ->capture_default_str();
  sub.add_flag("--json", o.json, "Print one JSON document");
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::NotFound, "cannot open " + path, "path");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Validation, path + " is not valid JSON: " + e.what(), "path");
  }
}

SessionConfig load_config(const CommonOptions& o) {
  SessionConfig cfg;
  if (!o.config_path.empty()) cfg = session_config_from_json(read_json_file(o.config_path));
  if (o.gamma_opt->count()) cfg.schedule.gamma = o.gamma;
  if (o.steps_opt->count()) cfg.schedule.steps = o.steps;
  if (o.fp_opt->count()) cfg.fp_iters = o.fp_iters;
  if (!o.backend.empty()) cfg.backend = o.backend == "remote" ? BackendKind::Remote : BackendKind::Analytic;
  if (!o.endpoint.empty()) {
    cfg.remote.endpoint = o.endpoint;
  } else if (cfg.remote.endpoint.empty()) {
    if (const char* env = std::getenv("FREEDIFF_REMOTE_ENDPOINT")) cfg.remote.endpoint = env;
  }
  cfg.validate();
  return cfg;
}

struct Runtime {
  Runtime(const SessionConfig& cfg, Shape shape)
      : schedule(make_schedule(cfg.schedule)),
        grid(make_timestep_grid(cfg.schedule.steps, cfg.schedule.training_steps)),
        freq_grid(shape.height, shape.width, cfg.radius_metric),
        model(make_denoiser(cfg, shape, schedule)) {}

  NoiseSchedule schedule;
  TimestepGrid grid;
  FreqGrid freq_grid;
  std::unique_ptr<Denoiser> model;
};

Shape parse_shape(const std::string& text) {
  std::size_t c = 0, h = 0, w = 0;
  char x1 = 0, x2 = 0;
  std::istringstream in(text);
  if (!(in >> c >> x1 >> h >> x2 >> w) || x1 != 'x' || x2 != 'x' || c == 0 || h == 0 || w == 0) {
    throw Error(ErrorKind::Validation, "shape must look like 4x32x32", "shape");
  }
  return {c, h, w};
}

LatentTensor load_inverted(const std::string& path) {
  if (!fs::exists(path)) {
    throw Error(ErrorKind::Precondition, "inverted latent missing: " + path + " (run `invert` first)",
                "inverted");
  }
  return read_latent_file(path);
}

std::optional<TruncationSchedule> resolve_schedule(const std::string& preset, const std::string& file) {
  if (!preset.empty()) {
    if (preset == "sf0" || preset == "sf0.0") {
      throw Error(ErrorKind::Unsupported, "SF-0 has no preset: two-step process required", "preset");
    }
    return load_preset(preset);
  }
  if (!file.empty()) return schedule_from_json(read_json_file(file));
  return std::nullopt;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::NotFound, "cannot write " + path.string(), "path");
  out << text;
}

void record_steps(const std::string& dir, const GenerationResult& result, const NoiseSchedule& schedule) {
  if (dir.empty()) return;
  fs::create_directories(dir);
  json steps = json::array();
  for (const StepRecord& rec : result.steps) {
    const std::string t = std::to_string(rec.t);
    write_latent_file(rec.guidance, fs::path(dir) / ("g_t" + t + ".fdlt"));
    write_latent_file(rec.refined_guidance, fs::path(dir) / ("gstar_t" + t + ".fdlt"));
    write_latent_file(rec.x0_prediction, fs::path(dir) / ("x0pred_t" + t + ".fdlt"));
    steps.push_back({{"index", rec.index},
                     {"t", rec.t},
                     {"guidance_norm", rec.guidance.norm()},
                     {"refined_norm", rec.refined_guidance.norm()},
                     {"snr_box_radius", snr_box(rec.t, power_spectrum(rec.x0_prediction), schedule, false)},
                     {"artifacts",
                      {{"guidance", "g_t" + t + ".fdlt"},
                       {"refined_guidance", "gstar_t" + t + ".fdlt"},
                       {"x0_prediction", "x0pred_t" + t + ".fdlt"}}}});
  }
  write_text(fs::path(dir) / "steps.json", steps.dump(2));
}

void emit(std::ostream& out, bool as_json, const json& report) {
  if (as_json) {
    out << report.dump(2) << "\n";
    return;
  }
  for (const auto& item : report.items()) {
    out << item.key() << ": " << (item.value().is_string() ? item.value().get<std::string>() : item.value().dump())
        << "\n";
  }
}

void print_presets(std::ostream& out, const json& catalog) {
  for (const auto& p : catalog["presets"]) {
    out << p["id"].get<std::string>() << "\t" << p["category"].get<std::string>() << "\t";
    if (p["two_step"].get<bool>()) {
      out << "two-step process required\n";
      continue;
    }
    out << "tau=" << p["tau"].dump() << "\tr_h=" << p["r_h"].dump() << "\n";
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Frequency-truncated guidance editing of diffusion latents", "freediff"};
  app.require_subcommand(1);

  // invert
  CommonOptions invert_common;
  std::string invert_input, invert_output = "xT.fdlt", invert_condition, invert_record;
  auto* invert_cmd = app.add_subcommand("invert", "Fixed-point DDIM inversion of a clean latent");
  add_common(*invert_cmd, invert_common);
  invert_cmd->add_option("--input,-i", invert_input, "Clean latent (.fdlt)")->required();
  invert_cmd->add_option("--output,-o", invert_output, "Inverted latent")->capture_default_str();
  invert_cmd->add_option("--condition", invert_condition, "Source condition (null | pattern:<id> | text:<prompt>)");
  invert_cmd->add_option("--record-dir", invert_record, "Write trajectory and residuals here");

  // edit
  CommonOptions edit_common;
  std::string edit_inverted = "xT.fdlt", edit_output = "x0_edit.fdlt", edit_condition = "pattern:blob";
  std::string edit_preset, edit_schedule, edit_record;
  auto* edit_cmd = app.add_subcommand("edit", "Regenerate from an inverted latent with refined guidance");
  add_common(*edit_cmd, edit_common);
  edit_cmd->add_option("--inverted", edit_inverted, "Inverted latent from `invert`")->capture_default_str();
  edit_cmd->add_option("--output,-o", edit_output, "Edited clean latent")->capture_default_str();
  edit_cmd->add_option("--condition", edit_condition, "Edit condition")->capture_default_str();
  auto* edit_preset_opt = edit_cmd->add_option("--preset", edit_preset, "Preset id, e.g. sf1.0");
  auto* edit_schedule_opt = edit_cmd->add_option("--schedule", edit_schedule, "Truncation schedule JSON file");
  edit_preset_opt->excludes(edit_schedule_opt);
  edit_cmd->add_option("--record-dir", edit_record, "Write per-step guidance and predictions here");

  // two-step
  CommonOptions two_common;
  std::string two_inverted = "xT.fdlt", two_output = "x0_twostep.fdlt", two_mask = "mask.fdlt";
  std::string two_descriptor = "pattern:blob", two_condition = "pattern:blob", two_preset, two_schedule, two_record;
  bool two_invert_mask = false, two_compose = false;
  double two_quantile = kDefaultMaskQuantile, two_amplify = kDefaultAmplify;
  auto* two_cmd = app.add_subcommand("two-step", "Mask from truncated guidance, then a mask-gated edit");
  add_common(*two_cmd, two_common);
  two_cmd->add_option("--inverted", two_inverted, "Inverted latent from `invert`")->capture_default_str();
  two_cmd->add_option("--output,-o", two_output, "Edited clean latent")->capture_default_str();
  two_cmd->add_option("--mask-output", two_mask, "Coarse mask (1 x H x W)")->capture_default_str();
  two_cmd->add_option("--descriptor", two_descriptor, "Pass-1 condition naming the region")->capture_default_str();
  two_cmd->add_option("--condition", two_condition, "Pass-2 edit condition")->capture_default_str();
  auto* two_preset_opt = two_cmd->add_option("--preset", two_preset, "Pass-1 preset (default sf1.0)");
  auto* two_schedule_opt = two_cmd->add_option("--schedule", two_schedule, "Pass-1 schedule JSON file");
  two_preset_opt->excludes(two_schedule_opt);
  two_cmd->add_flag("--invert-mask", two_invert_mask, "Edit everything outside the mask");
  two_cmd->add_flag("--compose", two_compose, "Also truncate pass-2 guidance");
  two_cmd->add_option("--quantile", two_quantile, "Mask binarization quantile")->capture_default_str();
  two_cmd->add_option("--amplify", two_amplify, "Pass-2 guidance gain")->capture_default_str();
  two_cmd->add_option("--record-dir", two_record, "Write pass-2 per-step records here");

  // recon-check
  CommonOptions recon_common;
  std::string recon_input, recon_shape = "4x32x32", recon_condition = "pattern:blob";
  std::uint64_t recon_seed = 0;
  double recon_tol = 1e-3;
  auto* recon_cmd = app.add_subcommand("recon-check", "Invert then regenerate and report the relative error");
  add_common(*recon_cmd, recon_common);
  recon_cmd->add_option("--input,-i", recon_input, "Clean latent (default: a prior sample)");
  recon_cmd->add_option("--shape", recon_shape, "Shape of the sampled latent")->capture_default_str();
  recon_cmd->add_option("--seed", recon_seed, "Seed of the sampled latent")->capture_default_str();
  recon_cmd->add_option("--condition", recon_condition, "Condition for both directions")->capture_default_str();
  recon_cmd->add_option("--tolerance", recon_tol, "Maximum relative error")->capture_default_str();

  // analyze
  CommonOptions analyze_common;
  std::string analyze_input, analyze_other, analyze_fdiff_output;
  auto* analyze_cmd = app.add_subcommand("analyze", "Power spectrum, power-law fit, SNR box and F_diff");
  add_common(*analyze_cmd, analyze_common);
  analyze_cmd->add_option("--input,-i", analyze_input, "Latent to analyze")->required();
  analyze_cmd->add_option("--other", analyze_other, "Second latent for F_diff");
  analyze_cmd->add_option("--fdiff-output", analyze_fdiff_output, "Write the F_diff map (1 x H x W .fdlt)");

  // presets
  bool presets_json = false;
  auto* presets_cmd = app.add_subcommand("presets", "List the truncation presets");
  presets_cmd->add_flag("--json", presets_json, "Print one JSON document");

  std::vector<std::string> argv_storage{"freediff"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  }

  bool as_json = false;
  try {
    if (presets_cmd->parsed()) {
      as_json = presets_json;
      const json catalog = preset_catalog_json();
      if (as_json) {
        out << catalog.dump(2) << "\n";
      } else {
        print_presets(out, catalog);
      }
      return 0;
    }

    if (invert_cmd->parsed()) {
      as_json = invert_common.json;
      SessionConfig cfg = load_config(invert_common);
      if (!invert_condition.empty()) cfg.source_condition = Condition::parse(invert_condition);
      const LatentTensor x0 = read_latent_file(invert_input);
      Runtime rt(cfg, x0.shape());
      Trajectory traj = invert(x0, *rt.model, cfg.inversion_condition(), GuidanceScale(cfg.effective_inversion_gamma()),
                               FixedPointSettings{cfg.fp_iters}, rt.schedule, rt.grid);
      write_latent_file(traj.final_latent(), invert_output);
      double worst = 0.0;
      json residuals = json::array();
      for (const auto& r : traj.residuals) {
        if (!r.empty()) worst = std::max(worst, r.back());
        residuals.push_back(r);
      }
      if (!invert_record.empty()) {
        fs::create_directories(invert_record);
        for (const auto& p : traj.points) {
          write_latent_file(p.x, fs::path(invert_record) / ("x_t" + std::to_string(p.t) + ".fdlt"));
        }
        write_text(fs::path(invert_record) / "inversion.json", json{{"residuals", residuals}}.dump(2));
      }
      emit(out, as_json,
           {{"output", invert_output},
            {"t_final", traj.points.back().t},
            {"steps", rt.grid.steps()},
            {"fp_iters", cfg.fp_iters},
            {"condition", cfg.inversion_condition().str()},
            {"max_final_residual", worst}});
      return 0;
    }

    if (edit_cmd->parsed()) {
      as_json = edit_common.json;
      SessionConfig cfg = load_config(edit_common);
      const LatentTensor x_T = load_inverted(edit_inverted);
      std::optional<TruncationSchedule> plan = resolve_schedule(edit_preset, edit_schedule);
      if (!plan && edit_preset.empty() && edit_schedule.empty()) plan = cfg.truncation;
      Runtime rt(cfg, x_T.shape());
      GuidanceRefiner refiner = identity_refiner();
      if (plan) {
        refiner = [&](const LatentTensor& g, int t) { return refine_guidance(g, t, *plan, rt.freq_grid); };
      }
      GenerateOptions opts;
      opts.record = !edit_record.empty();
      GenerationResult result = generate(x_T, *rt.model, Condition::parse(edit_condition),
                                         GuidanceScale(cfg.schedule.gamma), refiner, rt.schedule, rt.grid, opts);
      write_latent_file(result.x0, edit_output);
      record_steps(edit_record, result, rt.schedule);
      emit(out, as_json,
           {{"output", edit_output},
            {"condition", edit_condition},
            {"schedule", plan ? schedule_to_json(*plan) : json(nullptr)},
            {"preset", edit_preset.empty() ? json(nullptr) : json(edit_preset)},
            {"steps", rt.grid.steps()},
            {"final_norm", result.x0.norm()}});
      return 0;
    }

    if (two_cmd->parsed()) {
      as_json = two_common.json;
      SessionConfig cfg = load_config(two_common);
      const LatentTensor x_T = load_inverted(two_inverted);
      Runtime rt(cfg, x_T.shape());
      TwoStepOptions opts;
      opts.descriptor_schedule = resolve_schedule(two_preset, two_schedule).value_or(load_preset("sf1.0"));
      opts.edit_schedule = opts.descriptor_schedule;
      opts.quantile = two_quantile;
      opts.amplify = two_amplify;
      opts.invert = two_invert_mask;
      opts.compose_with_truncation = two_compose;
      GenerateOptions pass2;
      pass2.record = !two_record.empty();
      TwoStepResult result = run_two_step(x_T, *rt.model, Condition::parse(two_descriptor),
                                          Condition::parse(two_condition), GuidanceScale(cfg.schedule.gamma), opts,
                                          rt.schedule, rt.grid, rt.freq_grid, {}, pass2);
      write_latent_file(result.edit_pass.x0, two_output);
      write_latent_file(result.mask.to_tensor(), two_mask);
      record_steps(two_record, result.edit_pass, rt.schedule);
      double covered = 0.0;
      for (double v : result.mask.values()) covered += v;
      emit(out, as_json,
           {{"output", two_output},
            {"mask_output", two_mask},
            {"mask_fraction", covered / static_cast<double>(result.mask.values().size())},
            {"descriptor", two_descriptor},
            {"condition", two_condition},
            {"inverted_mask", two_invert_mask}});
      return 0;
    }

    if (recon_cmd->parsed()) {
      as_json = recon_common.json;
      SessionConfig cfg = load_config(recon_common);
      const Condition cond = Condition::parse(recon_condition);
      std::optional<LatentTensor> x0;
      if (!recon_input.empty()) x0 = read_latent_file(recon_input);
      const Shape shape = x0 ? x0->shape() : parse_shape(recon_shape);
      Runtime rt(cfg, shape);
      if (!x0) {
        auto* analytic = dynamic_cast<const GaussianFieldModel*>(rt.model.get());
        if (!analytic) throw Error(ErrorKind::Validation, "remote backend needs --input", "input");
        std::mt19937_64 rng(recon_seed);
        x0 = analytic->sample(rng, cond);
      }
      const GuidanceScale gamma(cfg.schedule.gamma);
      Trajectory traj = invert(*x0, *rt.model, cond, gamma, FixedPointSettings{cfg.fp_iters}, rt.schedule, rt.grid);
      GenerationResult regen =
          generate(traj.final_latent(), *rt.model, cond, gamma, identity_refiner(), rt.schedule, rt.grid);
      const double error = relative_error(regen.x0, *x0);
      const bool ok = error < recon_tol;
      emit(out, as_json,
           {{"relative_error", error},
            {"tolerance", recon_tol},
            {"ok", ok},
            {"fp_iters", cfg.fp_iters},
            {"gamma", cfg.schedule.gamma},
            {"steps", rt.grid.steps()},
            {"shape", shape.str()}});
      if (!ok) {
        err << "reconstruction error " << error << " exceeds tolerance " << recon_tol << "\n";
        return 1;
      }
      return 0;
    }

    if (analyze_cmd->parsed()) {
      as_json = analyze_common.json;
      SessionConfig cfg = load_config(analyze_common);
      const LatentTensor x = read_latent_file(analyze_input);
      const NoiseSchedule schedule = make_schedule(cfg.schedule);
      const TimestepGrid grid = make_timestep_grid(cfg.schedule.steps, cfg.schedule.training_steps);
      const PowerSpectrum p = power_spectrum(x);
      FrequencyMap scaled = p.power;
      for (double& v : scaled.values) v /= p.noise_reference;
      json boxes = json::array();
      for (int t : grid.timesteps()) boxes.push_back({{"t", t}, {"radius", snr_box(t, p, schedule, false)}});
      json report{{"shape", x.shape().str()}, {"radial_profile", radial_profile(scaled)}, {"snr_box", boxes}};
      try {
        const PowerLawFit fit = fit_power_law(p);
        report["power_law"] = {{"beta", fit.beta}, {"slope", fit.slope}, {"convention", "amplitude"}};
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DataIntegrity) throw;
        report["power_law"] = nullptr;
      }
      if (!analyze_other.empty()) {
        const FrequencyMap d = f_diff(x, read_latent_file(analyze_other));
        double total = 0.0;
        for (double v : d.values) total += v;
        report["f_diff"] = {{"total", total}, {"radial_profile", radial_profile(d)}};
        if (!analyze_fdiff_output.empty()) {
          write_latent_file(LatentTensor({1, d.height, d.width}, d.values), analyze_fdiff_output);
          report["f_diff"]["output"] = analyze_fdiff_output;
        }
      } else if (!analyze_fdiff_output.empty()) {
        throw Error(ErrorKind::Validation, "--fdiff-output needs --other", "other");
      }
      emit(out, as_json, report);
      return 0;
    }
  } catch (const Error& e) {
    if (as_json) {
      out << json{{"error", e.what()}, {"kind", std::string(to_string(e.kind()))}, {"field", e.field()}}.dump(2)
          << "\n";
    }
    err << "error";
    if (!e.field().empty()) err << " [" << e.field() << "]";
    err << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    if (as_json) out << json{{"error", e.what()}, {"kind", "internal"}}.dump(2) << "\n";
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << "usage error: no subcommand given\n";
  return 2;
}

}  // namespace freediff
