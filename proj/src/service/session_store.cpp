#include "freediff/service/session_store.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>
#include <sstream>

#include "freediff/analysis.hpp"
#include "freediff/error.hpp"
#include "freediff/latent_io.hpp"
#include "freediff/sampler.hpp"
#include "freediff/twostep.hpp"

namespace freediff::service {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kSourceArtifact = "source.fdlt";
constexpr const char* kInvertedArtifact = "xT.fdlt";

std::string_view job_kind_name(JobKind kind) { return kind == JobKind::Invert ? "invert" : "edit"; }

std::string_view job_state_name(JobState state) {
  switch (state) {
    case JobState::Pending: return "pending";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
  }
  return "pending";
}

JobState parse_job_state(std::string_view s) {
  if (s == "pending") return JobState::Pending;
  if (s == "running") return JobState::Running;
  if (s == "done") return JobState::Done;
  if (s == "failed") return JobState::Failed;
  throw Error(ErrorKind::DataIntegrity, "unknown job state '" + std::string(s) + "'", "state");
}

std::string new_session_id() {
  static std::mutex m;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(m);
  std::ostringstream out;
  out << std::hex;
  for (int i = 0; i < 2; ++i) {
    std::uint64_t v = rng();
    for (int k = 0; k < 8; ++k) {
      out << ((v >> (k * 4)) & 0xf);
    }
  }
  return out.str();
}

bool valid_session_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](char ch) {
           return (ch >= '0' && ch <= '9') || (ch >= 'a' && ch <= 'f');
         });
}

bool valid_artifact_name(const std::string& name) {
  if (name.empty() || name.size() > 128 || name.front() == '.') return false;
  return std::all_of(name.begin(), name.end(), [](char ch) {
    return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.';
  });
}

void write_atomic(const fs::path& path, const std::string& bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::NotFound, "cannot write " + tmp.string(), "path");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorKind::DataIntegrity, "short write to " + tmp.string(), "path");
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::NotFound, "cannot open " + path.string(), "path");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

json shape_json(const std::optional<Shape>& s) {
  if (!s) return nullptr;
  return json::array({s->channels, s->height, s->width});
}

double fraction_nonzero(const LatentTensor& x) {
  if (x.empty()) return 0.0;
  auto v = x.values();
  return static_cast<double>(std::count_if(v.begin(), v.end(), [](double a) { return a != 0.0; })) /
         static_cast<double>(v.size());
}

}  // namespace

std::string_view to_string(SessionState state) noexcept {
  switch (state) {
    case SessionState::Created: return "created";
    case SessionState::Inverted: return "inverted";
    case SessionState::Editing: return "editing";
    case SessionState::Done: return "done";
    case SessionState::Failed: return "failed";
  }
  return "created";
}

SessionState parse_session_state(std::string_view s) {
  if (s == "created") return SessionState::Created;
  if (s == "inverted") return SessionState::Inverted;
  if (s == "editing") return SessionState::Editing;
  if (s == "done") return SessionState::Done;
  if (s == "failed") return SessionState::Failed;
  throw Error(ErrorKind::DataIntegrity, "unknown session state '" + std::string(s) + "'", "state");
}

int http_status(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Validation:
    case ErrorKind::Schedule: return 400;
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Conflict: return 409;
    case ErrorKind::Precondition: return 412;
    case ErrorKind::Format:
    case ErrorKind::Shape:
    case ErrorKind::DataIntegrity:
    case ErrorKind::Unsupported: return 422;
    case ErrorKind::Transport:
    case ErrorKind::Remote:
    case ErrorKind::Protocol: return 502;
    case ErrorKind::Numerical:
    case ErrorKind::Convergence: return 500;
  }
  return 500;
}

json JobProgress::to_json() const {
  return json{{"id", id},
              {"kind", std::string(job_kind_name(kind))},
              {"state", std::string(job_state_name(state))},
              {"step", step},
              {"total", total},
              {"phase", phase},
              {"error", error.empty() ? json(nullptr) : json(error)},
              {"error_kind", error_kind.empty() ? json(nullptr) : json(error_kind)},
              {"failed_step", failed_step ? json(*failed_step) : json(nullptr)},
              {"timings", step_seconds}};
}

JobProgress JobProgress::from_json(const json& doc) {
  JobProgress p;
  p.id = doc.at("id").get<std::string>();
  p.kind = doc.at("kind").get<std::string>() == "invert" ? JobKind::Invert : JobKind::Edit;
  p.state = parse_job_state(doc.at("state").get<std::string>());
  p.step = doc.at("step").get<std::size_t>();
  p.total = doc.at("total").get<std::size_t>();
  p.phase = doc.at("phase").get<std::string>();
  if (!doc.at("error").is_null()) p.error = doc.at("error").get<std::string>();
  if (!doc.at("error_kind").is_null()) p.error_kind = doc.at("error_kind").get<std::string>();
  if (!doc.at("failed_step").is_null()) p.failed_step = doc.at("failed_step").get<std::size_t>();
  p.step_seconds = doc.at("timings").get<std::vector<double>>();
  return p;
}

EditRequest EditRequest::from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorKind::Validation, "edit request must be a JSON object", "body");
  for (const auto& item : doc.items()) {
    static const char* allowed[] = {"preset", "schedule", "condition", "two_step"};
    if (std::find(std::begin(allowed), std::end(allowed), item.key()) == std::end(allowed)) {
      throw Error(ErrorKind::Validation, item.key() + ": unknown field", item.key());
    }
  }
  EditRequest r;
  if (auto it = doc.find("preset"); it != doc.end() && !it->is_null()) {
    if (!it->is_string()) throw Error(ErrorKind::Validation, "preset must be a string", "preset");
    r.preset = it->get<std::string>();
  }
  if (auto it = doc.find("schedule"); it != doc.end() && !it->is_null()) {
    r.schedule = schedule_from_json(*it);
  }
  if (r.preset && r.schedule) {
    throw Error(ErrorKind::Validation, "give either a preset or a schedule, not both", "preset");
  }
  auto cond = doc.find("condition");
  if (cond == doc.end()) throw Error(ErrorKind::Validation, "edit needs a condition", "condition");
  r.condition = condition_from_json(*cond);
  if (auto it = doc.find("two_step"); it != doc.end() && !it->is_null()) {
    if (!it->is_object()) throw Error(ErrorKind::Validation, "two_step must be an object", "two_step");
    r.two_step = true;
    auto d = it->find("descriptor");
    if (d == it->end()) throw Error(ErrorKind::Validation, "two_step needs a descriptor", "descriptor");
    r.descriptor = condition_from_json(*d);
    r.invert_mask = it->value("invert_mask", false);
    r.compose_with_truncation = it->value("compose_with_truncation", false);
  }
  return r;
}

json EditRequest::to_json() const {
  json doc{{"preset", preset ? json(*preset) : json(nullptr)},
           {"schedule", schedule ? schedule_to_json(*schedule) : json(nullptr)},
           {"condition", condition_to_json(condition)},
           {"two_step", nullptr}};
  if (two_step) {
    doc["two_step"] = {{"descriptor", condition_to_json(descriptor)},
                       {"invert_mask", invert_mask},
                       {"compose_with_truncation", compose_with_truncation}};
  }
  return doc;
}

json SessionSnapshot::to_json() const {
  json job_list = json::array();
  for (const auto& j : jobs) job_list.push_back(j.to_json());
  return json{{"id", id},
              {"state", std::string(service::to_string(state))},
              {"config", session_config_to_json(config)},
              {"shape", shape_json(shape)},
              {"artifacts", artifacts},
              {"jobs", job_list},
              {"inversion", inversion},
              {"edit", edit},
              {"failure", failure}};
}

SessionSnapshot SessionSnapshot::from_json(const json& doc) {
  SessionSnapshot s;
  s.id = doc.at("id").get<std::string>();
  s.state = parse_session_state(doc.at("state").get<std::string>());
  s.config = session_config_from_json(doc.at("config"));
  if (const auto& sh = doc.at("shape"); !sh.is_null()) {
    s.shape = Shape{sh.at(0).get<std::size_t>(), sh.at(1).get<std::size_t>(), sh.at(2).get<std::size_t>()};
  }
  s.artifacts = doc.at("artifacts").get<std::vector<std::string>>();
  for (const auto& j : doc.at("jobs")) s.jobs.push_back(JobProgress::from_json(j));
  s.inversion = doc.value("inversion", json(nullptr));
  s.edit = doc.value("edit", json(nullptr));
  s.failure = doc.value("failure", json(nullptr));
  return s;
}

struct SessionStore::Session {
  mutable std::mutex m;
  mutable std::condition_variable cv;
  SessionSnapshot data;
  fs::path dir;
  bool busy = false;
  bool deleted = false;

  fs::path artifacts_dir() const { return dir / "artifacts"; }

  // Caller holds m.
  void persist() const { write_atomic(dir / kManifest, data.to_json().dump(2)); }

  // Caller holds m. The file must already be on disk.
  void index(const std::string& name) {
    if (std::find(data.artifacts.begin(), data.artifacts.end(), name) == data.artifacts.end()) {
      data.artifacts.push_back(name);
    }
  }

  JobProgress& job(const std::string& job_id) {
    for (auto& j : data.jobs) {
      if (j.id == job_id) return j;
    }
    throw Error(ErrorKind::NotFound, "unknown job '" + job_id + "'", "job");
  }
};

SessionStore::SessionStore(StoreOptions options) : options_(std::move(options)) {
  if (options_.root.empty()) throw Error(ErrorKind::Validation, "data root must be set", "root");
  fs::create_directories(options_.root);
  load_existing();
}

SessionStore::~SessionStore() {
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(workers_mutex_);
    workers.swap(workers_);
  }
  for (auto& w : workers) {
    if (w.joinable()) w.join();
  }
}

void SessionStore::load_existing() {
  for (const auto& entry : fs::directory_iterator(options_.root)) {
    if (!entry.is_directory()) continue;
    const fs::path manifest = entry.path() / kManifest;
    if (!fs::exists(manifest)) continue;
    auto session = std::make_shared<Session>();
    session->dir = entry.path();
    try {
      session->data = SessionSnapshot::from_json(json::parse(read_file(manifest)));
    } catch (const std::exception&) {
      // Unreadable manifests are left on disk untouched and not served.
      continue;
    }
    if (session->data.id != entry.path().filename().string()) continue;
    bool interrupted = false;
    for (auto& j : session->data.jobs) {
      if (!j.finished()) {
        j.state = JobState::Failed;
        j.phase = "failed";
        j.error = "interrupted by service restart";
        j.error_kind = "interrupted";
        j.failed_step = j.step;
        interrupted = true;
      }
    }
    // Drop index entries whose files did not survive.
    auto& names = session->data.artifacts;
    names.erase(std::remove_if(names.begin(), names.end(),
                               [&](const std::string& n) {
                                 return !fs::exists(session->artifacts_dir() / n);
                               }),
                names.end());
    if (interrupted || session->data.state == SessionState::Editing) {
      session->data.state = SessionState::Failed;
      session->data.failure = {{"error", "interrupted by service restart"}, {"kind", "interrupted"}};
    }
    session->persist();
    sessions_.emplace(session->data.id, session);
  }
}

std::shared_ptr<SessionStore::Session> SessionStore::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = valid_session_id(id) ? sessions_.find(id) : sessions_.end();
  if (it == sessions_.end()) throw Error(ErrorKind::NotFound, "unknown session '" + id + "'", "session");
  return it->second;
}

SessionConfig SessionStore::runtime_config(const SessionConfig& config) const {
  SessionConfig c = config;
  if (c.backend == BackendKind::Remote && c.remote.endpoint.empty()) {
    c.remote.endpoint = options_.default_remote_endpoint;
  }
  return c;
}

std::string SessionStore::create(SessionConfig config) {
  config = runtime_config(config);
  config.validate();
  auto session = std::make_shared<Session>();
  std::string id;
  {
    std::lock_guard lock(mutex_);
    do {
      id = new_session_id();
    } while (sessions_.contains(id) || fs::exists(options_.root / id));
    session->data.id = id;
    session->data.config = std::move(config);
    session->dir = options_.root / id;
    fs::create_directories(session->artifacts_dir());
    std::lock_guard slock(session->m);
    session->persist();
    sessions_.emplace(id, session);
  }
  return id;
}

SessionSnapshot SessionStore::get(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->m);
  return s->data;
}

std::vector<std::string> SessionStore::list() const {
  std::lock_guard lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, _] : sessions_) ids.push_back(id);
  return ids;
}

void SessionStore::remove(const std::string& id) {
  auto s = find(id);
  {
    std::lock_guard lock(s->m);
    if (s->busy) throw Error(ErrorKind::Conflict, "session has a running job", "session");
    s->deleted = true;
  }
  {
    std::lock_guard lock(mutex_);
    sessions_.erase(id);
  }
  fs::remove_all(s->dir);
}

Shape SessionStore::upload_latent(const std::string& id, std::string_view bytes) {
  LatentTensor latent = decode_latent(bytes);
  auto s = find(id);
  std::lock_guard lock(s->m);
  if (s->busy || s->data.state != SessionState::Created) {
    throw Error(ErrorKind::Conflict,
                "latent can only be uploaded before inversion (state " +
                    std::string(to_string(s->data.state)) + ")",
                "state");
  }
  write_atomic(s->artifacts_dir() / kSourceArtifact, std::string(bytes));
  s->data.shape = latent.shape();
  s->index(kSourceArtifact);
  s->persist();
  return latent.shape();
}

void SessionStore::launch(std::function<void()> work) {
  std::lock_guard lock(workers_mutex_);
  workers_.emplace_back(std::move(work));
}

std::string SessionStore::start_invert(const std::string& id) {
  auto s = find(id);
  std::string job_id;
  {
    std::lock_guard lock(s->m);
    if (s->busy) throw Error(ErrorKind::Conflict, "session already has a running job", "session");
    if (s->data.state != SessionState::Created) {
      throw Error(ErrorKind::Conflict,
                  "session is " + std::string(to_string(s->data.state)) + ", not created", "state");
    }
    if (!s->data.shape) throw Error(ErrorKind::Precondition, "no source latent uploaded", "latent");
    JobProgress job;
    job.id = "j" + std::to_string(s->data.jobs.size() + 1);
    job.kind = JobKind::Invert;
    job.total = 2 * static_cast<std::size_t>(s->data.config.schedule.steps);
    s->data.jobs.push_back(job);
    s->busy = true;
    s->persist();
    job_id = job.id;
  }
  launch([this, s, job_id] { run_invert(s, job_id); });
  return job_id;
}

std::string SessionStore::start_edit(const std::string& id, const EditRequest& request) {
  // Resolve references before accepting so bad requests fail synchronously.
  if (request.preset) {
    const std::string& p = *request.preset;
    if (p == "sf0" || p == "sf0.0") {
      if (!request.two_step) {
        throw Error(ErrorKind::Unsupported, "SF-0 has no preset: two-step process required", "preset");
      }
    } else {
      (void)load_preset(p);
    }
  }
  if (request.two_step && request.descriptor.is_null()) {
    throw Error(ErrorKind::Validation, "two-step descriptor must not be null", "descriptor");
  }
  auto s = find(id);
  std::string job_id;
  {
    std::lock_guard lock(s->m);
    if (s->busy) throw Error(ErrorKind::Conflict, "session already has a running job", "session");
    if (s->data.state == SessionState::Created) {
      throw Error(ErrorKind::Precondition, "inverted latent missing", "state");
    }
    if (s->data.state != SessionState::Inverted) {
      throw Error(ErrorKind::Conflict,
                  "session is " + std::string(to_string(s->data.state)) + ", not inverted", "state");
    }
    JobProgress job;
    job.id = "j" + std::to_string(s->data.jobs.size() + 1);
    job.kind = JobKind::Edit;
    job.total = (request.two_step ? 2 : 1) * static_cast<std::size_t>(s->data.config.schedule.steps);
    s->data.jobs.push_back(job);
    s->data.state = SessionState::Editing;
    s->data.edit = request.to_json();
    s->busy = true;
    s->persist();
    job_id = job.id;
  }
  launch([this, s, job_id, request] { run_edit(s, job_id, request); });
  return job_id;
}

JobProgress SessionStore::job(const std::string& id, const std::string& job_id) const {
  auto s = find(id);
  std::lock_guard lock(s->m);
  return s->job(job_id);
}

JobProgress SessionStore::wait(const std::string& id, const std::string& job_id) const {
  auto s = find(id);
  std::unique_lock lock(s->m);
  s->cv.wait(lock, [&] { return s->job(job_id).finished(); });
  return s->job(job_id);
}

fs::path SessionStore::artifact_path(const std::string& id, const std::string& name) const {
  if (!valid_artifact_name(name)) {
    throw Error(ErrorKind::Validation, "invalid artifact name '" + name + "'", "name");
  }
  auto s = find(id);
  std::lock_guard lock(s->m);
  const auto& names = s->data.artifacts;
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    throw Error(ErrorKind::NotFound, "unknown artifact '" + name + "'", "name");
  }
  return s->artifacts_dir() / name;
}

std::string SessionStore::read_artifact(const std::string& id, const std::string& name) const {
  return read_file(artifact_path(id, name));
}

namespace {

// Tracks progress of one job; every update is published under the session
// lock so pollers see a non-decreasing step index.
class ProgressTracker {
 public:
  ProgressTracker(SessionStore::Session& s, std::string job_id) : s_(s), job_id_(std::move(job_id)) {}

  void begin(std::size_t step, const std::string& phase) {
    const auto now = std::chrono::steady_clock::now();
    std::lock_guard lock(s_.m);
    auto& j = s_.job(job_id_);
    if (j.state == JobState::Running && step > j.step) {
      j.step_seconds.push_back(std::chrono::duration<double>(now - last_).count());
    }
    j.state = JobState::Running;
    j.step = std::max(j.step, step);
    j.phase = phase;
    last_ = now;
    current_ = step;
    s_.cv.notify_all();
  }

  std::size_t current() const { return current_; }

  void finish_step() {
    const auto now = std::chrono::steady_clock::now();
    std::lock_guard lock(s_.m);
    auto& j = s_.job(job_id_);
    j.step_seconds.push_back(std::chrono::duration<double>(now - last_).count());
    j.step = j.total;
    last_ = now;
  }

 private:
  SessionStore::Session& s_;
  std::string job_id_;
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  std::size_t current_ = 0;
};

void fail_job(SessionStore::Session& s, const std::string& job_id, std::size_t step,
              const std::string& message, const std::string& kind) {
  std::lock_guard lock(s.m);
  auto& j = s.job(job_id);
  j.state = JobState::Failed;
  j.phase = "failed";
  j.error = message;
  j.error_kind = kind;
  j.failed_step = step;
  s.data.state = SessionState::Failed;
  s.data.failure = {{"error", message}, {"kind", kind}, {"step", step}, {"job", job_id}};
  s.busy = false;
  if (!s.deleted) s.persist();
  s.cv.notify_all();
}

void write_artifact(SessionStore::Session& s, const std::string& name, const std::string& bytes) {
  write_atomic(s.artifacts_dir() / name, bytes);
  std::lock_guard lock(s.m);
  s.index(name);
}

void write_latent_artifact(SessionStore::Session& s, const std::string& name, const LatentTensor& x) {
  write_artifact(s, name, encode_latent(x));
}

json step_spectrum(const StepRecord& rec, const NoiseSchedule& schedule) {
  const PowerSpectrum p = power_spectrum(rec.x0_prediction);
  FrequencyMap scaled = p.power;
  for (double& v : scaled.values) v /= p.noise_reference;
  return json{{"t", rec.t},
              {"index", rec.index},
              {"radial_profile", radial_profile(scaled)},
              {"snr_box_radius", snr_box(rec.t, p, schedule, false)},
              {"units", "per-pixel noise variance"}};
}

}  // namespace

void SessionStore::run_invert(std::shared_ptr<Session> s, std::string job_id) {
  ProgressTracker progress(*s, job_id);
  try {
    SessionConfig config;
    {
      std::lock_guard lock(s->m);
      config = runtime_config(s->data.config);
    }
    const LatentTensor x0 = read_latent_file(s->artifacts_dir() / kSourceArtifact);
    const NoiseSchedule schedule = make_schedule(config.schedule);
    const TimestepGrid grid = make_timestep_grid(config.schedule.steps, config.schedule.training_steps);
    auto model = make_denoiser(config, x0.shape(), schedule);
    const std::size_t steps = grid.steps();
    const GuidanceScale gamma(config.effective_inversion_gamma());
    const Condition cond = config.inversion_condition();

    Trajectory traj = invert(x0, *model, cond, gamma, FixedPointSettings{config.fp_iters}, schedule, grid,
                             [&](std::size_t i, int) { progress.begin(i, "invert"); });
    write_latent_artifact(*s, kInvertedArtifact, traj.final_latent());

    GenerateOptions check;
    check.on_step = [&](std::size_t i, int) { progress.begin(steps + i, "generate"); };
    GenerationResult regen =
        generate(traj.final_latent(), *model, cond, gamma, identity_refiner(), schedule, grid, check);
    progress.finish_step();
    write_latent_artifact(*s, "recon.fdlt", regen.x0);

    json residuals = json::array();
    double worst_final = 0.0;
    for (std::size_t i = 0; i < traj.residuals.size(); ++i) {
      const auto& r = traj.residuals[i];
      const double last = r.empty() ? 0.0 : r.back();
      worst_final = std::max(worst_final, last);
      residuals.push_back({{"t_from", traj.points[i].t}, {"t_to", traj.points[i + 1].t}, {"residuals", r}});
    }
    const double recon = relative_error(regen.x0, x0);
    json summary{{"fp_iters", config.fp_iters},
                 {"gamma", gamma.value()},
                 {"condition", condition_to_json(cond)},
                 {"max_final_residual", worst_final},
                 {"recon_rel_error", recon},
                 {"recon_tolerance", 1e-3},
                 {"recon_ok", recon < 1e-3}};
    write_artifact(*s, "inversion.json", json{{"summary", summary}, {"steps", residuals}}.dump(2));

    std::lock_guard lock(s->m);
    auto& j = s->job(job_id);
    j.state = JobState::Done;
    j.phase = "done";
    j.step = j.total;
    s->data.inversion = summary;
    s->data.state = SessionState::Inverted;
    s->busy = false;
    if (!s->deleted) s->persist();
    s->cv.notify_all();
  } catch (const Error& e) {
    fail_job(*s, job_id, progress.current(), e.what(), std::string(to_string(e.kind())));
  } catch (const std::exception& e) {
    fail_job(*s, job_id, progress.current(), e.what(), "internal");
  }
}

void SessionStore::run_edit(std::shared_ptr<Session> s, std::string job_id, EditRequest request) {
  ProgressTracker progress(*s, job_id);
  try {
    SessionConfig config;
    {
      std::lock_guard lock(s->m);
      config = runtime_config(s->data.config);
    }
    const LatentTensor x_T = read_latent_file(s->artifacts_dir() / kInvertedArtifact);
    const NoiseSchedule schedule = make_schedule(config.schedule);
    const TimestepGrid grid = make_timestep_grid(config.schedule.steps, config.schedule.training_steps);
    const FreqGrid freq_grid(x_T.shape().height, x_T.shape().width, config.radius_metric);
    auto model = make_denoiser(config, x_T.shape(), schedule);
    const GuidanceScale gamma(config.schedule.gamma);
    const std::size_t steps = grid.steps();

    std::optional<TruncationSchedule> truncation = request.schedule;
    if (request.preset && *request.preset != "sf0" && *request.preset != "sf0.0") {
      truncation = load_preset(*request.preset);
    }
    if (!truncation && !request.preset) truncation = config.truncation;

    GenerationResult result;
    if (request.two_step) {
      TwoStepOptions opts;
      opts.descriptor_schedule = truncation.value_or(load_preset("sf1.0"));
      opts.quantile = config.mask_quantile;
      opts.amplify = config.amplify;
      opts.invert = request.invert_mask;
      opts.compose_with_truncation = request.compose_with_truncation;
      opts.edit_schedule = opts.descriptor_schedule;
      GenerateOptions pass1;
      pass1.on_step = [&](std::size_t i, int) { progress.begin(i, "two-step-pass-1"); };
      GenerateOptions pass2;
      pass2.record = true;
      pass2.on_step = [&](std::size_t i, int) { progress.begin(steps + i, "two-step-pass-2"); };
      TwoStepResult two = run_two_step(x_T, *model, request.descriptor, request.condition, gamma, opts,
                                       schedule, grid, freq_grid, pass1, pass2);
      write_latent_artifact(*s, "mask.fdlt", two.mask.to_tensor());
      write_latent_artifact(*s, "descriptor_x0.fdlt", two.descriptor_pass.x0);
      result = std::move(two.edit_pass);
    } else {
      GuidanceRefiner refiner = identity_refiner();
      if (truncation) {
        const TruncationSchedule plan = *truncation;
        refiner = [plan, &freq_grid](const LatentTensor& g, int t) {
          return refine_guidance(g, t, plan, freq_grid);
        };
      }
      GenerateOptions opts;
      opts.record = true;
      opts.on_step = [&](std::size_t i, int) { progress.begin(i, "generate"); };
      result = generate(x_T, *model, request.condition, gamma, refiner, schedule, grid, opts);
    }
    progress.finish_step();

    json step_list = json::array();
    for (const StepRecord& rec : result.steps) {
      const std::string t = std::to_string(rec.t);
      write_latent_artifact(*s, "g_t" + t + ".fdlt", rec.guidance);
      write_latent_artifact(*s, "gstar_t" + t + ".fdlt", rec.refined_guidance);
      write_latent_artifact(*s, "x0pred_t" + t + ".fdlt", rec.x0_prediction);
      write_artifact(*s, "spectrum_t" + t + ".json", step_spectrum(rec, schedule).dump());
      step_list.push_back({{"index", rec.index},
                           {"t", rec.t},
                           {"guidance_norm", rec.guidance.norm()},
                           {"refined_norm", rec.refined_guidance.norm()},
                           {"refined_nonzero_fraction", fraction_nonzero(rec.refined_guidance)},
                           {"artifacts",
                            {{"guidance", "g_t" + t + ".fdlt"},
                             {"refined_guidance", "gstar_t" + t + ".fdlt"},
                             {"x0_prediction", "x0pred_t" + t + ".fdlt"},
                             {"spectrum", "spectrum_t" + t + ".json"}}}});
    }
    write_artifact(*s, "steps.json", step_list.dump(2));
    write_latent_artifact(*s, "x0_final.fdlt", result.x0);

    std::lock_guard lock(s->m);
    auto& j = s->job(job_id);
    j.state = JobState::Done;
    j.phase = "done";
    j.step = j.total;
    s->data.state = SessionState::Done;
    s->busy = false;
    if (!s->deleted) s->persist();
    s->cv.notify_all();
  } catch (const Error& e) {
    fail_job(*s, job_id, progress.current(), e.what(), std::string(to_string(e.kind())));
  } catch (const std::exception& e) {
    fail_job(*s, job_id, progress.current(), e.what(), "internal");
  }
}

}  // namespace freediff::service
