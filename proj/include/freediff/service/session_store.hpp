#pragma once

#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "freediff/config.hpp"
#include "freediff/error.hpp"
#include "freediff/tensor.hpp"
#include "json.hpp"

namespace freediff::service {

enum class SessionState { Created, Inverted, Editing, Done, Failed };

std::string_view to_string(SessionState state) noexcept;
SessionState parse_session_state(std::string_view text);

enum class JobKind { Invert, Edit };
enum class JobState { Pending, Running, Done, Failed };

struct JobProgress {
  std::string id;
  JobKind kind = JobKind::Invert;
  JobState state = JobState::Pending;
  std::size_t step = 0;
  std::size_t total = 0;
  /// pending | invert | generate | two-step-pass-1 | two-step-pass-2 | done | failed
  std::string phase = "pending";
  std::string error;
  std::string error_kind;
  std::optional<std::size_t> failed_step;
  /// Wall time of each finished step, in seconds.
  std::vector<double> step_seconds;

  bool finished() const noexcept { return state == JobState::Done || state == JobState::Failed; }
  nlohmann::json to_json() const;
  static JobProgress from_json(const nlohmann::json& doc);
};

/// Body of POST /sessions/{id}/edit.
struct EditRequest {
  std::optional<std::string> preset;
  std::optional<TruncationSchedule> schedule;
  Condition condition = Condition::null();
  bool two_step = false;
  /// Pass-1 condition of the two-step process.
  Condition descriptor = Condition::null();
  bool invert_mask = false;
  bool compose_with_truncation = false;

  static EditRequest from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
};

struct SessionSnapshot {
  std::string id;
  SessionState state = SessionState::Created;
  SessionConfig config;
  std::optional<Shape> shape;
  std::vector<std::string> artifacts;
  std::vector<JobProgress> jobs;
  nlohmann::json inversion;  // summary of the last inversion, or null
  nlohmann::json edit;       // the accepted edit request, or null
  nlohmann::json failure;    // {"error", "kind", "step"} or null

  nlohmann::json to_json() const;
  static SessionSnapshot from_json(const nlohmann::json& doc);
};

struct StoreOptions {
  std::filesystem::path root;
  /// Used by remote-backend sessions whose config names no endpoint.
  std::string default_remote_endpoint;
};

/// Owns every session under `root`. Jobs run on background threads; each
/// session runs at most one job at a time.
class SessionStore {
 public:
  explicit SessionStore(StoreOptions options);
  ~SessionStore();

  SessionStore(const SessionStore&) = delete;
  SessionStore& operator=(const SessionStore&) = delete;

  std::string create(SessionConfig config);
  SessionSnapshot get(const std::string& id) const;
  std::vector<std::string> list() const;
  void remove(const std::string& id);

  /// Stores the source latent. Conflict once the session has been inverted.
  Shape upload_latent(const std::string& id, std::string_view fdlt_bytes);

  std::string start_invert(const std::string& id);
  std::string start_edit(const std::string& id, const EditRequest& request);

  JobProgress job(const std::string& id, const std::string& job_id) const;
  /// Blocks until the job has finished.
  JobProgress wait(const std::string& id, const std::string& job_id) const;

  /// Indexed artifacts only; names with path components are rejected.
  std::filesystem::path artifact_path(const std::string& id, const std::string& name) const;
  std::string read_artifact(const std::string& id, const std::string& name) const;

  const std::filesystem::path& root() const noexcept { return options_.root; }

  struct Session;

 private:
  std::shared_ptr<Session> find(const std::string& id) const;
  void load_existing();
  void launch(std::function<void()> work);
  void run_invert(std::shared_ptr<Session> session, std::string job_id);
  void run_edit(std::shared_ptr<Session> session, std::string job_id, EditRequest request);
  SessionConfig runtime_config(const SessionConfig& config) const;

  StoreOptions options_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex workers_mutex_;
  std::vector<std::thread> workers_;
};

/// Maps an error kind to the HTTP status the service answers with.
int http_status(ErrorKind kind) noexcept;

}  // namespace freediff::service
