#pragma once

/**
 * @file backend.hpp
 * @brief Live-model adapter over an HTTP JSON completion API.
 *
 * A request is the config's `request_template` with the level's
 * `request_overrides` merge-patched in, after which `{{prompt}}`, `{{model}}`,
 * `{{level.label}}`, `{{level.kind}}` and `{{level.index}}` placeholders are
 * substituted inside string values. The completion-token count is read from
 * the response at `usage_path`; the answer text at `response_path` goes to the
 * task's judge.
 *
 * The credential is read from the environment variable named in the config and
 * is only ever placed in the outgoing request header.
 */

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "arise/sampler.hpp"

namespace arise {

using Duration = std::chrono::milliseconds;

/// "250ms", "2s", "1.5s", or a bare number of milliseconds.
Duration parse_duration(const nlohmann::json& value);

enum class LevelKind { Effort, Mode };

struct LevelSpec {
  std::string label;
  LevelKind kind = LevelKind::Effort;
  nlohmann::json request_overrides = nlohmann::json::object();
};

struct RetryPolicy {
  std::size_t max_attempts = 3;
  Duration backoff_base{500};

  /// Sleep before attempt `attempt + 1`, given `attempt` failures so far (>= 1).
  Duration delay_after(std::size_t attempt) const;
};

struct BackendConfig {
  std::string base_url;
  std::string auth_env_var;  // empty: no credential
  std::string auth_header = "Authorization";
  std::string auth_scheme = "Bearer";
  std::string model;
  nlohmann::json request_template = nlohmann::json::object();
  std::vector<LevelSpec> levels;
  std::size_t max_in_flight = 4;
  Duration min_request_interval{0};
  RetryPolicy retry;
  std::string usage_path = "/usage/completion_tokens";
  std::string response_path = "/choices/0/message/content";
  Duration timeout{600000};

  /// Throws ValidationError: fewer than 2 levels, duplicate labels, bad limits.
  void validate() const;
  std::vector<std::string> level_labels() const;
};

BackendConfig backend_config_from_json(const nlohmann::json& j);
BackendConfig load_backend_config(const std::filesystem::path& path);

struct ExactMatch {
  std::string expected;
};
struct NumericMatch {
  double expected = 0.0;
  double tol = 0.0;
};
/// Command receives the response on stdin and (sample_id, level_label, trial_index)
/// as trailing arguments; it must exit 0 printing "1" or "0".
struct ExternalJudge {
  std::vector<std::string> command;
};
using Judge = std::variant<ExactMatch, NumericMatch, ExternalJudge>;

struct JudgedTask {
  std::string sample_id;
  std::string prompt;
  Judge judge;
};

/// {sample_id, prompt, judge: {type: exact_match|numeric_match|external, ...}}
JudgedTask task_from_json(const nlohmann::json& j);
/// JSON array or JSONL file of tasks.
std::vector<JudgedTask> load_tasks(const std::filesystem::path& path);

/// Verdict in {0, 1}. Throws JudgeError when an external judge misbehaves.
double judge_response(const JudgedTask& task, const std::string& response,
                      const std::string& level_label, std::size_t trial_index);

/// Resolves "/a/0/b" (JSON pointer) or "a.0.b" against `doc`.
std::optional<nlohmann::json> resolve_path(const nlohmann::json& doc, const std::string& path);
/// True when `path` is syntactically usable.
bool valid_path(const std::string& path);

/// Renders the request body. Throws TemplateError naming every unresolved placeholder.
nlohmann::json render_request(const BackendConfig& cfg, const std::string& prompt,
                              std::size_t level_index);

/// Bounds concurrent requests and enforces a minimum gap between request starts.
class RateLimiter {
 public:
  RateLimiter(std::size_t max_in_flight, Duration min_interval);

  class Permit {
   public:
    explicit Permit(RateLimiter* owner) : owner_(owner) {}
    Permit(Permit&& o) noexcept : owner_(std::exchange(o.owner_, nullptr)) {}
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;
    Permit& operator=(Permit&&) = delete;
    ~Permit();

   private:
    RateLimiter* owner_;
  };

  /// Blocks until a slot is free and the spacing rule allows a new request.
  Permit acquire();

 private:
  void release();

  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t max_in_flight_;
  std::size_t in_flight_ = 0;
  Duration min_interval_;
  std::chrono::steady_clock::time_point next_start_{};
};

/// EvaluationBackend speaking to an HTTP completion endpoint. Thread-safe.
class HttpBackend final : public EvaluationBackend {
 public:
  HttpBackend(BackendConfig cfg, std::vector<JudgedTask> tasks);

  TrialOutcome evaluate(const std::string& sample_id, std::size_t level_index,
                        std::size_t trial_index) override;

  /// POSTs one rendered request with the retry policy; returns the parsed response.
  nlohmann::json send(const nlohmann::json& body);

  const BackendConfig& config() const noexcept { return cfg_; }
  std::vector<std::string> sample_ids() const;

 private:
  BackendConfig cfg_;
  std::vector<JudgedTask> tasks_;
  std::unordered_map<std::string, std::size_t> index_;
  RateLimiter limiter_;
  std::string scheme_host_port_;
  std::string path_;
};

struct DryRunReport {
  std::vector<nlohmann::json> rendered;  // one per level
  std::vector<std::string> problems;
  bool usage_path_valid = false;
  bool response_path_valid = false;
  std::optional<nlohmann::json> probe_response;

  bool ok() const { return problems.empty(); }
};

/// Renders one request per level without sending it. With `probe`, additionally
/// sends the level-0 request once and checks that usage_path resolves.
/// Problems are reported, never thrown.
DryRunReport dry_run(const BackendConfig& cfg, const std::vector<JudgedTask>& tasks,
                     bool probe = false);

}  // namespace arise
