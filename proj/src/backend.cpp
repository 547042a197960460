#include "arise/backend.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

#include "arise/document.hpp"
#include "arise/errors.hpp"

extern char** environ;

namespace arise {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

Duration parse_duration(const json& value) {
  if (value.is_number()) {
    const double ms = value.get<double>();
    if (!(ms >= 0.0)) throw ValidationError("duration", "must be non-negative");
    return Duration(static_cast<Duration::rep>(std::llround(ms)));
  }
  if (!value.is_string()) throw ValidationError("duration", "expected a number or a string");
  static const std::regex pattern(R"(^\s*([0-9]*\.?[0-9]+)\s*(ms|s|m)?\s*$)");
  std::smatch m;
  const std::string text = value.get<std::string>();
  if (!std::regex_match(text, m, pattern)) {
    throw ValidationError("duration", "cannot parse '" + text + "'");
  }
  double amount = std::stod(m[1].str());
  const std::string unit = m[2].matched ? m[2].str() : "ms";
  if (unit == "s") amount *= 1000.0;
  if (unit == "m") amount *= 60000.0;
  return Duration(static_cast<Duration::rep>(std::llround(amount)));
}

Duration RetryPolicy::delay_after(std::size_t attempt) const {
  const std::size_t shift = std::min<std::size_t>(attempt == 0 ? 0 : attempt - 1, 16);
  return backoff_base * (1LL << shift);
}

void BackendConfig::validate() const {
  static const std::regex url(R"(^https?://[^/\s]+(/\S*)?$)");
  if (!std::regex_match(base_url, url)) {
    throw ValidationError("base_url", "expected http(s)://host[:port]/path, got '" + base_url + "'");
  }
  if (levels.size() < 2) throw ValidationError("levels", "at least 2 levels are required");
  std::set<std::string> labels;
  for (const auto& l : levels) {
    if (l.label.empty()) throw ValidationError("levels.label", "must be non-empty");
    if (!labels.insert(l.label).second) {
      throw ValidationError("levels.label", "duplicate label '" + l.label + "'");
    }
    if (!l.request_overrides.is_object()) {
      throw ValidationError("levels.request_overrides", "must be a JSON object");
    }
  }
  if (max_in_flight < 1) throw ValidationError("max_in_flight", "must be >= 1");
  if (retry.max_attempts < 1) throw ValidationError("retry.max_attempts", "must be >= 1");
  if (!request_template.is_object()) {
    throw ValidationError("request_template", "must be a JSON object");
  }
  if (!valid_path(usage_path)) throw ValidationError("usage_path", "invalid path");
  if (!valid_path(response_path)) throw ValidationError("response_path", "invalid path");
}

std::vector<std::string> BackendConfig::level_labels() const {
  std::vector<std::string> out;
  for (const auto& l : levels) out.push_back(l.label);
  return out;
}

BackendConfig backend_config_from_json(const json& j) {
  BackendConfig c;
  try {
    c.base_url = j.at("base_url").get<std::string>();
    c.auth_env_var = j.value("auth_env_var", std::string{});
    c.auth_header = j.value("auth_header", c.auth_header);
    c.auth_scheme = j.value("auth_scheme", c.auth_scheme);
    c.model = j.at("model").get<std::string>();
    c.request_template = j.at("request_template");
    for (const auto& jl : j.at("levels")) {
      LevelSpec l;
      l.label = jl.at("label").get<std::string>();
      const std::string kind = jl.value("kind", std::string{"effort"});
      if (kind == "effort") {
        l.kind = LevelKind::Effort;
      } else if (kind == "mode") {
        l.kind = LevelKind::Mode;
      } else {
        throw ValidationError("levels.kind", "expected 'effort' or 'mode', got '" + kind + "'");
      }
      l.request_overrides = jl.value("request_overrides", json::object());
      c.levels.push_back(std::move(l));
    }
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    if (j.contains("min_request_interval")) {
      c.min_request_interval = parse_duration(j["min_request_interval"]);
    }
    if (j.contains("retry")) {
      const json& r = j["retry"];
      c.retry.max_attempts = r.value("max_attempts", c.retry.max_attempts);
      if (r.contains("backoff_base")) c.retry.backoff_base = parse_duration(r["backoff_base"]);
    }
    c.usage_path = j.value("usage_path", c.usage_path);
    c.response_path = j.value("response_path", c.response_path);
    if (j.contains("timeout")) c.timeout = parse_duration(j["timeout"]);
  } catch (const json::exception& e) {
    throw ValidationError("backend config", e.what());
  }
  c.validate();
  return c;
}

BackendConfig load_backend_config(const std::filesystem::path& path) {
  return backend_config_from_json(load_document(path));
}

// ---------------------------------------------------------------------------
// Tasks and judges
// ---------------------------------------------------------------------------

JudgedTask task_from_json(const json& j) {
  JudgedTask t;
  try {
    t.sample_id = j.at("sample_id").is_string() ? j.at("sample_id").get<std::string>()
                                                 : j.at("sample_id").dump();
    t.prompt = j.at("prompt").get<std::string>();
    const json& judge = j.at("judge");
    const std::string type = judge.at("type").get<std::string>();
    if (type == "exact_match") {
      t.judge = ExactMatch{judge.at("expected").get<std::string>()};
    } else if (type == "numeric_match") {
      t.judge = NumericMatch{judge.at("expected").get<double>(), judge.value("tol", 0.0)};
    } else if (type == "external") {
      const json& cmd = judge.at("command");
      ExternalJudge e;
      if (cmd.is_string()) {
        e.command.push_back(cmd.get<std::string>());
      } else {
        e.command = cmd.get<std::vector<std::string>>();
      }
      if (e.command.empty()) throw ValidationError("judge.command", "must be non-empty");
      t.judge = std::move(e);
    } else {
      throw ValidationError("judge.type", "unknown judge '" + type + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError("task", e.what());
  }
  if (t.sample_id.empty()) throw ValidationError("sample_id", "must be non-empty");
  return t;
}

std::vector<JudgedTask> load_tasks(const std::filesystem::path& path) {
  std::vector<JudgedTask> tasks;
  if (path.extension() == ".jsonl") {
    std::ifstream in(path);
    if (!in) throw ValidationError("tasks", "cannot open '" + path.string() + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        tasks.push_back(task_from_json(json::parse(line)));
      } catch (const json::exception& e) {
        throw ValidationError("tasks", e.what());
      }
    }
  } else {
    const json doc = load_document(path);
    if (!doc.is_array()) throw ValidationError("tasks", "expected a JSON array of tasks");
    for (const auto& j : doc) tasks.push_back(task_from_json(j));
  }
  std::set<std::string> seen;
  for (const auto& t : tasks) {
    if (!seen.insert(t.sample_id).second) {
      throw ValidationError("sample_id", "duplicate task '" + t.sample_id + "'");
    }
  }
  return tasks;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

struct CommandResult {
  int exit_code = -1;
  std::string out;
};

CommandResult run_command(const std::vector<std::string>& argv, const std::string& input) {
  static const bool sigpipe_ignored = [] {
    std::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)sigpipe_ignored;

  int in_pipe[2];
  int out_pipe[2];
  if (::pipe(in_pipe) != 0) throw Error("pipe() failed");
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw Error("pipe() failed");
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, in_pipe[1]);
  posix_spawn_file_actions_addclose(&actions, out_pipe[0]);

  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  pid_t pid = 0;
  const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  if (rc != 0) {
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    throw Error("cannot start judge '" + argv[0] + "'");
  }

  std::size_t written = 0;
  while (written < input.size()) {
    const ssize_t n = ::write(in_pipe[1], input.data() + written, input.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      break;  // the judge stopped reading
    }
    written += static_cast<std::size_t>(n);
  }
  ::close(in_pipe[1]);

  CommandResult result;
  char buf[4096];
  for (;;) {
    const ssize_t n = ::read(out_pipe[0], buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    result.out.append(buf, static_cast<std::size_t>(n));
  }
  ::close(out_pipe[0]);

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

}  // namespace

double judge_response(const JudgedTask& task, const std::string& response,
                      const std::string& level_label, std::size_t trial_index) {
  if (const auto* exact = std::get_if<ExactMatch>(&task.judge)) {
    return trim(response) == trim(exact->expected) ? 1.0 : 0.0;
  }
  if (const auto* numeric = std::get_if<NumericMatch>(&task.judge)) {
    const std::string text = trim(response);
    if (text.empty()) return 0.0;
    char* end = nullptr;
    const double value = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size() || !std::isfinite(value)) return 0.0;
    return std::abs(value - numeric->expected) <= numeric->tol ? 1.0 : 0.0;
  }
  const auto& external = std::get<ExternalJudge>(task.judge);
  std::vector<std::string> argv = external.command;
  argv.push_back(task.sample_id);
  argv.push_back(level_label);
  argv.push_back(std::to_string(trial_index));
  CommandResult r;
  try {
    r = run_command(argv, response);
  } catch (const Error& e) {
    throw JudgeError(e.what(), response);
  }
  const std::string verdict = trim(r.out);
  if (r.exit_code != 0) {
    throw JudgeError("judge exited with status " + std::to_string(r.exit_code), response);
  }
  if (verdict == "1") return 1.0;
  if (verdict == "0") return 0.0;
  throw JudgeError("judge printed '" + verdict + "', expected '1' or '0'", response);
}

// ---------------------------------------------------------------------------
// Paths and templates
// ---------------------------------------------------------------------------

namespace {

std::optional<json::json_pointer> to_pointer(const std::string& path) {
  std::string pointer;
  if (path.empty()) return std::nullopt;
  if (path.front() == '/') {
    pointer = path;
  } else {
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) {
      if (part.empty()) return std::nullopt;
      pointer += "/" + part;
    }
  }
  try {
    return json::json_pointer(pointer);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

}  // namespace

bool valid_path(const std::string& path) { return to_pointer(path).has_value(); }

std::optional<json> resolve_path(const json& doc, const std::string& path) {
  const auto pointer = to_pointer(path);
  if (!pointer) return std::nullopt;
  try {
    if (!doc.contains(*pointer)) return std::nullopt;
    return doc.at(*pointer);
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

namespace {

void substitute(json& node, const std::unordered_map<std::string, json>& values,
                std::set<std::string>& unresolved) {
  static const std::regex placeholder(R"(\{\{\s*([A-Za-z0-9_.]+)\s*\}\})");
  if (node.is_object() || node.is_array()) {
    for (auto& child : node) substitute(child, values, unresolved);
    return;
  }
  if (!node.is_string()) return;
  const std::string text = node.get<std::string>();
  std::smatch whole;
  if (std::regex_match(text, whole, placeholder)) {
    auto it = values.find(whole[1].str());
    if (it == values.end()) {
      unresolved.insert(whole[1].str());
    } else {
      node = it->second;
    }
    return;
  }
  std::string out;
  auto begin = std::sregex_iterator(text.begin(), text.end(), placeholder);
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    out.append(text, last, static_cast<std::size_t>(m.position()) - last);
    auto v = values.find(m[1].str());
    if (v == values.end()) {
      unresolved.insert(m[1].str());
      out += m.str();
    } else {
      out += v->second.is_string() ? v->second.get<std::string>() : v->second.dump();
    }
    last = static_cast<std::size_t>(m.position() + m.length());
  }
  out.append(text, last);
  node = out;
}

}  // namespace

json render_request(const BackendConfig& cfg, const std::string& prompt, std::size_t level_index) {
  if (level_index >= cfg.levels.size()) {
    throw ArgumentError("level " + std::to_string(level_index) + " out of range");
  }
  const LevelSpec& level = cfg.levels[level_index];
  json body = cfg.request_template;
  body.merge_patch(level.request_overrides);
  const std::unordered_map<std::string, json> values{
      {"prompt", prompt},
      {"model", cfg.model},
      {"level.label", level.label},
      {"level.kind", level.kind == LevelKind::Effort ? "effort" : "mode"},
      {"level.index", level_index},
  };
  std::set<std::string> unresolved;
  substitute(body, values, unresolved);
  if (!unresolved.empty()) {
    std::string names;
    for (const auto& n : unresolved) {
      if (!names.empty()) names += ", ";
      names += "{{" + n + "}}";
    }
    throw TemplateError("level '" + level.label + "': unresolved placeholders " + names);
  }
  return body;
}

// ---------------------------------------------------------------------------
// Rate limiting
// ---------------------------------------------------------------------------

RateLimiter::RateLimiter(std::size_t max_in_flight, Duration min_interval)
    : max_in_flight_(std::max<std::size_t>(1, max_in_flight)), min_interval_(min_interval) {}

RateLimiter::Permit::~Permit() {
  if (owner_ != nullptr) owner_->release();
}

RateLimiter::Permit RateLimiter::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return in_flight_ < max_in_flight_; });
  ++in_flight_;
  const auto now = std::chrono::steady_clock::now();
  const auto start = std::max(now, next_start_);
  next_start_ = start + min_interval_;
  lock.unlock();
  std::this_thread::sleep_until(start);
  return Permit(this);
}

void RateLimiter::release() {
  {
    std::lock_guard lock(mu_);
    --in_flight_;
  }
  cv_.notify_one();
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

HttpBackend::HttpBackend(BackendConfig cfg, std::vector<JudgedTask> tasks)
    : cfg_(std::move(cfg)),
      tasks_(std::move(tasks)),
      limiter_(cfg_.max_in_flight, cfg_.min_request_interval) {
  cfg_.validate();
  for (std::size_t i = 0; i < tasks_.size(); ++i) index_[tasks_[i].sample_id] = i;
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  std::regex_match(cfg_.base_url, m, url);
  scheme_host_port_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
}

std::vector<std::string> HttpBackend::sample_ids() const {
  std::vector<std::string> ids;
  for (const auto& t : tasks_) ids.push_back(t.sample_id);
  return ids;
}

json HttpBackend::send(const json& body) {
  httplib::Headers headers;
  if (!cfg_.auth_env_var.empty()) {
    const char* credential = std::getenv(cfg_.auth_env_var.c_str());
    if (credential == nullptr || *credential == '\0') {
      throw BackendError("credential variable " + cfg_.auth_env_var + " is not set");
    }
    headers.emplace(cfg_.auth_header,
                    cfg_.auth_scheme.empty() ? std::string(credential)
                                             : cfg_.auth_scheme + " " + credential);
  }
  const std::string payload = body.dump();
  const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout).count();

  std::string last_error;
  for (std::size_t attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
    {
      auto permit = limiter_.acquire();
      httplib::Client client(scheme_host_port_);
      client.set_connection_timeout(std::max<long long>(1, seconds), 0);
      client.set_read_timeout(std::max<long long>(1, seconds), 0);
      auto res = client.Post(path_, headers, payload, "application/json");
      if (res && res->status >= 200 && res->status < 300) {
        try {
          return json::parse(res->body);
        } catch (const json::exception&) {
          last_error = "response is not valid JSON";
        }
      } else if (res) {
        last_error = "HTTP status " + std::to_string(res->status);
      } else {
        last_error = "transport error: " + httplib::to_string(res.error());
      }
    }
    if (attempt < cfg_.retry.max_attempts) {
      std::this_thread::sleep_for(cfg_.retry.delay_after(attempt));
    }
  }
  throw BackendError("request failed after " + std::to_string(cfg_.retry.max_attempts) +
                     " attempts: " + last_error);
}

TrialOutcome HttpBackend::evaluate(const std::string& sample_id, std::size_t level_index,
                                   std::size_t trial_index) {
  auto it = index_.find(sample_id);
  if (it == index_.end()) throw ArgumentError("no task for sample '" + sample_id + "'");
  const JudgedTask& task = tasks_[it->second];
  const json response = send(render_request(cfg_, task.prompt, level_index));

  const auto tokens = resolve_path(response, cfg_.usage_path);
  if (!tokens || !tokens->is_number_integer() || tokens->get<std::int64_t>() <= 0) {
    throw TokenExtractionError("response has no positive integer at usage_path '" +
                               cfg_.usage_path + "'");
  }
  const auto text = resolve_path(response, cfg_.response_path);
  if (!text || !text->is_string()) {
    throw JudgeError("response has no string at response_path '" + cfg_.response_path + "'",
                     response.dump());
  }
  const double correct =
      judge_response(task, text->get<std::string>(), cfg_.levels[level_index].label, trial_index);
  return {correct, static_cast<double>(tokens->get<std::int64_t>())};
}

DryRunReport dry_run(const BackendConfig& cfg, const std::vector<JudgedTask>& tasks, bool probe) {
  DryRunReport report;
  try {
    cfg.validate();
  } catch (const Error& e) {
    report.problems.push_back(e.what());
  }
  report.usage_path_valid = valid_path(cfg.usage_path);
  report.response_path_valid = valid_path(cfg.response_path);
  if (!report.usage_path_valid) report.problems.push_back("usage_path is not a valid path");
  if (!report.response_path_valid) report.problems.push_back("response_path is not a valid path");

  const std::string prompt = tasks.empty() ? std::string("<prompt>") : tasks.front().prompt;
  for (std::size_t j = 0; j < cfg.levels.size(); ++j) {
    try {
      report.rendered.push_back(render_request(cfg, prompt, j));
    } catch (const Error& e) {
      report.rendered.push_back(nullptr);
      report.problems.push_back(e.what());
    }
  }

  if (probe && report.ok() && !report.rendered.empty()) {
    try {
      HttpBackend backend(cfg, tasks);
      report.probe_response = backend.send(report.rendered.front());
      const auto tokens = resolve_path(*report.probe_response, cfg.usage_path);
      if (!tokens || !tokens->is_number_integer() || tokens->get<std::int64_t>() <= 0) {
        report.problems.push_back("probe response has no positive integer at usage_path '" +
                                  cfg.usage_path + "'");
      }
      if (!resolve_path(*report.probe_response, cfg.response_path)) {
        report.problems.push_back("probe response has nothing at response_path '" +
                                  cfg.response_path + "'");
      }
    } catch (const Error& e) {
      report.problems.push_back(std::string("probe failed: ") + e.what());
    }
  }
  return report;
}

}  // namespace arise
