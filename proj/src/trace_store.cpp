#include "arise/trace_store.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>

#include <fmt/format.h>
#include <unistd.h>

#include "arise/document.hpp"
#include "arise/errors.hpp"

namespace arise {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Trial records
// ---------------------------------------------------------------------------

void validate_record(const TrialRecordLine& r) {
  static const std::regex rfc3339(
      R"(^\d{4}-\d{2}-\d{2}[Tt]\d{2}:\d{2}:\d{2}(\.\d+)?([Zz]|[+-]\d{2}:\d{2})$)");
  if (r.run_id.empty()) throw ValidationError("run_id", "must be non-empty");
  if (r.sample_id.empty()) throw ValidationError("sample_id", "must be non-empty");
  if (!(r.correct >= 0.0 && r.correct <= 1.0)) {
    throw ValidationError("correct", "must lie in [0, 1]");
  }
  if (r.completion_tokens <= 0) throw ValidationError("completion_tokens", "must be > 0");
  if (!std::regex_match(r.timestamp, rfc3339)) {
    throw ValidationError("timestamp", "not an RFC 3339 timestamp: '" + r.timestamp + "'");
  }
  if (!r.meta.is_object()) throw ValidationError("meta", "must be a JSON object");
}

json record_to_json(const TrialRecordLine& r) {
  // Insertion order matches the field order of the record.
  json j = json::object();
  j["run_id"] = r.run_id;
  j["model"] = r.model;
  j["sample_id"] = r.sample_id;
  j["level_index"] = r.level_index;
  j["level_label"] = r.level_label;
  j["trial_index"] = r.trial_index;
  j["correct"] = r.correct;
  j["completion_tokens"] = r.completion_tokens;
  j["timestamp"] = r.timestamp;
  j["meta"] = r.meta;
  return j;
}

namespace {

const json& field(const json& j, const char* name) {
  if (!j.is_object()) throw ValidationError("record", "expected a JSON object");
  auto it = j.find(name);
  if (it == j.end()) throw ValidationError(name, "missing");
  return *it;
}

std::string string_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_string()) throw ValidationError(name, "expected a string");
  return v.get<std::string>();
}

std::size_t index_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ValidationError(name, "expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

TrialRecordLine record_from_json(const json& j) {
  TrialRecordLine r;
  r.run_id = string_field(j, "run_id");
  r.model = string_field(j, "model");
  r.sample_id = string_field(j, "sample_id");
  r.level_index = index_field(j, "level_index");
  r.level_label = string_field(j, "level_label");
  r.trial_index = index_field(j, "trial_index");
  const json& correct = field(j, "correct");
  if (!correct.is_number()) throw ValidationError("correct", "expected a number");
  r.correct = correct.get<double>();
  const json& tokens = field(j, "completion_tokens");
  if (tokens.is_number_integer()) {
    r.completion_tokens = tokens.get<std::int64_t>();
  } else if (tokens.is_number_float() && std::floor(tokens.get<double>()) == tokens.get<double>()) {
    r.completion_tokens = static_cast<std::int64_t>(tokens.get<double>());
  } else {
    throw ValidationError("completion_tokens", "expected an integer");
  }
  r.timestamp = string_field(j, "timestamp");
  auto meta = j.find("meta");
  r.meta = meta == j.end() || meta->is_null() ? json::object() : *meta;
  validate_record(r);
  return r;
}

std::string serialize_record(const TrialRecordLine& r) { return record_to_json(r).dump(); }

TrialRecordLine parse_record(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ValidationError("record", std::string("malformed JSON line: ") + e.what());
  }
  return record_from_json(j);
}

std::string rfc3339_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

json manifest_to_json(const RunManifest& m) {
  json j = json::object();
  j["run_id"] = m.run_id;
  j["mode"] = m.mode;
  j["cfg"] = {{"m_min", m.cfg.m_min},
              {"m_max", m.cfg.m_max},
              {"tau", m.cfg.tau},
              {"max_trial_attempts", m.cfg.max_trial_attempts}};
  if (m.budget) j["budget"] = *m.budget;
  if (m.naive_trials) j["naive_trials"] = *m.naive_trials;
  if (m.seed) j["seed"] = *m.seed;
  j["levels"] = m.levels;
  j["n_samples"] = m.n_samples;
  j["sample_ids"] = m.sample_ids;
  j["model"] = m.model;
  j["benchmark"] = m.benchmark;
  j["started_at"] = m.started_at;
  j["status"] = m.status;
  return j;
}

RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  try {
    m.run_id = j.at("run_id").get<std::string>();
    m.mode = j.at("mode").get<std::string>();
    const json& cfg = j.at("cfg");
    m.cfg.m_min = cfg.at("m_min").get<std::size_t>();
    m.cfg.m_max = cfg.at("m_max").get<std::size_t>();
    m.cfg.tau = cfg.at("tau").get<double>();
    m.cfg.max_trial_attempts = cfg.value("max_trial_attempts", m.cfg.max_trial_attempts);
    if (j.contains("budget") && !j["budget"].is_null()) m.budget = j["budget"].get<long long>();
    if (j.contains("naive_trials") && !j["naive_trials"].is_null()) {
      m.naive_trials = j["naive_trials"].get<std::size_t>();
    }
    if (j.contains("seed") && !j["seed"].is_null()) m.seed = j["seed"].get<std::uint64_t>();
    m.levels = j.at("levels").get<std::vector<std::string>>();
    m.n_samples = j.at("n_samples").get<std::size_t>();
    m.sample_ids = j.value("sample_ids", std::vector<std::string>{});
    m.model = j.value("model", std::string{});
    m.benchmark = j.value("benchmark", std::string{});
    m.started_at = j.value("started_at", std::string{});
    m.status = j.value("status", std::string{"running"});
  } catch (const json::exception& e) {
    throw ValidationError("manifest", e.what());
  }
  if (!m.sample_ids.empty() && m.sample_ids.size() != m.n_samples) {
    throw ValidationError("n_samples", "does not match the number of sample_ids");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Appender
// ---------------------------------------------------------------------------

TrialAppender::TrialAppender(const fs::path& trials_file) {
  if (fs::exists(trials_file)) {
    std::ifstream in(trials_file);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const TrialRecordLine r = parse_record(line);
      keys_.emplace(r.run_id, r.sample_id, r.level_index, r.trial_index);
    }
  }
  file_ = std::fopen(trials_file.c_str(), "a");
  if (file_ == nullptr) throw Error("cannot open '" + trials_file.string() + "' for append");
}

TrialAppender::~TrialAppender() {
  if (file_ != nullptr) std::fclose(file_);
}

void TrialAppender::append_trial(const TrialRecordLine& record) {
  validate_record(record);
  const std::string line = serialize_record(record) + "\n";
  std::lock_guard lock(mu_);
  Key key{record.run_id, record.sample_id, record.level_index, record.trial_index};
  if (keys_.contains(key)) {
    throw ConflictError("duplicate trial (" + record.run_id + ", " + record.sample_id + ", " +
                        std::to_string(record.level_index) + ", " +
                        std::to_string(record.trial_index) + ")");
  }
  if (std::fputs(line.c_str(), file_) < 0 || std::fflush(file_) != 0) {
    throw Error("failed to append trial record");
  }
  ::fsync(::fileno(file_));
  keys_.insert(std::move(key));
}

// ---------------------------------------------------------------------------
// Bundles
// ---------------------------------------------------------------------------

std::size_t ResultBundle::unconverged() const {
  return static_cast<std::size_t>(std::count_if(configurations.begin(), configurations.end(),
                                                [](const auto& c) { return !c.converged; }));
}

ResultBundle make_bundle(const RunManifest& manifest,
                         std::span<const ConfigurationResult> configurations) {
  const std::size_t levels = manifest.levels.size();
  const std::vector<std::string>& ids = manifest.sample_ids;
  const auto trajectories = trajectories_from(configurations, ids, levels);

  ResultBundle b;
  b.manifest = manifest;
  for (const auto& t : trajectories) {
    const SampleScore s = arise_sample(t);
    b.samples.push_back({t.sample_id, s.score, s.diagnostics});
  }
  b.aggregate_arise = arise_aggregate(trajectories);

  // Curve points are kept even when the metric is undefined.
  for (std::size_t j = 0; j < levels; ++j) {
    double tokens = 0.0;
    double accuracy = 0.0;
    for (const auto& t : trajectories) {
      tokens += t.levels[j].tokens;
      accuracy += t.levels[j].accuracy;
    }
    const double n = static_cast<double>(trajectories.size());
    b.curve.push_back({tokens / n, accuracy / n});
  }
  try {
    b.scaling_metric = scaling_metric(build_scaling_curve(trajectories));
  } catch (const CurveError& e) {
    b.curve_error = e.what();
  }

  for (const auto& c : configurations) {
    b.configurations.push_back({c.sample_id, c.level_index, c.k_star(), c.stats.mean_acc(),
                                c.stats.mean_tok(), c.stats.cv_combined(), c.converged,
                                c.zero_variance_probe});
  }
  for (std::size_t j = 0; j + 1 < levels; ++j) {
    b.transitions.push_back(transition_matrix(trajectories, j));
  }
  return b;
}

json bundle_to_json(const ResultBundle& b) {
  json j = json::object();
  j["manifest"] = manifest_to_json(b.manifest);
  j["aggregate_arise"] = b.aggregate_arise;
  j["scaling_metric"] = b.scaling_metric ? json(*b.scaling_metric) : json(nullptr);
  if (!b.curve_error.empty()) j["curve_error"] = b.curve_error;
  j["unconverged_count"] = b.unconverged();

  json samples = json::array();
  for (const auto& s : b.samples) {
    samples.push_back({{"sample_id", s.sample_id},
                       {"arise", s.arise},
                       {"non_monotone_tokens", s.diagnostics.non_monotone_tokens},
                       {"improve", s.diagnostics.transitions.improve},
                       {"degrade", s.diagnostics.transitions.degrade},
                       {"unchanged", s.diagnostics.transitions.unchanged}});
  }
  j["samples"] = std::move(samples);

  json curve = json::array();
  for (std::size_t i = 0; i < b.curve.size(); ++i) {
    curve.push_back({{"level_index", i},
                     {"level_label", i < b.manifest.levels.size() ? b.manifest.levels[i] : ""},
                     {"mean_tokens", b.curve[i].mean_tokens},
                     {"mean_accuracy", b.curve[i].mean_accuracy}});
  }
  j["scaling_curve"] = std::move(curve);

  json configs = json::array();
  for (const auto& c : b.configurations) {
    configs.push_back({{"sample_id", c.sample_id},
                       {"level_index", c.level_index},
                       {"k_star", c.k_star},
                       {"mean_accuracy", c.mean_accuracy},
                       {"mean_tokens", c.mean_tokens},
                       {"cv_combined", c.cv_combined},
                       {"converged", c.converged},
                       {"zero_variance_probe", c.zero_variance_probe}});
  }
  j["configurations"] = std::move(configs);

  json transitions = json::array();
  for (const auto& t : b.transitions) {
    transitions.push_back({{"from_level", t.from_level},
                           {"to_level", t.from_level + 1},
                           {"stay_correct", t.stay_correct},
                           {"degrade", t.degrade},
                           {"improve", t.improve},
                           {"stay_incorrect", t.stay_incorrect}});
  }
  j["transition_matrices"] = std::move(transitions);
  return j;
}

ResultBundle bundle_from_json(const json& j) {
  ResultBundle b;
  try {
    b.manifest = manifest_from_json(j.at("manifest"));
    b.aggregate_arise = j.at("aggregate_arise").get<double>();
    if (!j.at("scaling_metric").is_null()) b.scaling_metric = j["scaling_metric"].get<double>();
    b.curve_error = j.value("curve_error", std::string{});
    for (const auto& s : j.at("samples")) {
      SampleReport r;
      r.sample_id = s.at("sample_id").get<std::string>();
      r.arise = s.at("arise").get<double>();
      r.diagnostics.non_monotone_tokens = s.at("non_monotone_tokens").get<bool>();
      r.diagnostics.transitions = {s.at("improve").get<std::size_t>(),
                                   s.at("degrade").get<std::size_t>(),
                                   s.at("unchanged").get<std::size_t>()};
      b.samples.push_back(std::move(r));
    }
    for (const auto& p : j.at("scaling_curve")) {
      b.curve.push_back({p.at("mean_tokens").get<double>(), p.at("mean_accuracy").get<double>()});
    }
    for (const auto& c : j.at("configurations")) {
      b.configurations.push_back(
          {c.at("sample_id").get<std::string>(), c.at("level_index").get<std::size_t>(),
           c.at("k_star").get<std::size_t>(), c.at("mean_accuracy").get<double>(),
           c.at("mean_tokens").get<double>(), c.at("cv_combined").get<double>(),
           c.at("converged").get<bool>(), c.at("zero_variance_probe").get<bool>()});
    }
    for (const auto& t : j.at("transition_matrices")) {
      TransitionMatrix m;
      m.from_level = t.at("from_level").get<std::size_t>();
      m.stay_correct = t.at("stay_correct").get<std::size_t>();
      m.degrade = t.at("degrade").get<std::size_t>();
      m.improve = t.at("improve").get<std::size_t>();
      m.stay_incorrect = t.at("stay_incorrect").get<std::size_t>();
      b.transitions.push_back(m);
    }
  } catch (const json::exception& e) {
    throw ValidationError("bundle", e.what());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Reading runs
// ---------------------------------------------------------------------------

namespace {

std::vector<TrialRecordLine> read_records(const fs::path& file) {
  std::vector<TrialRecordLine> out;
  std::ifstream in(file);
  if (!in) throw ValidationError("traces", "cannot open '" + file.string() + "'");
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const ValidationError& e) {
      throw ValidationError(e.field(), "line " + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

RunManifest infer_manifest(const std::vector<TrialRecordLine>& records) {
  if (records.empty()) throw IncompleteRunError("run has no trial records", {});
  RunManifest m;
  m.run_id = records.front().run_id;
  m.mode = "imported";
  m.model = records.front().model;
  m.status = "complete";
  std::size_t levels = 0;
  std::map<std::size_t, std::string> labels;
  for (const auto& r : records) {
    if (r.run_id != m.run_id) {
      throw ValidationError("run_id", "trace file mixes runs '" + m.run_id + "' and '" +
                                          r.run_id + "'; add a manifest to select one");
    }
    if (std::find(m.sample_ids.begin(), m.sample_ids.end(), r.sample_id) == m.sample_ids.end()) {
      m.sample_ids.push_back(r.sample_id);
    }
    levels = std::max(levels, r.level_index + 1);
    labels.emplace(r.level_index, r.level_label);
  }
  for (std::size_t j = 0; j < levels; ++j) {
    auto it = labels.find(j);
    m.levels.push_back(it != labels.end() ? it->second : "level-" + std::to_string(j));
  }
  m.n_samples = m.sample_ids.size();
  return m;
}

}  // namespace

RunData read_run(const fs::path& path) {
  fs::path trials = path;
  fs::path manifest;
  if (fs::is_directory(path)) {
    trials = path / "trials.jsonl";
    manifest = path / "manifest.json";
    if (!fs::exists(trials) && fs::exists(manifest)) {
      RunData run{manifest_from_json(load_document(manifest)), {}};
      return run;
    }
  } else {
    manifest = path.parent_path() / "manifest.json";
  }
  RunData run;
  run.records = read_records(trials);
  if (fs::exists(manifest)) {
    run.manifest = manifest_from_json(load_document(manifest));
  } else {
    run.manifest = infer_manifest(run.records);
  }
  return run;
}

std::vector<ConfigurationResult> configurations_of(const RunData& run) {
  const RunManifest& m = run.manifest;
  const std::size_t levels = m.levels.size();
  if (m.sample_ids.empty()) {
    throw IncompleteRunError("run '" + m.run_id + "' lists no samples", {});
  }
  if (levels < 2) throw ValidationError("levels", "a run needs at least 2 scaling levels");

  std::map<std::string, std::size_t> sample_index;
  for (std::size_t i = 0; i < m.sample_ids.size(); ++i) sample_index[m.sample_ids[i]] = i;

  std::vector<std::vector<std::pair<std::size_t, TrialOutcome>>> grouped(m.sample_ids.size() *
                                                                          levels);
  for (const auto& r : run.records) {
    if (r.run_id != m.run_id) continue;
    auto it = sample_index.find(r.sample_id);
    if (it == sample_index.end()) {
      throw ValidationError("sample_id", "'" + r.sample_id + "' is not part of run '" +
                                             m.run_id + "'");
    }
    if (r.level_index >= levels) {
      throw ValidationError("level_index", std::to_string(r.level_index) + " out of range");
    }
    grouped[it->second * levels + r.level_index].emplace_back(
        r.trial_index, TrialOutcome{r.correct, static_cast<double>(r.completion_tokens)});
  }

  std::vector<ConfigurationGap> gaps;
  std::vector<ConfigurationResult> out;
  out.reserve(grouped.size());
  for (std::size_t idx = 0; idx < grouped.size(); ++idx) {
    auto& g = grouped[idx];
    const std::string& sample = m.sample_ids[idx / levels];
    const std::size_t level = idx % levels;
    if (g.empty()) {
      gaps.push_back({sample, level});
      continue;
    }
    std::sort(g.begin(), g.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<TrialOutcome> trials;
    trials.reserve(g.size());
    for (const auto& [k, t] : g) trials.push_back(t);
    out.push_back(summarize_configuration(sample, level, std::move(trials), m.cfg));
  }
  if (!gaps.empty()) {
    std::string list;
    for (const auto& gap : gaps) {
      if (!list.empty()) list += ", ";
      list += "(" + gap.sample_id + ", " + std::to_string(gap.level_index) + ")";
    }
    throw IncompleteRunError("run '" + m.run_id + "' is missing configurations: " + list,
                             std::move(gaps));
  }
  return out;
}

std::vector<SampleTrajectory> load_trajectories(const RunData& run) {
  const auto configs = configurations_of(run);
  return trajectories_from(configs, run.manifest.sample_ids, run.manifest.levels.size());
}

ResultBundle recompute(const RunData& run) {
  const auto configs = configurations_of(run);
  return make_bundle(run.manifest, configs);
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

TraceStore::TraceStore(fs::path root) : root_(std::move(root)) {}

fs::path TraceStore::run_dir(const std::string& run_id) const { return root_ / run_id; }
fs::path TraceStore::trials_path(const std::string& run_id) const {
  return run_dir(run_id) / "trials.jsonl";
}
fs::path TraceStore::manifest_path(const std::string& run_id) const {
  return run_dir(run_id) / "manifest.json";
}
fs::path TraceStore::bundle_path(const std::string& run_id) const {
  return run_dir(run_id) / "bundle.json";
}

bool TraceStore::has_manifest(const std::string& run_id) const {
  return fs::exists(manifest_path(run_id));
}

void TraceStore::write_manifest(const RunManifest& manifest) const {
  fs::create_directories(run_dir(manifest.run_id));
  write_file_atomically(manifest_path(manifest.run_id), manifest_to_json(manifest).dump(2) + "\n");
}

RunManifest TraceStore::read_manifest(const std::string& run_id) const {
  return manifest_from_json(load_document(manifest_path(run_id)));
}

std::unique_ptr<TrialAppender> TraceStore::open_appender(const std::string& run_id) const {
  fs::create_directories(run_dir(run_id));
  return std::make_unique<TrialAppender>(trials_path(run_id));
}

RunData TraceStore::read(const std::string& run_id) const {
  if (!fs::exists(run_dir(run_id))) {
    throw IncompleteRunError("run '" + run_id + "' does not exist", {});
  }
  return read_run(run_dir(run_id));
}

std::vector<SampleTrajectory> TraceStore::load_trajectories(const std::string& run_id) const {
  return arise::load_trajectories(read(run_id));
}

ResultBundle TraceStore::recompute(const std::string& run_id) const {
  return arise::recompute(read(run_id));
}

// ---------------------------------------------------------------------------
// CSV exports
// ---------------------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string results_csv(std::span<const ResultBundle> bundles) {
  std::string out = "model,benchmark,arise,scaling_metric,n_samples,levels\n";
  for (const auto& b : bundles) {
    std::string levels;
    for (const auto& l : b.manifest.levels) {
      if (!levels.empty()) levels += ';';
      levels += l;
    }
    out += fmt::format("{},{},{:.6f},{},{},{}\n", csv_field(b.manifest.model),
                       csv_field(b.manifest.benchmark), b.aggregate_arise,
                       b.scaling_metric ? fmt::format("{:.6f}", *b.scaling_metric) : "",
                       b.samples.size(), csv_field(levels));
  }
  return out;
}

std::string scaling_curve_csv(const ResultBundle& b) {
  std::string out = "level_index,level_label,mean_tokens,mean_accuracy\n";
  for (std::size_t j = 0; j < b.curve.size(); ++j) {
    const std::string label = j < b.manifest.levels.size() ? b.manifest.levels[j] : "";
    out += fmt::format("{},{},{:.17g},{:.17g}\n", j, csv_field(label), b.curve[j].mean_tokens,
                       b.curve[j].mean_accuracy);
  }
  return out;
}

}  // namespace arise
