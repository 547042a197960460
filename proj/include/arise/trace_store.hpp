#pragma once

/**
 * @file trace_store.hpp
 * @brief Append-only persistence of trial records, run manifests and result bundles.
 *
 * A store is a directory with one subdirectory per run:
 *
 *     <root>/<run_id>/manifest.json   run manifest (sidecar)
 *     <root>/<run_id>/trials.jsonl    one TrialRecordLine per line
 *     <root>/<run_id>/bundle.json     result bundle written at the end of a run
 *
 * Everything in a bundle is recomputable from the trial lines plus the manifest.
 */

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "arise/metric.hpp"
#include "arise/sampler.hpp"

namespace arise {

struct TrialRecordLine {
  std::string run_id;
  std::string model;
  std::string sample_id;
  std::size_t level_index = 0;
  std::string level_label;
  std::size_t trial_index = 0;
  double correct = 0.0;
  std::int64_t completion_tokens = 0;
  std::string timestamp;  // RFC 3339
  nlohmann::json meta = nlohmann::json::object();

  bool operator==(const TrialRecordLine&) const = default;
};

/// Throws ValidationError naming the first offending field.
void validate_record(const TrialRecordLine& record);
nlohmann::json record_to_json(const TrialRecordLine& record);
TrialRecordLine record_from_json(const nlohmann::json& j);
/// Single JSON line without the trailing newline.
std::string serialize_record(const TrialRecordLine& record);
TrialRecordLine parse_record(const std::string& line);

/// Current UTC time, e.g. 2026-10-16T09:30:00Z.
std::string rfc3339_now();

struct RunManifest {
  std::string run_id;
  std::string mode = "adaptive";  // adaptive | fixed_budget | naive
  ConvergenceConfig cfg;
  std::optional<long long> budget;
  std::optional<std::size_t> naive_trials;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> levels;  // labels; position is the level index
  std::size_t n_samples = 0;
  std::vector<std::string> sample_ids;
  std::string model;
  std::string benchmark;
  std::string started_at;
  std::string status = "running";  // running | complete | aborted

  bool operator==(const RunManifest&) const = default;
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

/// Serialized append handle for one run's trial file.
///
/// Each append is flushed and fsync'ed before returning. Existing keys are
/// loaded on open so resumed runs cannot duplicate a trial.
class TrialAppender {
 public:
  explicit TrialAppender(const std::filesystem::path& trials_file);
  ~TrialAppender();
  TrialAppender(const TrialAppender&) = delete;
  TrialAppender& operator=(const TrialAppender&) = delete;

  /// Throws ValidationError for a malformed record, ConflictError for a duplicate key.
  void append_trial(const TrialRecordLine& record);

 private:
  using Key = std::tuple<std::string, std::string, std::size_t, std::size_t>;
  std::mutex mu_;
  std::FILE* file_ = nullptr;
  std::set<Key> keys_;
};

/// Finished-run view of one (sample, level) configuration.
struct ConfigurationReport {
  std::string sample_id;
  std::size_t level_index = 0;
  std::size_t k_star = 0;
  double mean_accuracy = 0.0;
  double mean_tokens = 0.0;
  double cv_combined = 0.0;
  bool converged = false;
  bool zero_variance_probe = false;

  bool operator==(const ConfigurationReport&) const = default;
};

struct SampleReport {
  std::string sample_id;
  double arise = 0.0;
  TrajectoryDiagnostics diagnostics;

  bool operator==(const SampleReport& o) const {
    return sample_id == o.sample_id && arise == o.arise &&
           diagnostics.non_monotone_tokens == o.diagnostics.non_monotone_tokens &&
           diagnostics.transitions.improve == o.diagnostics.transitions.improve &&
           diagnostics.transitions.degrade == o.diagnostics.transitions.degrade &&
           diagnostics.transitions.unchanged == o.diagnostics.transitions.unchanged;
  }
};

struct ResultBundle {
  RunManifest manifest;
  std::vector<SampleReport> samples;
  double aggregate_arise = 0.0;
  std::vector<CurvePoint> curve;
  // Empty when the curve has tied token coordinates; curve_error says why.
  std::optional<double> scaling_metric;
  std::string curve_error;
  std::vector<ConfigurationReport> configurations;
  std::vector<TransitionMatrix> transitions;

  std::size_t unconverged() const;
};

/// Scores finished configurations (row-major by manifest sample order, level).
ResultBundle make_bundle(const RunManifest& manifest,
                         std::span<const ConfigurationResult> configurations);

nlohmann::json bundle_to_json(const ResultBundle& bundle);
ResultBundle bundle_from_json(const nlohmann::json& j);

/// Trial file plus its manifest (inferred from the records when no sidecar exists).
struct RunData {
  RunManifest manifest;
  std::vector<TrialRecordLine> records;
};

/// Reads a run directory, or a trials JSONL file with an optional sibling manifest.json.
RunData read_run(const std::filesystem::path& path);

/// Groups trials by configuration in manifest order, each sorted by trial index.
/// Throws IncompleteRunError listing every configuration without trials.
std::vector<ConfigurationResult> configurations_of(const RunData& run);

std::vector<SampleTrajectory> load_trajectories(const RunData& run);
ResultBundle recompute(const RunData& run);

class TraceStore {
 public:
  explicit TraceStore(std::filesystem::path root);

  std::filesystem::path run_dir(const std::string& run_id) const;
  std::filesystem::path trials_path(const std::string& run_id) const;
  std::filesystem::path manifest_path(const std::string& run_id) const;
  std::filesystem::path bundle_path(const std::string& run_id) const;

  bool has_manifest(const std::string& run_id) const;
  void write_manifest(const RunManifest& manifest) const;
  RunManifest read_manifest(const std::string& run_id) const;

  std::unique_ptr<TrialAppender> open_appender(const std::string& run_id) const;
  RunData read(const std::string& run_id) const;

  std::vector<SampleTrajectory> load_trajectories(const std::string& run_id) const;
  ResultBundle recompute(const std::string& run_id) const;

 private:
  std::filesystem::path root_;
};

/// Columns: model,benchmark,arise,scaling_metric,n_samples,levels
std::string results_csv(std::span<const ResultBundle> bundles);
/// Columns: level_index,level_label,mean_tokens,mean_accuracy
std::string scaling_curve_csv(const ResultBundle& bundle);

}  // namespace arise
