#pragma once

/**
 * @file simulator.hpp
 * @brief Seeded stochastic stand-in for a reasoning model.
 *
 * Every (sample, level) has a Bernoulli success probability and a log-normal
 * completion-token distribution. Draws come from a counter-based stream keyed by
 * (seed, sample_id, level_index, trial_index), so results do not depend on call
 * order, threading or resumption.
 */

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "arise/metric.hpp"
#include "arise/sampler.hpp"

namespace arise {

struct SyntheticLevel {
  double p_correct = 0.0;
  double token_log_mean = 0.0;
  double token_log_std = 0.0;
};

struct SyntheticSample {
  std::string id;
  std::vector<SyntheticLevel> levels;
};

struct SyntheticModelSpec {
  std::uint64_t seed = 0;
  std::vector<SyntheticSample> samples;

  /// Throws ValidationError on out-of-range parameters, ragged level counts or duplicate ids.
  void validate() const;
  std::size_t level_count() const { return samples.empty() ? 0 : samples.front().levels.size(); }
  std::vector<std::string> sample_ids() const;
};

/// {seed, samples: [{id, levels: [{p_correct, token_log_mean, token_log_std}]}]}
SyntheticModelSpec spec_from_json(const nlohmann::json& j);
nlohmann::json spec_to_json(const SyntheticModelSpec& spec);
/// Reads JSON, or YAML when the extension is .yaml/.yml.
SyntheticModelSpec load_spec(const std::filesystem::path& path);

/// Closed-form expectations of a spec, as trajectories.
struct GroundTruthTrajectory {
  std::vector<SampleTrajectory> samples;
};

GroundTruthTrajectory ground_truth(const SyntheticModelSpec& spec);

/// Uniform in [0, 1) derived from the key. Exposed for the stream-independence check.
double keyed_uniform(std::uint64_t seed, const std::string& sample_id, std::size_t level_index,
                     std::size_t trial_index, std::uint32_t stream);

/// Backend drawing trials from a SyntheticModelSpec. Stateless after construction.
class ModelSimulator final : public EvaluationBackend {
 public:
  explicit ModelSimulator(SyntheticModelSpec spec);

  /// Tokens are rounded to the nearest integer count (at least 1).
  TrialOutcome evaluate(const std::string& sample_id, std::size_t level_index,
                        std::size_t trial_index) override;

  const SyntheticModelSpec& spec() const noexcept { return spec_; }

 private:
  SyntheticModelSpec spec_;
  std::unordered_map<std::string, std::size_t> index_;
};

TrialOutcome simulate_trial(const SyntheticModelSpec& spec, const std::string& sample_id,
                            std::size_t level_index, std::size_t trial_index);

/// Summary of one metric across replicated runs (population std, CV = std / |mean|).
struct Dispersion {
  double mean = 0.0;
  double std = 0.0;
  double cv = 0.0;
};

Dispersion dispersion(std::span<const double> values);

/// A sampling mode together with the convergence settings it runs under.
struct StudyMode {
  std::string name;
  SamplingMode mode;
  ConvergenceConfig cfg;
};

struct ReplicateRun {
  std::uint64_t seed = 0;
  double arise = 0.0;
  double scaling_metric = 0.0;
  std::size_t total_trials = 0;
  std::size_t unconverged = 0;
};

struct ModeSummary {
  std::string name;
  std::vector<ReplicateRun> runs;
  Dispersion arise;
  Dispersion scaling_metric;
  double mean_total_trials = 0.0;
  double mean_unconverged = 0.0;
};

/// Seed of replicate r. Shared across modes so strategies are compared on common draws.
std::uint64_t replicate_seed(std::uint64_t base_seed, std::size_t replicate);

/// R independent full runs per mode; replicate r uses replicate_seed(spec.seed, r).
std::vector<ModeSummary> replicate_study(const SyntheticModelSpec& spec,
                                         std::span<const StudyMode> modes,
                                         std::size_t replications, std::size_t threads = 1);

}  // namespace arise
