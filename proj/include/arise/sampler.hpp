#pragma once

/**
 * @file sampler.hpp
 * @brief Adaptive sampling of (sample, level) configurations.
 *
 * Each configuration is first probed with `m_min` trials. Adaptive mode then
 * keeps drawing trials while the combined coefficient of variation
 *
 *     CV = sigma_a / (mu_a + eps) + sigma_t / (mu_t + eps)
 *
 * stays at or above `tau`, stopping at exactly `m_max` trials. Fixed-budget
 * mode instead spreads a total budget `B` across configurations in
 * proportion to their probe CVs. Naive mode draws a fixed count everywhere.
 * Standard deviations are population (divisor k) deviations.
 */

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "arise/errors.hpp"
#include "arise/metric.hpp"

namespace arise {

/// One judged attempt.
struct TrialOutcome {
  double correct = 0.0;  // in [0, 1]
  double tokens = 0.0;   // > 0
};

inline constexpr double kCvEpsilon = 1e-8;

/// Running mean / population std / CV of accuracy and tokens for one configuration.
///
/// Values are a left fold (Welford) over the trials in order, so replaying the
/// same trial list reproduces them bit-for-bit.
class LevelStatistics {
 public:
  LevelStatistics() = default;

  static LevelStatistics from_trials(std::span<const TrialOutcome> trials);

  /// Folds one trial into the statistics.
  void add(const TrialOutcome& trial);

  std::size_t count() const noexcept { return count_; }
  double mean_acc() const noexcept { return mean_acc_; }
  double mean_tok() const noexcept { return mean_tok_; }
  double std_acc() const;
  double std_tok() const;
  double cv_acc() const;
  double cv_tok() const;
  double cv_combined() const;

  LevelOutcome outcome() const { return {mean_acc_, mean_tok_}; }

 private:
  std::size_t count_ = 0;
  double mean_acc_ = 0.0;
  double m2_acc_ = 0.0;
  double mean_tok_ = 0.0;
  double m2_tok_ = 0.0;
};

/// Functional form of the update step.
LevelStatistics update_statistics(LevelStatistics stats, const TrialOutcome& trial);

/// cv_acc + cv_tok. Throws StateError when no trial has been folded in.
double combined_cv(const LevelStatistics& stats);

struct ConvergenceConfig {
  std::size_t m_min = 3;
  std::size_t m_max = 10;
  double tau = 0.5;
  // Attempts per trial before a configuration fails (failed attempts do not count).
  std::size_t max_trial_attempts = 3;

  /// Throws ArgumentError unless 1 <= m_min <= m_max and tau > 0.
  void validate() const;

  bool operator==(const ConvergenceConfig&) const = default;
};

/// True iff cv_combined >= tau and count < m_max.
/// Throws StateError when called before the m_min probe trials are in.
bool should_continue(const LevelStatistics& stats, const ConvergenceConfig& cfg);

/// Abstract model under evaluation. Implementations must be safe to call from
/// several threads at once; calls for the same (sample, level) are independent draws.
class EvaluationBackend {
 public:
  virtual ~EvaluationBackend() = default;
  virtual TrialOutcome evaluate(const std::string& sample_id, std::size_t level_index,
                                std::size_t trial_index) = 0;
};

/// Receives every completed trial, in per-configuration order.
using TrialObserver = std::function<void(const std::string& sample_id, std::size_t level_index,
                                         std::size_t trial_index, const TrialOutcome& outcome)>;

struct ConfigurationResult {
  std::string sample_id;
  std::size_t level_index = 0;
  std::vector<TrialOutcome> trials;
  LevelStatistics stats;
  bool converged = false;            // final cv_combined < tau
  bool zero_variance_probe = false;  // the m_min probe trials had zero combined CV

  std::size_t k_star() const noexcept { return trials.size(); }
  LevelOutcome final_outcome() const { return stats.outcome(); }
};

/// Backend kept failing on one configuration. Carries what was collected.
class ConfigurationError : public Error {
 public:
  ConfigurationError(const std::string& message, ConfigurationResult partial)
      : Error(message), partial_(std::move(partial)) {}
  const ConfigurationResult& partial() const noexcept { return partial_; }

 private:
  ConfigurationResult partial_;
};

/// Flags derived from a finished trial list. Shared by live runs and offline recompute.
ConfigurationResult summarize_configuration(std::string sample_id, std::size_t level_index,
                                            std::vector<TrialOutcome> trials,
                                            const ConvergenceConfig& cfg);

/// Draws one trial, retrying failed attempts up to cfg.max_trial_attempts.
TrialOutcome draw_trial(EvaluationBackend& backend, const std::string& sample_id,
                        std::size_t level_index, std::size_t trial_index,
                        const ConvergenceConfig& cfg);

/// Probe with m_min trials, then continue while should_continue holds.
///
/// `prior` holds trials already collected for this configuration (resume); they
/// are replayed before any new trial is requested.
ConfigurationResult run_configuration(EvaluationBackend& backend, const std::string& sample_id,
                                      std::size_t level_index, const ConvergenceConfig& cfg,
                                      std::span<const TrialOutcome> prior = {},
                                      const TrialObserver& observer = {});

struct ConfigKey {
  std::size_t sample = 0;
  std::size_t level = 0;
  auto operator<=>(const ConfigKey&) const = default;
};

struct BudgetPlan {
  long long total_budget = 0;
  std::map<ConfigKey, std::size_t> allocations;

  long long allocated() const;
};

/// Variance-proportional split of a fixed budget:
///
///     m = m_min + floor((B - n*J*m_min) * CV / sum(CV))
///
/// Trials lost to flooring go one at a time to configurations in descending CV
/// order (ties by sample, then level). When every CV is zero the remainder is
/// split uniformly. Throws InfeasibleBudgetError when B < n*J*m_min.
BudgetPlan allocate_budget(const std::map<ConfigKey, double>& probe_cvs, std::size_t n,
                           std::size_t levels, const ConvergenceConfig& cfg, long long budget);

struct AdaptiveMode {};
struct FixedBudgetMode {
  long long budget = 0;
};
struct NaiveMode {
  std::size_t trials = 1;
};
using SamplingMode = std::variant<AdaptiveMode, FixedBudgetMode, NaiveMode>;

/// "adaptive", "fixed_budget" or "naive".
std::string mode_name(const SamplingMode& mode);

/// Default fixed budget: 5 trials per configuration on average.
inline long long default_budget(std::size_t n, std::size_t levels) {
  return 5LL * static_cast<long long>(n) * static_cast<long long>(levels);
}

struct RunOptions {
  std::size_t threads = 1;
  TrialObserver observer;
  // Trials already on record per configuration (resume).
  std::map<ConfigKey, std::vector<TrialOutcome>> prior;
};

struct EvaluationResult {
  std::vector<SampleTrajectory> trajectories;
  // Row-major by (sample, level).
  std::vector<ConfigurationResult> configurations;

  std::size_t total_trials() const;
  std::size_t unconverged() const;
};

/// A configuration failed; the run stops. `completed` lists finished configurations.
class RunAbortedError : public Error {
 public:
  RunAbortedError(const std::string& message, std::vector<ConfigurationResult> completed)
      : Error(message), completed_(std::move(completed)) {}
  const std::vector<ConfigurationResult>& completed() const noexcept { return completed_; }

 private:
  std::vector<ConfigurationResult> completed_;
};

EvaluationResult run_evaluation(EvaluationBackend& backend, std::span<const std::string> samples,
                                std::size_t levels, const ConvergenceConfig& cfg,
                                const SamplingMode& mode, const RunOptions& options = {});

/// Builds trajectories from finished configurations (row-major by sample, level).
std::vector<SampleTrajectory> trajectories_from(std::span<const ConfigurationResult> configs,
                                                std::span<const std::string> samples,
                                                std::size_t levels);

}  // namespace arise
