#include "arise/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace arise {

LevelStatistics LevelStatistics::from_trials(std::span<const TrialOutcome> trials) {
  LevelStatistics s;
  for (const auto& t : trials) s.add(t);
  return s;
}

void LevelStatistics::add(const TrialOutcome& trial) {
  ++count_;
  const double k = static_cast<double>(count_);

  const double da = trial.correct - mean_acc_;
  mean_acc_ += da / k;
  m2_acc_ += da * (trial.correct - mean_acc_);

  const double dt = trial.tokens - mean_tok_;
  mean_tok_ += dt / k;
  m2_tok_ += dt * (trial.tokens - mean_tok_);
}

double LevelStatistics::std_acc() const {
  if (count_ == 0) return 0.0;
  return std::sqrt(std::max(0.0, m2_acc_) / static_cast<double>(count_));
}

double LevelStatistics::std_tok() const {
  if (count_ == 0) return 0.0;
  return std::sqrt(std::max(0.0, m2_tok_) / static_cast<double>(count_));
}

double LevelStatistics::cv_acc() const { return std_acc() / (mean_acc_ + kCvEpsilon); }
double LevelStatistics::cv_tok() const { return std_tok() / (mean_tok_ + kCvEpsilon); }
double LevelStatistics::cv_combined() const { return cv_acc() + cv_tok(); }

LevelStatistics update_statistics(LevelStatistics stats, const TrialOutcome& trial) {
  stats.add(trial);
  return stats;
}

double combined_cv(const LevelStatistics& stats) {
  if (stats.count() == 0) throw StateError("combined_cv: no trials folded in yet");
  return stats.cv_combined();
}

void ConvergenceConfig::validate() const {
  if (m_min < 1) throw ArgumentError("m_min must be >= 1");
  if (m_max < m_min) {
    throw ArgumentError("m_max (" + std::to_string(m_max) + ") must be >= m_min (" +
                        std::to_string(m_min) + ")");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ArgumentError("tau must be positive");
  if (max_trial_attempts < 1) throw ArgumentError("max_trial_attempts must be >= 1");
}

bool should_continue(const LevelStatistics& stats, const ConvergenceConfig& cfg) {
  if (stats.count() < cfg.m_min) {
    throw StateError("should_continue: probing incomplete (" + std::to_string(stats.count()) +
                     " of " + std::to_string(cfg.m_min) + " trials)");
  }
  return stats.cv_combined() >= cfg.tau && stats.count() < cfg.m_max;
}

ConfigurationResult summarize_configuration(std::string sample_id, std::size_t level_index,
                                            std::vector<TrialOutcome> trials,
                                            const ConvergenceConfig& cfg) {
  ConfigurationResult r;
  r.sample_id = std::move(sample_id);
  r.level_index = level_index;
  r.stats = LevelStatistics::from_trials(trials);
  const std::size_t probe = std::min(cfg.m_min, trials.size());
  r.zero_variance_probe =
      probe > 0 &&
      LevelStatistics::from_trials(std::span(trials).first(probe)).cv_combined() == 0.0;
  r.converged = !trials.empty() && r.stats.cv_combined() < cfg.tau;
  r.trials = std::move(trials);
  return r;
}

TrialOutcome draw_trial(EvaluationBackend& backend, const std::string& sample_id,
                        std::size_t level_index, std::size_t trial_index,
                        const ConvergenceConfig& cfg) {
  std::string last_error;
  for (std::size_t attempt = 0; attempt < cfg.max_trial_attempts; ++attempt) {
    try {
      TrialOutcome out = backend.evaluate(sample_id, level_index, trial_index);
      if (!(out.tokens > 0.0) || !std::isfinite(out.tokens)) {
        throw BackendError("backend returned non-positive token count");
      }
      if (!(out.correct >= 0.0 && out.correct <= 1.0)) {
        throw BackendError("backend returned correctness outside [0, 1]");
      }
      return out;
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  throw BackendError("sample '" + sample_id + "' level " + std::to_string(level_index) +
                     " trial " + std::to_string(trial_index) + " failed after " +
                     std::to_string(cfg.max_trial_attempts) + " attempts: " + last_error);
}

namespace {

// Extends `trials` until `enough` says stop. Backend failures become ConfigurationError.
template <typename StopRule>
ConfigurationResult extend_configuration(EvaluationBackend& backend, const std::string& sample_id,
                                         std::size_t level_index, const ConvergenceConfig& cfg,
                                         std::vector<TrialOutcome> trials,
                                         const TrialObserver& observer, StopRule enough) {
  LevelStatistics stats = LevelStatistics::from_trials(trials);
  while (!enough(stats)) {
    const std::size_t k = trials.size();
    TrialOutcome out;
    try {
      out = draw_trial(backend, sample_id, level_index, k, cfg);
    } catch (const BackendError& e) {
      throw ConfigurationError(e.what(), summarize_configuration(sample_id, level_index,
                                                                 std::move(trials), cfg));
    }
    trials.push_back(out);
    stats.add(out);
    if (observer) observer(sample_id, level_index, k, out);
  }
  return summarize_configuration(sample_id, level_index, std::move(trials), cfg);
}

std::vector<TrialOutcome> prior_for(const RunOptions& options, ConfigKey key) {
  auto it = options.prior.find(key);
  if (it == options.prior.end()) return {};
  return it->second;
}

// Runs fn(i) for i in [0, count) on up to `threads` workers. Stops handing out
// work after the first failure and rethrows it.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn fn) {
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      if (failed.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, count));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

ConfigurationResult run_configuration(EvaluationBackend& backend, const std::string& sample_id,
                                      std::size_t level_index, const ConvergenceConfig& cfg,
                                      std::span<const TrialOutcome> prior,
                                      const TrialObserver& observer) {
  cfg.validate();
  return extend_configuration(backend, sample_id, level_index, cfg,
                              std::vector<TrialOutcome>(prior.begin(), prior.end()), observer,
                              [&](const LevelStatistics& s) {
                                return s.count() >= cfg.m_min && !should_continue(s, cfg);
                              });
}

long long BudgetPlan::allocated() const {
  long long total = 0;
  for (const auto& [key, m] : allocations) total += static_cast<long long>(m);
  return total;
}

BudgetPlan allocate_budget(const std::map<ConfigKey, double>& probe_cvs, std::size_t n,
                           std::size_t levels, const ConvergenceConfig& cfg, long long budget) {
  const long long configs = static_cast<long long>(n) * static_cast<long long>(levels);
  const long long minimum = configs * static_cast<long long>(cfg.m_min);
  if (budget < minimum) {
    throw InfeasibleBudgetError("budget " + std::to_string(budget) +
                                    " is below the probing minimum n*J*m_min = " +
                                    std::to_string(minimum),
                                minimum);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < levels; ++j) {
      if (!probe_cvs.contains({i, j})) {
        throw ArgumentError("allocate_budget: missing probe CV for sample " + std::to_string(i) +
                            " level " + std::to_string(j));
      }
    }
  }
  if (static_cast<long long>(probe_cvs.size()) != configs) {
    throw ArgumentError("allocate_budget: probe CVs do not match n*J configurations");
  }

  const long long residual = budget - minimum;
  double cv_sum = 0.0;
  for (const auto& [key, cv] : probe_cvs) {
    if (!(cv >= 0.0) || !std::isfinite(cv)) {
      throw ArgumentError("allocate_budget: CV must be finite and non-negative");
    }
    cv_sum += cv;
  }

  BudgetPlan plan;
  plan.total_budget = budget;
  long long extra_total = 0;
  for (const auto& [key, cv] : probe_cvs) {
    long long extra = 0;
    if (cv_sum > 0.0) {
      extra = static_cast<long long>(
          std::floor(static_cast<double>(residual) * cv / cv_sum));
    } else {
      extra = residual / configs;
    }
    plan.allocations[key] = cfg.m_min + static_cast<std::size_t>(extra);
    extra_total += extra;
  }

  // Descending CV, ties by (sample, level).
  std::vector<std::pair<ConfigKey, double>> order(probe_cvs.begin(), probe_cvs.end());
  std::stable_sort(order.begin(), order.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  // Rounding in the quotient can overshoot by a trial; take it back from the
  // lowest-CV configurations that received extra trials.
  for (auto it = order.rbegin(); extra_total > residual && it != order.rend(); ++it) {
    auto& m = plan.allocations[it->first];
    if (m > cfg.m_min) {
      --m;
      --extra_total;
    }
  }
  long long leftover = residual - extra_total;
  while (leftover > 0) {
    for (const auto& [key, cv] : order) {
      if (leftover == 0) break;
      ++plan.allocations[key];
      --leftover;
    }
  }
  return plan;
}

std::string mode_name(const SamplingMode& mode) {
  if (std::holds_alternative<AdaptiveMode>(mode)) return "adaptive";
  if (std::holds_alternative<FixedBudgetMode>(mode)) return "fixed_budget";
  return "naive";
}

std::size_t EvaluationResult::total_trials() const {
  std::size_t total = 0;
  for (const auto& c : configurations) total += c.k_star();
  return total;
}

std::size_t EvaluationResult::unconverged() const {
  return static_cast<std::size_t>(std::count_if(configurations.begin(), configurations.end(),
                                                [](const auto& c) { return !c.converged; }));
}

std::vector<SampleTrajectory> trajectories_from(std::span<const ConfigurationResult> configs,
                                                std::span<const std::string> samples,
                                                std::size_t levels) {
  if (configs.size() != samples.size() * levels) {
    throw ArgumentError("trajectories_from: configuration count does not match samples x levels");
  }
  std::vector<SampleTrajectory> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    SampleTrajectory t{samples[i], {}};
    t.levels.reserve(levels);
    for (std::size_t j = 0; j < levels; ++j) {
      t.levels.push_back(configs[i * levels + j].final_outcome());
    }
    out.push_back(std::move(t));
  }
  return out;
}

EvaluationResult run_evaluation(EvaluationBackend& backend, std::span<const std::string> samples,
                                std::size_t levels, const ConvergenceConfig& cfg,
                                const SamplingMode& mode, const RunOptions& options) {
  cfg.validate();
  if (samples.empty()) throw ArgumentError("run_evaluation: no samples");
  if (levels < 2) throw ArgumentError("run_evaluation: at least 2 scaling levels required");
  if (const auto* naive = std::get_if<NaiveMode>(&mode); naive && naive->trials < 1) {
    throw ArgumentError("run_evaluation: naive mode needs at least 1 trial per configuration");
  }

  const std::size_t n = samples.size();
  const std::size_t total = n * levels;
  std::vector<std::optional<ConfigurationResult>> results(total);

  // Per-configuration target for fixed-count phases.
  auto run_to = [&](auto target_of) {
    try {
      parallel_for(total, options.threads, [&](std::size_t idx) {
        const ConfigKey key{idx / levels, idx % levels};
        std::vector<TrialOutcome> trials =
            results[idx] ? std::move(results[idx]->trials) : prior_for(options, key);
        results[idx].reset();
        const std::size_t target = target_of(idx);
        results[idx] = extend_configuration(
            backend, samples[key.sample], key.level, cfg, std::move(trials), options.observer,
            [&](const LevelStatistics& s) { return s.count() >= target; });
      });
    } catch (const ConfigurationError& e) {
      std::vector<ConfigurationResult> done;
      for (auto& r : results) {
        if (r) done.push_back(*r);
      }
      throw RunAbortedError(e.what(), std::move(done));
    }
  };

  if (std::holds_alternative<AdaptiveMode>(mode)) {
    try {
      parallel_for(total, options.threads, [&](std::size_t idx) {
        const ConfigKey key{idx / levels, idx % levels};
        const auto prior = prior_for(options, key);
        results[idx] = run_configuration(backend, samples[key.sample], key.level, cfg, prior,
                                         options.observer);
      });
    } catch (const ConfigurationError& e) {
      std::vector<ConfigurationResult> done;
      for (auto& r : results) {
        if (r) done.push_back(*r);
      }
      throw RunAbortedError(e.what(), std::move(done));
    }
  } else if (const auto* naive = std::get_if<NaiveMode>(&mode)) {
    run_to([&](std::size_t) { return naive->trials; });
  } else {
    const auto& fixed = std::get<FixedBudgetMode>(mode);
    const long long minimum =
        static_cast<long long>(total) * static_cast<long long>(cfg.m_min);
    if (fixed.budget < minimum) {
      throw InfeasibleBudgetError("budget " + std::to_string(fixed.budget) +
                                      " is below the probing minimum n*J*m_min = " +
                                      std::to_string(minimum),
                                  minimum);
    }
    run_to([&](std::size_t) { return cfg.m_min; });
    std::map<ConfigKey, double> cvs;
    for (std::size_t idx = 0; idx < total; ++idx) {
      const auto& trials = results[idx]->trials;
      cvs[{idx / levels, idx % levels}] =
          LevelStatistics::from_trials(std::span(trials).first(cfg.m_min)).cv_combined();
    }
    const BudgetPlan plan = allocate_budget(cvs, n, levels, cfg, fixed.budget);
    run_to([&](std::size_t idx) { return plan.allocations.at({idx / levels, idx % levels}); });
  }

  EvaluationResult out;
  out.configurations.reserve(total);
  for (auto& r : results) out.configurations.push_back(std::move(*r));
  out.trajectories = trajectories_from(out.configurations, samples, levels);
  return out;
}

}  // namespace arise
