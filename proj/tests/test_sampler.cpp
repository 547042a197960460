#include <doctest.h>

#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <vector>

#include "arise/errors.hpp"
#include "arise/sampler.hpp"

using namespace arise;

namespace {

// Replays a fixed list per configuration, repeating its last element.
class ScriptedBackend : public EvaluationBackend {
 public:
  explicit ScriptedBackend(std::vector<TrialOutcome> script) : script_(std::move(script)) {}
  TrialOutcome evaluate(const std::string&, std::size_t, std::size_t trial) override {
    ++calls;
    return script_[std::min(trial, script_.size() - 1)];
  }
  std::atomic<int> calls{0};

 private:
  std::vector<TrialOutcome> script_;
};

class FlakyBackend : public EvaluationBackend {
 public:
  explicit FlakyBackend(int failures) : failures_(failures) {}
  TrialOutcome evaluate(const std::string&, std::size_t, std::size_t) override {
    ++calls;
    if (calls <= failures_) throw BackendError("transient");
    return {1.0, 10.0};
  }
  int calls = 0;

 private:
  int failures_;
};

class AlwaysFails : public EvaluationBackend {
 public:
  TrialOutcome evaluate(const std::string& id, std::size_t, std::size_t trial) override {
    if (id == "bad" && trial >= 1) throw BackendError("down");
    return {1.0, 10.0};
  }
};

LevelStatistics stats_of(std::vector<TrialOutcome> trials) {
  return LevelStatistics::from_trials(trials);
}

}  // namespace

TEST_CASE("statistics of the worked fixture") {
  const auto s = stats_of({{1, 100}, {0, 200}, {1, 300}});
  CHECK(s.count() == 3);
  CHECK(s.mean_acc() == doctest::Approx(0.666667).epsilon(1e-6));
  CHECK(s.std_acc() == doctest::Approx(0.471405).epsilon(1e-6));
  CHECK(s.cv_acc() == doctest::Approx(0.707107).epsilon(1e-6));
  CHECK(s.mean_tok() == doctest::Approx(200));
  CHECK(s.std_tok() == doctest::Approx(81.6497).epsilon(1e-6));
  CHECK(s.cv_tok() == doctest::Approx(0.408248).epsilon(1e-6));
  CHECK(combined_cv(s) == doctest::Approx(1.115355).epsilon(1e-6));
}

TEST_CASE("single trial has zero spread") {
  const auto s = stats_of({{1, 500}});
  CHECK(s.std_acc() == 0.0);
  CHECK(s.cv_combined() == 0.0);
  CHECK(combined_cv(stats_of({{0, 5}, {0, 5}, {0, 5}})) == 0.0);
}

TEST_CASE("combined CV is the sum of both parts") {
  CHECK(0.3175 + 0.2854 == doctest::Approx(0.6029).epsilon(1e-12));
  const auto s = stats_of({{1, 120}, {0, 80}, {1, 100}, {1, 140}});
  CHECK(combined_cv(s) == doctest::Approx(s.cv_acc() + s.cv_tok()).epsilon(1e-15));
}

TEST_CASE("combined CV needs a trial") {
  CHECK_THROWS_AS(combined_cv(LevelStatistics{}), StateError);
}

TEST_CASE("update step matches the batch fold") {
  LevelStatistics s;
  s = update_statistics(s, {1, 100});
  s = update_statistics(s, {0, 200});
  s = update_statistics(s, {1, 300});
  const auto b = stats_of({{1, 100}, {0, 200}, {1, 300}});
  CHECK(s.mean_acc() == b.mean_acc());
  CHECK(s.std_tok() == b.std_tok());
}

TEST_CASE("stopping rule") {
  ConvergenceConfig cfg;  // m_min 3, m_max 10, tau 0.5
  // cv 0 < tau.
  CHECK_FALSE(should_continue(stats_of({{1, 100}, {1, 100}, {1, 100}}), cfg));
  // High CV at k = m_max: budget exhausted.
  std::vector<TrialOutcome> ten;
  for (int i = 0; i < 10; ++i) ten.push_back({static_cast<double>(i % 2), 100.0 + i});
  CHECK(stats_of(ten).cv_combined() >= 0.5);
  CHECK_FALSE(should_continue(stats_of(ten), cfg));
  // High CV at k = 5.
  std::vector<TrialOutcome> five(ten.begin(), ten.begin() + 5);
  CHECK(should_continue(stats_of(five), cfg));
  CHECK_THROWS_AS(should_continue(stats_of({{1, 1}, {0, 2}}), cfg), StateError);
}

TEST_CASE("config validation") {
  ConvergenceConfig cfg;
  cfg.m_min = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = {};
  cfg.m_min = 11;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
  cfg = {};
  cfg.tau = 0;
  CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("run_configuration on a constant backend stops after probing") {
  ScriptedBackend b({{1, 500}});
  const auto r = run_configuration(b, "s", 0, ConvergenceConfig{});
  CHECK(r.k_star() == 3);
  CHECK(r.final_outcome().accuracy == 1.0);
  CHECK(r.final_outcome().tokens == 500.0);
  CHECK(r.converged);
  CHECK(r.zero_variance_probe);
}

TEST_CASE("run_configuration continues past a noisy probe") {
  ScriptedBackend b({{1, 100}, {0, 200}, {1, 300}, {1, 200}});
  const auto r = run_configuration(b, "s", 0, ConvergenceConfig{});
  CHECK(r.k_star() > 3);
  CHECK(r.k_star() <= 10);
  CHECK_FALSE(r.zero_variance_probe);
  if (r.k_star() < 10) CHECK(r.stats.cv_combined() < 0.5);
}

TEST_CASE("m_min equal to m_max fixes the trial count") {
  ConvergenceConfig cfg;
  cfg.m_min = cfg.m_max = 3;
  ScriptedBackend b({{1, 100}, {0, 900}, {1, 20}});
  CHECK(run_configuration(b, "s", 0, cfg).k_star() == 3);
}

TEST_CASE("run_configuration replays prior trials") {
  ScriptedBackend b({{1, 500}});
  std::vector<TrialOutcome> prior{{1, 500}, {1, 500}};
  std::vector<std::size_t> seen;
  const auto r = run_configuration(b, "s", 0, ConvergenceConfig{}, prior,
                                   [&](const std::string&, std::size_t, std::size_t k,
                                       const TrialOutcome&) { seen.push_back(k); });
  CHECK(r.k_star() == 3);
  CHECK(b.calls == 1);
  CHECK(seen == std::vector<std::size_t>{2});
}

TEST_CASE("failed attempts are retried and not counted") {
  FlakyBackend b(2);
  const auto t = draw_trial(b, "s", 0, 0, ConvergenceConfig{});
  CHECK(t.correct == 1.0);
  CHECK(b.calls == 3);

  FlakyBackend worse(5);
  CHECK_THROWS_AS(draw_trial(worse, "s", 0, 0, ConvergenceConfig{}), BackendError);
  CHECK(worse.calls == 3);
}

TEST_CASE("configuration error carries the partial statistics") {
  AlwaysFails b;
  try {
    run_configuration(b, "bad", 0, ConvergenceConfig{});
    FAIL("expected ConfigurationError");
  } catch (const ConfigurationError& e) {
    CHECK(e.partial().k_star() == 1);
    CHECK(e.partial().stats.count() == 1);
  }
}

TEST_CASE("budget allocation fixture") {
  ConvergenceConfig cfg;
  const auto plan = allocate_budget({{{0, 0}, 0.3}, {{1, 0}, 0.1}}, 2, 1, cfg, 10);
  CHECK(plan.allocations.at({0, 0}) == 6);
  CHECK(plan.allocations.at({1, 0}) == 4);
  CHECK(plan.allocated() == 10);
}

TEST_CASE("budget allocation edge cases") {
  ConvergenceConfig cfg;
  std::map<ConfigKey, double> cvs{{{0, 0}, 0.2}, {{0, 1}, 0.2}, {{1, 0}, 0.2}, {{1, 1}, 0.2}};
  auto plan = allocate_budget(cvs, 2, 2, cfg, 20);
  for (const auto& [k, m] : plan.allocations) CHECK(m == 5);

  plan = allocate_budget(cvs, 2, 2, cfg, 12);
  for (const auto& [k, m] : plan.allocations) CHECK(m == 3);

  std::map<ConfigKey, double> zeros{{{0, 0}, 0.0}, {{1, 0}, 0.0}, {{2, 0}, 0.0}};
  plan = allocate_budget(zeros, 3, 1, cfg, 15);
  for (const auto& [k, m] : plan.allocations) CHECK(m == 5);
  CHECK(plan.allocated() == 15);

  try {
    allocate_budget(cvs, 2, 2, cfg, 11);
    FAIL("expected InfeasibleBudgetError");
  } catch (const InfeasibleBudgetError& e) {
    CHECK(e.minimum() == 12);
  }
}

TEST_CASE("run_evaluation modes") {
  ScriptedBackend b({{1, 100}});
  std::vector<std::string> ids{"a", "b"};
  ConvergenceConfig cfg;

  auto r = run_evaluation(b, ids, 2, cfg, AdaptiveMode{});
  REQUIRE(r.trajectories.size() == 2);
  CHECK(r.trajectories[1].levels[1].accuracy == 1.0);
  CHECK(r.trajectories[1].levels[1].tokens == 100.0);
  CHECK(r.total_trials() == 12);
  CHECK(r.unconverged() == 0);

  r = run_evaluation(b, ids, 2, cfg, NaiveMode{1});
  CHECK(r.total_trials() == 4);

  r = run_evaluation(b, ids, 2, cfg, FixedBudgetMode{20});
  CHECK(r.total_trials() == 20);

  CHECK_THROWS_AS(run_evaluation(b, ids, 2, cfg, FixedBudgetMode{11}), InfeasibleBudgetError);
  CHECK(mode_name(FixedBudgetMode{}) == "fixed_budget");
  CHECK(default_budget(8, 3) == 120);
}

TEST_CASE("run_evaluation is independent of thread count") {
  class Keyed : public EvaluationBackend {
   public:
    TrialOutcome evaluate(const std::string& id, std::size_t j, std::size_t k) override {
      const auto h = std::hash<std::string>{}(id) ^ (j * 131 + k * 7919);
      return {static_cast<double>(h % 3 == 0), 50.0 + static_cast<double>(h % 97)};
    }
  } b;
  std::vector<std::string> ids{"a", "b", "c", "d", "e"};
  const auto one = run_evaluation(b, ids, 3, ConvergenceConfig{}, AdaptiveMode{});
  RunOptions opts;
  opts.threads = 4;
  const auto four = run_evaluation(b, ids, 3, ConvergenceConfig{}, AdaptiveMode{}, opts);
  REQUIRE(one.configurations.size() == four.configurations.size());
  for (std::size_t i = 0; i < one.configurations.size(); ++i) {
    CHECK(one.configurations[i].k_star() == four.configurations[i].k_star());
    CHECK(one.configurations[i].stats.mean_tok() == four.configurations[i].stats.mean_tok());
  }
}

TEST_CASE("a failing configuration aborts the run with completed work") {
  AlwaysFails b;
  std::vector<std::string> ids{"good", "bad"};
  try {
    run_evaluation(b, ids, 2, ConvergenceConfig{}, AdaptiveMode{});
    FAIL("expected RunAbortedError");
  } catch (const RunAbortedError& e) {
    CHECK(e.completed().size() == 2);
  }
}
