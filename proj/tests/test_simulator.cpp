#include <doctest.h>

#include <cmath>
#include <vector>

#include "arise/errors.hpp"
#include "arise/simulator.hpp"

using namespace arise;

namespace {

SyntheticModelSpec two_level_spec(double p0, double p1, double mu, double sigma) {
  SyntheticModelSpec s;
  s.seed = 42;
  s.samples.push_back({"s0", {{p0, mu, sigma}, {p1, mu + 0.5, sigma}}});
  return s;
}

}  // namespace

TEST_CASE("degenerate distributions") {
  const auto spec = two_level_spec(1.0, 0.0, std::log(100.0), 0.0);
  for (std::size_t k = 0; k < 50; ++k) {
    const auto hi = simulate_trial(spec, "s0", 0, k);
    CHECK(hi.correct == 1.0);
    CHECK(hi.tokens == 100.0);
    CHECK(simulate_trial(spec, "s0", 1, k).correct == 0.0);
  }
}

TEST_CASE("a fixed key draws the same outcome") {
  const auto spec = two_level_spec(0.5, 0.5, 5.0, 0.7);
  const auto a = simulate_trial(spec, "s0", 0, 0);
  const auto b = simulate_trial(spec, "s0", 0, 0);
  CHECK(a.correct == b.correct);
  CHECK(a.tokens == b.tokens);
  ModelSimulator sim(spec);
  const auto c = sim.evaluate("s0", 0, 0);
  CHECK(c.tokens == a.tokens);
}

TEST_CASE("tokens are positive integers") {
  const auto spec = two_level_spec(0.5, 0.5, 0.1, 2.0);
  for (std::size_t k = 0; k < 500; ++k) {
    const double t = simulate_trial(spec, "s0", 1, k).tokens;
    CHECK(t >= 1.0);
    CHECK(t == std::round(t));
  }
}

TEST_CASE("unknown keys") {
  const auto spec = two_level_spec(0.5, 0.5, 5.0, 0.7);
  CHECK_THROWS_AS(simulate_trial(spec, "nope", 0, 0), ArgumentError);
  CHECK_THROWS_AS(simulate_trial(spec, "s0", 2, 0), ArgumentError);
}

TEST_CASE("ground truth") {
  auto spec = two_level_spec(0.2, 0.9, std::log(100.0), 0.0);
  auto gt = ground_truth(spec);
  CHECK(gt.samples[0].levels[0].tokens == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(gt.samples[0].levels[0].accuracy == 0.2);
  CHECK(gt.samples[0].levels[1].accuracy == 0.9);

  spec = two_level_spec(0.2, 0.9, std::log(100.0), 0.5);
  gt = ground_truth(spec);
  CHECK(gt.samples[0].levels[0].tokens == doctest::Approx(113.3148).epsilon(1e-6));
}

TEST_CASE("spec validation") {
  auto bad = two_level_spec(1.2, 0.5, 5.0, 0.1);
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = two_level_spec(0.5, 0.5, 5.0, -0.1);
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = two_level_spec(0.5, 0.5, 5.0, 0.1);
  bad.samples.push_back(bad.samples[0]);
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad.samples[1].id = "s1";
  bad.samples[1].levels.pop_back();
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("spec JSON round trip") {
  const auto spec = two_level_spec(0.25, 0.75, 4.5, 0.3);
  const auto back = spec_from_json(spec_to_json(spec));
  CHECK(back.seed == spec.seed);
  REQUIRE(back.samples.size() == 1);
  CHECK(back.samples[0].levels[1].p_correct == 0.75);
  CHECK(back.samples[0].levels[1].token_log_mean == 5.0);
  CHECK_THROWS_AS(spec_from_json(nlohmann::json{{"seed", 1}}), ValidationError);
}

TEST_CASE("k = 1000 means approach the expectations") {
  SyntheticModelSpec spec;
  spec.seed = 7;
  spec.samples.push_back({"a", {{0.2, 5.0, 0.4}, {0.5, 5.5, 0.4}, {0.8, 6.0, 0.4}}});
  spec.samples.push_back({"b", {{0.35, 4.0, 0.3}, {0.65, 4.5, 0.5}, {0.4, 5.2, 0.3}}});
  ModelSimulator sim(spec);
  ConvergenceConfig cfg;
  cfg.m_min = cfg.m_max = 1000;
  const auto gt = ground_truth(spec);
  for (std::size_t i = 0; i < spec.samples.size(); ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      const auto r = run_configuration(sim, spec.samples[i].id, j, cfg);
      const auto& want = gt.samples[i].levels[j];
      CHECK(std::abs(r.stats.mean_acc() - want.accuracy) < 0.05);
      CHECK(std::abs(r.stats.mean_tok() - want.tokens) / want.tokens < 0.05);
    }
  }
}

TEST_CASE("dispersion") {
  std::vector<double> v{1.0, 2.0, 3.0};
  const auto d = dispersion(v);
  CHECK(d.mean == doctest::Approx(2.0));
  CHECK(d.std == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-12));
  CHECK(d.cv == doctest::Approx(std::sqrt(2.0 / 3.0) / 2.0).epsilon(1e-12));
  std::vector<double> one{4.2};
  CHECK(dispersion(one).std == 0.0);
}

TEST_CASE("deterministic spec has zero spread in every mode") {
  SyntheticModelSpec spec;
  spec.seed = 3;
  spec.samples.push_back({"a", {{1.0, 5.0, 0.0}, {0.0, 6.0, 0.0}}});
  spec.samples.push_back({"b", {{0.0, 5.0, 0.0}, {1.0, 5.5, 0.0}}});
  std::vector<StudyMode> modes{{"naive:1", NaiveMode{1}, {}},
                               {"adaptive", AdaptiveMode{}, {}},
                               {"budget", FixedBudgetMode{20}, {}}};
  const auto out = replicate_study(spec, modes, 5);
  for (const auto& m : out) {
    CHECK(m.runs.size() == 5);
    CHECK(m.arise.std == 0.0);
    CHECK(m.scaling_metric.std == 0.0);
  }
}

TEST_CASE("replicate study is seed stable") {
  SyntheticModelSpec spec;
  spec.seed = 11;
  spec.samples.push_back({"a", {{0.6, 5.0, 0.4}, {0.4, 6.0, 0.4}}});
  spec.samples.push_back({"b", {{0.3, 5.0, 0.3}, {0.8, 5.5, 0.5}}});
  std::vector<StudyMode> modes{{"adaptive", AdaptiveMode{}, {}}};
  const auto a = replicate_study(spec, modes, 10, 1);
  const auto b = replicate_study(spec, modes, 10, 3);
  for (std::size_t r = 0; r < 10; ++r) {
    CHECK(a[0].runs[r].arise == b[0].runs[r].arise);
    CHECK(a[0].runs[r].seed == replicate_seed(11, r));
  }
  CHECK(replicate_seed(11, 0) != replicate_seed(11, 1));
  CHECK(replicate_study(spec, modes, 1)[0].arise.std == 0.0);
}
