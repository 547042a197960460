#include <doctest.h>

#include <fstream>
#include <vector>

#include "arise/errors.hpp"
#include "arise/simulator.hpp"
#include "arise/trace_store.hpp"
#include "temp_dir.hpp"

using namespace arise;

namespace {

TrialRecordLine record(std::string sample, std::size_t level, std::size_t trial, double correct,
                       std::int64_t tokens) {
  TrialRecordLine r;
  r.run_id = "r1";
  r.model = "m";
  r.sample_id = std::move(sample);
  r.level_index = level;
  r.level_label = level == 0 ? "low" : "high";
  r.trial_index = trial;
  r.correct = correct;
  r.completion_tokens = tokens;
  r.timestamp = "2026-10-16T09:30:00Z";
  return r;
}

RunManifest manifest_for(std::vector<std::string> ids) {
  RunManifest m;
  m.run_id = "r1";
  m.mode = "naive";
  m.naive_trials = 3;
  m.levels = {"low", "high"};
  m.sample_ids = ids;
  m.n_samples = ids.size();
  m.model = "m";
  m.started_at = "2026-10-16T09:00:00Z";
  m.status = "complete";
  return m;
}

}  // namespace

TEST_CASE("record round trip") {
  auto r = record("s1", 1, 4, 0.25, 1234);
  r.meta = {{"note", "x"}};
  CHECK(parse_record(serialize_record(r)) == r);
  r.correct = 0.1 + 0.2;
  CHECK(parse_record(serialize_record(r)).correct == r.correct);
}

TEST_CASE("record validation names the field") {
  auto r = record("s1", 0, 0, 1, 0);
  try {
    validate_record(r);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "completion_tokens");
  }
  r = record("s1", 0, 0, 1.5, 10);
  CHECK_THROWS_AS(validate_record(r), ValidationError);
  r = record("s1", 0, 0, 1, 10);
  r.timestamp = "yesterday";
  CHECK_THROWS_AS(validate_record(r), ValidationError);
  CHECK_THROWS_AS(parse_record("{not json"), ValidationError);
}

TEST_CASE("appender stores records and rejects duplicates") {
  TempDir dir;
  TraceStore store(dir.path());
  store.write_manifest(manifest_for({"s1"}));
  {
    auto app = store.open_appender("r1");
    app->append_trial(record("s1", 0, 0, 1, 100));
    CHECK_THROWS_AS(app->append_trial(record("s1", 0, 0, 0, 200)), ConflictError);
    CHECK_THROWS_AS(app->append_trial(record("s1", 0, 1, 1, 0)), ValidationError);
  }
  // Reopening reloads the existing keys.
  auto app = store.open_appender("r1");
  CHECK_THROWS_AS(app->append_trial(record("s1", 0, 0, 1, 100)), ConflictError);
  app->append_trial(record("s1", 1, 0, 1, 100));

  const auto run = store.read("r1");
  REQUIRE(run.records.size() == 2);
  CHECK(run.records[0] == record("s1", 0, 0, 1, 100));
}

TEST_CASE("trajectories are means over stored trials") {
  TempDir dir;
  TraceStore store(dir.path());
  store.write_manifest(manifest_for({"s1"}));
  auto app = store.open_appender("r1");
  // Out of order on purpose.
  app->append_trial(record("s1", 0, 2, 1, 300));
  app->append_trial(record("s1", 0, 0, 1, 100));
  app->append_trial(record("s1", 0, 1, 0, 200));
  app->append_trial(record("s1", 1, 0, 1, 400));
  const auto t = store.load_trajectories("r1");
  REQUIRE(t.size() == 1);
  CHECK(t[0].levels[0].accuracy == doctest::Approx(0.666667).epsilon(1e-6));
  CHECK(t[0].levels[0].tokens == doctest::Approx(200));
  CHECK(t[0].levels[1].tokens == 400);
}

TEST_CASE("missing configurations are reported") {
  TempDir dir;
  TraceStore store(dir.path());
  store.write_manifest(manifest_for({"s1", "s2"}));
  auto app = store.open_appender("r1");
  app->append_trial(record("s1", 0, 0, 1, 100));
  app->append_trial(record("s1", 1, 0, 1, 100));
  app->append_trial(record("s2", 0, 0, 1, 100));
  try {
    store.load_trajectories("r1");
    FAIL("expected IncompleteRunError");
  } catch (const IncompleteRunError& e) {
    REQUIRE(e.gaps().size() == 1);
    CHECK(e.gaps()[0].sample_id == "s2");
    CHECK(e.gaps()[0].level_index == 1);
  }
}

TEST_CASE("empty run is incomplete") {
  TempDir dir;
  TraceStore store(dir.path());
  store.write_manifest(manifest_for({"s1"}));
  CHECK_THROWS_AS(store.recompute("r1"), IncompleteRunError);
  std::ofstream(dir / "empty.jsonl").close();
  CHECK_THROWS_AS(recompute(read_run(dir / "empty.jsonl")), IncompleteRunError);
}

TEST_CASE("manifest is inferred when absent") {
  TempDir dir;
  {
    TrialAppender app(dir / "t.jsonl");
    app.append_trial(record("b", 0, 0, 1, 100));
    app.append_trial(record("a", 0, 0, 0, 100));
    app.append_trial(record("a", 1, 0, 1, 200));
    app.append_trial(record("b", 1, 0, 1, 300));
  }
  const auto run = read_run(dir / "t.jsonl");
  CHECK(run.manifest.run_id == "r1");
  CHECK(run.manifest.levels == std::vector<std::string>{"low", "high"});
  CHECK(run.manifest.n_samples == 2);
  const auto bundle = recompute(run);
  CHECK(bundle.samples.size() == 2);
}

TEST_CASE("bundle recompute matches the live bundle") {
  SyntheticModelSpec spec;
  spec.seed = 5;
  spec.samples.push_back({"a", {{0.7, 5.0, 0.4}, {0.5, 5.6, 0.4}, {0.9, 6.1, 0.3}}});
  spec.samples.push_back({"b", {{0.2, 4.8, 0.5}, {0.6, 5.4, 0.3}, {0.6, 6.0, 0.5}}});
  ModelSimulator sim(spec);

  TempDir dir;
  TraceStore store(dir.path());
  RunManifest m = manifest_for(spec.sample_ids());
  m.mode = "adaptive";
  m.naive_trials.reset();
  m.levels = {"low", "medium", "high"};
  store.write_manifest(m);
  auto app = store.open_appender("r1");
  RunOptions opts;
  opts.observer = [&](const std::string& id, std::size_t j, std::size_t k, const TrialOutcome& o) {
    auto r = record(id, j, k, o.correct, static_cast<std::int64_t>(o.tokens));
    r.level_label = m.levels[j];
    app->append_trial(r);
  };
  const auto ids = spec.sample_ids();
  const auto result = run_evaluation(sim, ids, 3, m.cfg, AdaptiveMode{}, opts);
  const auto live = make_bundle(m, result.configurations);
  const auto again = store.recompute("r1");
  CHECK(bundle_to_json(live).dump() == bundle_to_json(again).dump());
  CHECK(bundle_to_json(bundle_from_json(bundle_to_json(live))).dump() ==
        bundle_to_json(live).dump());

  // Brute-force oracle on the loaded means.
  const auto trajs = store.load_trajectories("r1");
  double sum = 0;
  for (const auto& t : trajs) {
    for (std::size_t j = 1; j < t.levels.size(); ++j) {
      const auto& p = t.levels[j - 1];
      const auto& n = t.levels[j];
      const double da = n.accuracy - p.accuracy;
      if (da > 0) sum += da * p.tokens / n.tokens;
      if (da < 0) sum += da * n.tokens / p.tokens;
    }
  }
  CHECK(again.aggregate_arise == doctest::Approx(sum / trajs.size()).epsilon(1e-12));
}

TEST_CASE("tied curve keeps the bundle and drops the metric") {
  RunManifest m = manifest_for({"a"});
  std::vector<ConfigurationResult> configs;
  ConvergenceConfig cfg;
  configs.push_back(summarize_configuration("a", 0, {{1, 100}}, cfg));
  configs.push_back(summarize_configuration("a", 1, {{0, 100}}, cfg));
  const auto b = make_bundle(m, configs);
  CHECK_FALSE(b.scaling_metric.has_value());
  CHECK_FALSE(b.curve_error.empty());
  CHECK(b.aggregate_arise == -1.0);
  CHECK(bundle_to_json(b)["scaling_metric"].is_null());
}

TEST_CASE("CSV exports") {
  RunManifest m = manifest_for({"a"});
  m.benchmark = "bench";
  std::vector<ConfigurationResult> configs;
  ConvergenceConfig cfg;
  configs.push_back(summarize_configuration("a", 0, {{0, 100}}, cfg));
  configs.push_back(summarize_configuration("a", 1, {{1, 200}}, cfg));
  const auto b = make_bundle(m, configs);
  const std::vector<ResultBundle> bs{b};
  CHECK(results_csv(bs) ==
        "model,benchmark,arise,scaling_metric,n_samples,levels\n"
        "m,bench,0.500000,0.010000,1,low;high\n");
  const std::string curve = scaling_curve_csv(b);
  CHECK(curve.rfind("level_index,level_label,mean_tokens,mean_accuracy\n", 0) == 0);
  CHECK(curve.find("1,high,200,1\n") != std::string::npos);
}

TEST_CASE("manifest round trip") {
  RunManifest m = manifest_for({"a", "b"});
  m.seed = 42;
  m.budget = 30;
  CHECK(manifest_from_json(manifest_to_json(m)) == m);
  TempDir dir;
  TraceStore store(dir.path());
  store.write_manifest(m);
  CHECK(store.read_manifest("r1") == m);
}
