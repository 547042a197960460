#include "arise/cli.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <ostream>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "arise/backend.hpp"
#include "arise/document.hpp"
#include "arise/errors.hpp"

namespace arise::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_output(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomically(path, text);
}

std::string mode_tag(const RunOptionsCli& opts) {
  if (opts.naive) return "naive" + std::to_string(*opts.naive);
  if (opts.budget) return "budget" + (*opts.budget > 0 ? std::to_string(*opts.budget) : "");
  return "adaptive";
}

// Everything that must match between a resumed run and its original manifest.
bool same_run_shape(const RunManifest& a, const RunManifest& b) {
  return a.run_id == b.run_id && a.mode == b.mode && a.cfg == b.cfg && a.budget == b.budget &&
         a.naive_trials == b.naive_trials && a.seed == b.seed && a.levels == b.levels &&
         a.sample_ids == b.sample_ids;
}

}  // namespace

int cmd_compute(const ComputeOptions& opts, const GlobalOptions& global, std::ostream& out,
                std::ostream& err) {
  try {
    const RunData run = read_run(opts.traces);
    const ResultBundle bundle = recompute(run);
    if (!opts.out.empty()) write_output(opts.out, bundle_to_json(bundle).dump(2) + "\n");
    const ReportRow row = report_row(bundle);
    out << render_table(std::span(&row, 1), global.format, global.sm_x1000);
    return kOk;
  } catch (const IncompleteRunError& e) {
    err << "incomplete run: " << e.what() << "\n";
    return kIncomplete;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }
}

int cmd_run(const RunOptionsCli& opts, const GlobalOptions& global, std::ostream& out,
            std::ostream& err) {
  try {
    opts.cfg.validate();
    const json doc = load_document(opts.config);

    std::unique_ptr<EvaluationBackend> backend;
    std::vector<std::string> samples;
    std::vector<std::string> labels;
    RunManifest manifest;
    manifest.model = opts.model;

    if (doc.contains("samples")) {
      SyntheticModelSpec spec = spec_from_json(doc);
      if (global.seed) spec.seed = *global.seed;
      manifest.seed = spec.seed;
      samples = spec.sample_ids();
      for (std::size_t j = 0; j < spec.level_count(); ++j) {
        labels.push_back("level-" + std::to_string(j));
      }
      if (manifest.model.empty()) manifest.model = "simulator";
      if (opts.dry_run) {
        out << "simulator spec OK: " << samples.size() << " samples x " << labels.size()
            << " levels, seed " << spec.seed << "\n";
        return kOk;
      }
      backend = std::make_unique<ModelSimulator>(std::move(spec));
    } else {
      const BackendConfig cfg = backend_config_from_json(doc);
      std::vector<JudgedTask> tasks;
      if (!opts.tasks.empty()) tasks = load_tasks(opts.tasks);
      if (opts.dry_run) {
        const DryRunReport report = dry_run(cfg, tasks, opts.probe);
        json j{{"ok", report.ok()},
               {"problems", report.problems},
               {"usage_path_valid", report.usage_path_valid},
               {"response_path_valid", report.response_path_valid},
               {"rendered", report.rendered}};
        if (report.probe_response) j["probe_response"] = *report.probe_response;
        out << j.dump(2) << "\n";
        return report.ok() ? kOk : kValidation;
      }
      if (tasks.empty()) throw ValidationError("tasks", "an HTTP backend run needs --tasks");
      labels = cfg.level_labels();
      if (manifest.model.empty()) manifest.model = cfg.model;
      if (global.seed) manifest.seed = *global.seed;
      auto http = std::make_unique<HttpBackend>(cfg, std::move(tasks));
      samples = http->sample_ids();
      backend = std::move(http);
    }

    SamplingMode mode = AdaptiveMode{};
    if (opts.naive) {
      if (*opts.naive < 1) throw ArgumentError("--naive needs K >= 1");
      mode = NaiveMode{*opts.naive};
      manifest.naive_trials = *opts.naive;
    } else if (opts.budget) {
      const long long b =
          *opts.budget > 0 ? *opts.budget : default_budget(samples.size(), labels.size());
      const long long minimum = static_cast<long long>(samples.size() * labels.size() *
                                                       opts.cfg.m_min);
      if (b < minimum) {
        err << "error: budget " << b << " is infeasible: B must be at least n*J*m_min = "
            << samples.size() << "*" << labels.size() << "*" << opts.cfg.m_min << " = "
            << minimum << "\n";
        return kValidation;
      }
      mode = FixedBudgetMode{b};
      manifest.budget = b;
    }

    manifest.run_id =
        opts.run_id.empty() ? opts.config.stem().string() + "-" + mode_tag(opts) : opts.run_id;
    manifest.mode = mode_name(mode);
    manifest.cfg = opts.cfg;
    manifest.levels = labels;
    manifest.sample_ids = samples;
    manifest.n_samples = samples.size();
    manifest.benchmark = opts.benchmark;
    manifest.started_at = rfc3339_now();
    manifest.status = "running";

    TraceStore store(opts.output_dir);
    RunOptions run_options;
    run_options.threads = opts.threads;
    if (store.has_manifest(manifest.run_id)) {
      if (!opts.resume) {
        err << "error: run '" << manifest.run_id << "' already exists under "
            << opts.output_dir.string() << "; pass --resume to continue it\n";
        return kValidation;
      }
      const RunManifest previous = store.read_manifest(manifest.run_id);
      if (!same_run_shape(previous, manifest)) {
        err << "error: run '" << manifest.run_id
            << "' was started with different settings; refusing to resume\n";
        return kValidation;
      }
      manifest.started_at = previous.started_at;
      manifest.model = previous.model;
      manifest.benchmark = previous.benchmark;

      std::map<std::string, std::size_t> index;
      for (std::size_t i = 0; i < samples.size(); ++i) index[samples[i]] = i;
      std::map<ConfigKey, std::vector<std::pair<std::size_t, TrialOutcome>>> grouped;
      if (fs::exists(store.trials_path(manifest.run_id))) {
        for (const auto& r : store.read(manifest.run_id).records) {
          if (r.run_id != manifest.run_id) continue;
          grouped[{index.at(r.sample_id), r.level_index}].emplace_back(
              r.trial_index, TrialOutcome{r.correct, static_cast<double>(r.completion_tokens)});
        }
      }
      for (auto& [key, trials] : grouped) {
        std::sort(trials.begin(), trials.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        auto& dst = run_options.prior[key];
        for (const auto& [k, t] : trials) dst.push_back(t);
      }
    }
    store.write_manifest(manifest);

    auto appender = store.open_appender(manifest.run_id);
    run_options.observer = [&](const std::string& sample_id, std::size_t level,
                               std::size_t trial, const TrialOutcome& outcome) {
      TrialRecordLine r;
      r.run_id = manifest.run_id;
      r.model = manifest.model;
      r.sample_id = sample_id;
      r.level_index = level;
      r.level_label = labels[level];
      r.trial_index = trial;
      r.correct = outcome.correct;
      r.completion_tokens = std::llround(outcome.tokens);
      r.timestamp = rfc3339_now();
      appender->append_trial(r);
    };

    EvaluationResult result;
    try {
      result = run_evaluation(*backend, samples, labels.size(), opts.cfg, mode, run_options);
    } catch (const RunAbortedError& e) {
      manifest.status = "aborted";
      store.write_manifest(manifest);
      err << "run aborted: " << e.what() << "\n"
          << e.completed().size() << " of " << samples.size() * labels.size()
          << " configurations completed; rerun with --resume to continue\n";
      return kBackendFailure;
    }

    manifest.status = "complete";
    store.write_manifest(manifest);
    const ResultBundle bundle = make_bundle(manifest, result.configurations);
    write_file_atomically(store.bundle_path(manifest.run_id),
                          bundle_to_json(bundle).dump(2) + "\n");
    const ReportRow row = report_row(bundle);
    out << render_table(std::span(&row, 1), global.format, global.sm_x1000);
    err << "run '" << manifest.run_id << "': " << result.total_trials() << " trials, "
        << result.unconverged() << " unconverged configurations; bundle at "
        << store.bundle_path(manifest.run_id).string() << "\n";
    return kOk;
  } catch (const InfeasibleBudgetError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }
}

int cmd_simulate(const SimulateOptions& opts, const GlobalOptions& global, std::ostream& out,
                 std::ostream& err) {
  try {
    opts.cfg.validate();
    SyntheticModelSpec spec = load_spec(opts.spec);
    if (global.seed) spec.seed = *global.seed;
    if (opts.runs < 1) throw ArgumentError("--runs must be >= 1");

    std::vector<StudyMode> modes;
    const std::size_t n = spec.samples.size();
    const std::size_t levels = spec.level_count();
    for (const auto& m : opts.modes) modes.push_back(parse_study_mode(m, opts.cfg, n, levels));
    for (double tau : opts.tau_sweep) {
      modes.push_back(parse_study_mode(fmt::format("adaptive:tau={}", tau), opts.cfg, n, levels));
    }
    for (std::size_t m_max : opts.m_max_sweep) {
      modes.push_back(
          parse_study_mode(fmt::format("adaptive:m_max={}", m_max), opts.cfg, n, levels));
    }
    if (modes.empty()) throw ArgumentError("no modes to simulate");

    const auto summaries = replicate_study(spec, modes, opts.runs, opts.threads);
    const std::string table = study_table(summaries, global.format, global.sm_x1000);
    out << table;
    if (!opts.out.empty()) write_output(opts.out, table);
    if (!opts.runs_csv.empty()) write_output(opts.runs_csv, study_runs_csv(summaries, global.sm_x1000));
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }
}

int cmd_report(const ReportOptions& opts, const GlobalOptions& global, std::ostream& out,
               std::ostream& err) {
  try {
    if (opts.bundles.empty()) throw ArgumentError("no bundles given");
    std::vector<ResultBundle> bundles;
    for (const auto& p : opts.bundles) bundles.push_back(bundle_from_json(load_document(p)));

    std::vector<ReportRow> rows;
    for (const auto& b : bundles) rows.push_back(report_row(b));
    const std::string table = render_table(rows, global.format, global.sm_x1000);
    out << table;
    if (!opts.out.empty()) write_output(opts.out, table);

    std::set<std::string> used;
    for (const auto& b : bundles) {
      std::string stem = b.manifest.run_id.empty() ? "run" : b.manifest.run_id;
      for (int k = 2; used.contains(stem); ++k) stem = b.manifest.run_id + "-" + std::to_string(k);
      used.insert(stem);
      if (!opts.curves_dir.empty()) {
        write_output(opts.curves_dir / (stem + ".curve.csv"), scaling_curve_csv(b));
      }
      if (!opts.transitions_dir.empty()) {
        write_output(opts.transitions_dir / (stem + ".transitions.csv"), transitions_csv(b));
      }
    }
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"ARISE: test-time scaling evaluation toolkit", "arise"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions global;
  std::uint64_t seed = 0;
  std::string format = "markdown";
  auto* seed_opt = app.add_option("--seed", seed, "Random seed (simulator runs and studies)");
  app.add_option("--format", format, "Table format")
      ->check(CLI::IsMember({"csv", "markdown", "md", "json"}));
  app.add_flag("--sm-x1000", global.sm_x1000, "Scale the Scaling Metric by 1000 for display");

  auto add_cfg = [](CLI::App* sub, ConvergenceConfig& cfg) {
    sub->add_option("--m-min", cfg.m_min, "Probe trials per configuration")->capture_default_str();
    sub->add_option("--m-max", cfg.m_max, "Trial cap per configuration")->capture_default_str();
    sub->add_option("--tau", cfg.tau, "Combined-CV convergence threshold")->capture_default_str();
    sub->add_option("--max-attempts", cfg.max_trial_attempts, "Attempts per trial")
        ->capture_default_str();
  };

  ComputeOptions compute;
  auto* compute_cmd = app.add_subcommand("compute", "Score a run from its trial records");
  compute_cmd->add_option("traces", compute.traces, "Run directory or trials JSONL")->required();
  compute_cmd->add_option("-o,--out", compute.out, "Write the result bundle JSON here");

  RunOptionsCli run;
  std::string budget;
  auto* run_cmd = app.add_subcommand("run", "Run an evaluation against a simulator or HTTP backend");
  run_cmd->add_option("config", run.config, "Simulator spec or backend config")->required();
  run_cmd->add_option("--tasks", run.tasks, "Judged tasks (JSON array or JSONL)");
  run_cmd->add_option("-o,--out-dir", run.output_dir, "Trace store root")->capture_default_str();
  run_cmd->add_option("--run-id", run.run_id, "Run identifier");
  run_cmd->add_option("--model", run.model, "Model name recorded in traces");
  run_cmd->add_option("--benchmark", run.benchmark, "Benchmark name recorded in the manifest");
  auto* adaptive_flag = run_cmd->add_flag("--adaptive", "Adaptive sampling (default)");
  auto* budget_opt =
      run_cmd->add_option("--budget", budget, "Fixed total budget B, or 'auto' for 5nJ");
  std::size_t naive = 0;
  auto* naive_opt = run_cmd->add_option("--naive", naive, "Exactly K trials per configuration");
  adaptive_flag->excludes(budget_opt)->excludes(naive_opt);
  budget_opt->excludes(naive_opt);
  run_cmd->add_flag("--resume", run.resume, "Continue an existing run, skipping completed work");
  run_cmd->add_flag("--dry-run", run.dry_run, "Render requests per level without sending");
  run_cmd->add_flag("--probe", run.probe, "With --dry-run, send one probe request");
  run_cmd->add_option("--threads", run.threads, "Configurations evaluated concurrently");
  add_cfg(run_cmd, run.cfg);

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Replicated stability study on the simulator");
  sim_cmd->add_option("spec", sim.spec, "Simulator spec")->required();
  sim_cmd->add_option("--runs", sim.runs, "Replications per mode")->capture_default_str();
  sim_cmd->add_option("--modes", sim.modes, "adaptive[:tau=X][:m_max=Y], naive:K, budget[:B]")
      ->delimiter(',');
  sim_cmd->add_option("--tau-sweep", sim.tau_sweep, "Extra adaptive modes, one per tau")
      ->delimiter(',');
  sim_cmd->add_option("--m-max-sweep", sim.m_max_sweep, "Extra adaptive modes, one per m_max")
      ->delimiter(',');
  sim_cmd->add_option("-o,--out", sim.out, "Write the summary table here");
  sim_cmd->add_option("--runs-csv", sim.runs_csv, "Write per-run rows (box-plot data) here");
  sim_cmd->add_option("--threads", sim.threads, "Configurations evaluated concurrently");
  add_cfg(sim_cmd, sim.cfg);

  ReportOptions report;
  auto* report_cmd = app.add_subcommand("report", "Tables, scaling curves and transition counts");
  report_cmd->add_option("bundles", report.bundles, "Result bundle JSON files")->required();
  report_cmd->add_option("--curves", report.curves_dir, "Directory for scaling-curve CSVs");
  report_cmd->add_option("--transitions", report.transitions_dir,
                         "Directory for transition-count CSVs");
  report_cmd->add_option("-o,--out", report.out, "Write the table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidation;
  }

  global.format = parse_format(format);
  if (*seed_opt) global.seed = seed;

  if (*compute_cmd) return cmd_compute(compute, global, out, err);
  if (*run_cmd) {
    if (*naive_opt) run.naive = naive;
    if (*budget_opt) {
      if (budget == "auto") {
        run.budget = 0;
      } else {
        try {
          std::size_t used = 0;
          run.budget = std::stoll(budget, &used);
          if (used != budget.size() || *run.budget <= 0) throw std::invalid_argument(budget);
        } catch (const std::exception&) {
          err << "error: --budget expects a positive integer or 'auto'\n";
          return kValidation;
        }
      }
    }
    return cmd_run(run, global, out, err);
  }
  if (*sim_cmd) return cmd_simulate(sim, global, out, err);
  return cmd_report(report, global, out, err);
}

}  // namespace arise::cli
