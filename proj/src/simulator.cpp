#include "arise/simulator.hpp"

#include <cmath>
#include <numbers>
#include <unordered_set>

#include "arise/document.hpp"
#include "arise/errors.hpp"

namespace arise {

namespace {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double expected_tokens(const SyntheticLevel& l) {
  return std::exp(l.token_log_mean + 0.5 * l.token_log_std * l.token_log_std);
}

}  // namespace

void SyntheticModelSpec::validate() const {
  if (samples.empty()) throw ValidationError("samples", "spec has no samples");
  const std::size_t levels = samples.front().levels.size();
  if (levels < 2) throw ValidationError("levels", "each sample needs at least 2 levels");
  std::unordered_set<std::string> seen;
  for (const auto& s : samples) {
    if (s.id.empty()) throw ValidationError("id", "sample id must be non-empty");
    if (!seen.insert(s.id).second) throw ValidationError("id", "duplicate sample id '" + s.id + "'");
    if (s.levels.size() != levels) {
      throw ValidationError("levels", "sample '" + s.id + "' has " +
                                          std::to_string(s.levels.size()) + " levels, expected " +
                                          std::to_string(levels));
    }
    for (const auto& l : s.levels) {
      if (!(l.p_correct >= 0.0 && l.p_correct <= 1.0)) {
        throw ValidationError("p_correct", "sample '" + s.id + "': must lie in [0, 1]");
      }
      if (!std::isfinite(l.token_log_mean)) {
        throw ValidationError("token_log_mean", "sample '" + s.id + "': must be finite");
      }
      if (!(l.token_log_std >= 0.0) || !std::isfinite(l.token_log_std)) {
        throw ValidationError("token_log_std", "sample '" + s.id + "': must be >= 0");
      }
    }
  }
}

std::vector<std::string> SyntheticModelSpec::sample_ids() const {
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.id);
  return ids;
}

SyntheticModelSpec spec_from_json(const nlohmann::json& j) {
  SyntheticModelSpec spec;
  try {
    spec.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& js : j.at("samples")) {
      SyntheticSample s;
      s.id = js.at("id").is_string() ? js.at("id").get<std::string>() : js.at("id").dump();
      for (const auto& jl : js.at("levels")) {
        s.levels.push_back({jl.at("p_correct").get<double>(), jl.at("token_log_mean").get<double>(),
                            jl.at("token_log_std").get<double>()});
      }
      spec.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("spec", e.what());
  }
  spec.validate();
  return spec;
}

nlohmann::json spec_to_json(const SyntheticModelSpec& spec) {
  nlohmann::json j;
  j["seed"] = spec.seed;
  j["samples"] = nlohmann::json::array();
  for (const auto& s : spec.samples) {
    nlohmann::json js{{"id", s.id}, {"levels", nlohmann::json::array()}};
    for (const auto& l : s.levels) {
      js["levels"].push_back({{"p_correct", l.p_correct},
                              {"token_log_mean", l.token_log_mean},
                              {"token_log_std", l.token_log_std}});
    }
    j["samples"].push_back(std::move(js));
  }
  return j;
}

SyntheticModelSpec load_spec(const std::filesystem::path& path) {
  return spec_from_json(load_document(path));
}

GroundTruthTrajectory ground_truth(const SyntheticModelSpec& spec) {
  GroundTruthTrajectory gt;
  for (const auto& s : spec.samples) {
    SampleTrajectory t{s.id, {}};
    for (const auto& l : s.levels) t.levels.push_back({l.p_correct, expected_tokens(l)});
    gt.samples.push_back(std::move(t));
  }
  return gt;
}

double keyed_uniform(std::uint64_t seed, const std::string& sample_id, std::size_t level_index,
                     std::size_t trial_index, std::uint32_t stream) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ fnv1a64(sample_id));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(level_index) * 0xd1b54a32d192ed03ULL));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(trial_index) * 0xaef17502108ef2d9ULL));
  h = splitmix64(h ^ (static_cast<std::uint64_t>(stream) * 0x9e3779b97f4a7c15ULL));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

namespace {

TrialOutcome draw(std::uint64_t seed, const SyntheticSample& sample, std::size_t level_index,
                  std::size_t trial_index) {
  if (level_index >= sample.levels.size()) {
    throw ArgumentError("simulator: level " + std::to_string(level_index) + " out of range");
  }
  const SyntheticLevel& l = sample.levels[level_index];

  const double u = keyed_uniform(seed, sample.id, level_index, trial_index, 0);
  const double correct = u < l.p_correct ? 1.0 : 0.0;

  double log_tokens = l.token_log_mean;
  if (l.token_log_std > 0.0) {
    // Box-Muller; 1 - u lies in (0, 1] so the log is finite.
    const double u1 = 1.0 - keyed_uniform(seed, sample.id, level_index, trial_index, 1);
    const double u2 = keyed_uniform(seed, sample.id, level_index, trial_index, 2);
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    log_tokens += l.token_log_std * z;
  }
  const double tokens = std::max(1.0, std::round(std::exp(log_tokens)));
  return {correct, tokens};
}

}  // namespace

TrialOutcome simulate_trial(const SyntheticModelSpec& spec, const std::string& sample_id,
                            std::size_t level_index, std::size_t trial_index) {
  for (const auto& s : spec.samples) {
    if (s.id == sample_id) return draw(spec.seed, s, level_index, trial_index);
  }
  throw ArgumentError("simulator: unknown sample '" + sample_id + "'");
}

ModelSimulator::ModelSimulator(SyntheticModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t i = 0; i < spec_.samples.size(); ++i) index_[spec_.samples[i].id] = i;
}

TrialOutcome ModelSimulator::evaluate(const std::string& sample_id, std::size_t level_index,
                                      std::size_t trial_index) {
  const auto it = index_.find(sample_id);
  if (it == index_.end()) throw ArgumentError("simulator: unknown sample '" + sample_id + "'");
  return draw(spec_.seed, spec_.samples[it->second], level_index, trial_index);
}

Dispersion dispersion(std::span<const double> values) {
  Dispersion d;
  if (values.empty()) return d;
  double sum = 0.0;
  for (double v : values) sum += v;
  d.mean = sum / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - d.mean) * (v - d.mean);
  d.std = std::sqrt(ss / static_cast<double>(values.size()));
  d.cv = d.mean != 0.0 ? d.std / std::abs(d.mean) : 0.0;
  return d;
}

std::uint64_t replicate_seed(std::uint64_t base_seed, std::size_t replicate) {
  return splitmix64(base_seed ^ splitmix64(static_cast<std::uint64_t>(replicate) + 1));
}

std::vector<ModeSummary> replicate_study(const SyntheticModelSpec& spec,
                                         std::span<const StudyMode> modes,
                                         std::size_t replications, std::size_t threads) {
  spec.validate();
  if (replications < 1) throw ArgumentError("replicate_study: need at least one replication");
  const auto ids = spec.sample_ids();
  const std::size_t levels = spec.level_count();

  std::vector<ModeSummary> out;
  for (const auto& m : modes) {
    ModeSummary summary;
    summary.name = m.name;
    std::vector<double> arise_values;
    std::vector<double> sm_values;
    double trials = 0.0;
    double unconverged = 0.0;
    for (std::size_t r = 0; r < replications; ++r) {
      SyntheticModelSpec replica = spec;
      replica.seed = replicate_seed(spec.seed, r);
      ModelSimulator sim(std::move(replica));
      RunOptions options;
      options.threads = threads;
      const auto result = run_evaluation(sim, ids, levels, m.cfg, m.mode, options);
      ReplicateRun run;
      run.seed = sim.spec().seed;
      run.arise = arise_aggregate(result.trajectories);
      run.scaling_metric = scaling_metric(build_scaling_curve(result.trajectories));
      run.total_trials = result.total_trials();
      run.unconverged = result.unconverged();
      arise_values.push_back(run.arise);
      sm_values.push_back(run.scaling_metric);
      trials += static_cast<double>(run.total_trials);
      unconverged += static_cast<double>(run.unconverged);
      summary.runs.push_back(run);
    }
    summary.arise = dispersion(arise_values);
    summary.scaling_metric = dispersion(sm_values);
    summary.mean_total_trials = trials / static_cast<double>(replications);
    summary.mean_unconverged = unconverged / static_cast<double>(replications);
    out.push_back(std::move(summary));
  }
  return out;
}

}  // namespace arise
