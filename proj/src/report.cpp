#include "arise/report.hpp"

#include <cmath>

#include <fmt/format.h>
#include <json.hpp>

#include "arise/errors.hpp"

namespace arise {

using nlohmann::json;

ReportFormat parse_format(std::string_view name) {
  if (name == "csv") return ReportFormat::Csv;
  if (name == "markdown" || name == "md") return ReportFormat::Markdown;
  if (name == "json") return ReportFormat::Json;
  throw ArgumentError("unknown format '" + std::string(name) + "' (csv, markdown, json)");
}

ReportRow report_row(const ResultBundle& b) {
  return {b.manifest.model,
          b.manifest.benchmark,
          b.aggregate_arise,
          b.scaling_metric,
          b.samples.size(),
          b.manifest.levels.size(),
          b.unconverged()};
}

namespace {

std::string fixed6(double v) { return fmt::format("{:.6f}", v); }

double round6(double v) { return std::round(v * 1e6) / 1e6; }

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

std::string render_table(std::span<const ReportRow> rows, ReportFormat format, bool sm_x1000) {
  const double scale = sm_x1000 ? 1000.0 : 1.0;
  const std::string sm_name = sm_x1000 ? "scaling_metric_x1000" : "scaling_metric";
  auto sm_text = [&](const ReportRow& r) {
    return r.scaling_metric ? fixed6(*r.scaling_metric * scale) : std::string();
  };

  std::string out;
  switch (format) {
    case ReportFormat::Csv:
      out = "model,benchmark,arise," + sm_name + ",n_samples,n_levels,unconverged_count\n";
      for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{},{}\n", csv_field(r.model), csv_field(r.benchmark),
                           fixed6(r.arise), sm_text(r), r.n_samples, r.n_levels,
                           r.unconverged_count);
      }
      break;
    case ReportFormat::Markdown:
      out = fmt::format("| model | benchmark | ARISE | {} | n_samples | n_levels | unconverged |\n",
                        sm_x1000 ? "SM×1000" : "SM");
      out += "|---|---|---:|---:|---:|---:|---:|\n";
      for (const auto& r : rows) {
        out += fmt::format("| {} | {} | {} | {} | {} | {} | {} |\n", r.model, r.benchmark,
                           fixed6(r.arise), sm_text(r), r.n_samples, r.n_levels,
                           r.unconverged_count);
      }
      break;
    case ReportFormat::Json: {
      json arr = json::array();
      for (const auto& r : rows) {
        arr.push_back({{"model", r.model},
                       {"benchmark", r.benchmark},
                       {"arise", round6(r.arise)},
                       {sm_name, r.scaling_metric ? json(round6(*r.scaling_metric * scale))
                                                  : json(nullptr)},
                       {"n_samples", r.n_samples},
                       {"n_levels", r.n_levels},
                       {"unconverged_count", r.unconverged_count}});
      }
      out = arr.dump(2) + "\n";
      break;
    }
  }
  return out;
}

std::string transitions_csv(const ResultBundle& b) {
  std::string out = "from_level,to_level,stay_correct,degrade,improve,stay_incorrect\n";
  for (const auto& t : b.transitions) {
    out += fmt::format("{},{},{},{},{},{}\n", t.from_level, t.from_level + 1, t.stay_correct,
                       t.degrade, t.improve, t.stay_incorrect);
  }
  return out;
}

StudyMode parse_study_mode(std::string_view text, const ConvergenceConfig& base,
                           std::size_t n_samples, std::size_t n_levels) {
  std::vector<std::string> parts;
  std::string current;
  for (char c : text) {
    if (c == ':') {
      parts.push_back(current);
      current.clear();
    } else {
      current += c;
    }
  }
  parts.push_back(current);

  StudyMode m;
  m.name = std::string(text);
  m.cfg = base;
  const std::string& kind = parts.front();
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || v < 0) {
      throw ArgumentError("mode '" + m.name + "': expected a non-negative integer, got '" + s + "'");
    }
    return v;
  };

  if (kind == "naive") {
    if (parts.size() != 2) throw ArgumentError("mode '" + m.name + "': use naive:K");
    const long long k = number(parts[1]);
    if (k < 1) throw ArgumentError("mode '" + m.name + "': K must be >= 1");
    m.mode = NaiveMode{static_cast<std::size_t>(k)};
  } else if (kind == "budget") {
    if (parts.size() > 2) throw ArgumentError("mode '" + m.name + "': use budget or budget:B");
    m.mode = FixedBudgetMode{parts.size() == 2 ? number(parts[1])
                                               : default_budget(n_samples, n_levels)};
  } else if (kind == "adaptive") {
    m.mode = AdaptiveMode{};
    for (std::size_t i = 1; i < parts.size(); ++i) {
      const auto eq = parts[i].find('=');
      if (eq == std::string::npos) {
        throw ArgumentError("mode '" + m.name + "': expected key=value, got '" + parts[i] + "'");
      }
      const std::string key = parts[i].substr(0, eq);
      const std::string value = parts[i].substr(eq + 1);
      if (key == "tau") {
        try {
          m.cfg.tau = std::stod(value);
        } catch (const std::exception&) {
          throw ArgumentError("mode '" + m.name + "': bad tau '" + value + "'");
        }
      } else if (key == "m_max") {
        m.cfg.m_max = static_cast<std::size_t>(number(value));
      } else if (key == "m_min") {
        m.cfg.m_min = static_cast<std::size_t>(number(value));
      } else {
        throw ArgumentError("mode '" + m.name + "': unknown setting '" + key + "'");
      }
    }
  } else {
    throw ArgumentError("unknown mode '" + m.name + "' (adaptive, budget, naive)");
  }
  m.cfg.validate();
  return m;
}

std::string study_table(std::span<const ModeSummary> summaries, ReportFormat format,
                        bool sm_x1000) {
  const double scale = sm_x1000 ? 1000.0 : 1.0;
  const std::string sm = sm_x1000 ? "sm_x1000" : "sm";
  std::string out;
  switch (format) {
    case ReportFormat::Csv:
      out = fmt::format(
          "mode,runs,arise_mean,arise_std,arise_cv,{0}_mean,{0}_std,{0}_cv,mean_total_trials,"
          "mean_unconverged\n",
          sm);
      for (const auto& s : summaries) {
        out += fmt::format("{},{},{},{},{},{},{},{},{:.2f},{:.2f}\n", csv_field(s.name),
                           s.runs.size(), fixed6(s.arise.mean), fixed6(s.arise.std),
                           fixed6(s.arise.cv), fixed6(s.scaling_metric.mean * scale),
                           fixed6(s.scaling_metric.std * scale), fixed6(s.scaling_metric.cv),
                           s.mean_total_trials, s.mean_unconverged);
      }
      break;
    case ReportFormat::Markdown:
      out = fmt::format(
          "| mode | runs | ARISE mean | ARISE std | ARISE CV | {0} mean | {0} std | {0} CV | "
          "trials | unconverged |\n",
          sm_x1000 ? "SM×1000" : "SM");
      out += "|---|---:|---:|---:|---:|---:|---:|---:|---:|---:|\n";
      for (const auto& s : summaries) {
        out += fmt::format("| {} | {} | {} | {} | {} | {} | {} | {} | {:.2f} | {:.2f} |\n", s.name,
                           s.runs.size(), fixed6(s.arise.mean), fixed6(s.arise.std),
                           fixed6(s.arise.cv), fixed6(s.scaling_metric.mean * scale),
                           fixed6(s.scaling_metric.std * scale), fixed6(s.scaling_metric.cv),
                           s.mean_total_trials, s.mean_unconverged);
      }
      break;
    case ReportFormat::Json: {
      json arr = json::array();
      for (const auto& s : summaries) {
        arr.push_back({{"mode", s.name},
                       {"runs", s.runs.size()},
                       {"arise", {{"mean", s.arise.mean}, {"std", s.arise.std}, {"cv", s.arise.cv}}},
                       {sm,
                        {{"mean", s.scaling_metric.mean * scale},
                         {"std", s.scaling_metric.std * scale},
                         {"cv", s.scaling_metric.cv}}},
                       {"mean_total_trials", s.mean_total_trials},
                       {"mean_unconverged", s.mean_unconverged}});
      }
      out = arr.dump(2) + "\n";
      break;
    }
  }
  return out;
}

std::string study_runs_csv(std::span<const ModeSummary> summaries, bool sm_x1000) {
  const double scale = sm_x1000 ? 1000.0 : 1.0;
  std::string out = fmt::format("mode,replicate,seed,arise,{},total_trials,unconverged\n",
                                sm_x1000 ? "scaling_metric_x1000" : "scaling_metric");
  for (const auto& s : summaries) {
    for (std::size_t r = 0; r < s.runs.size(); ++r) {
      const auto& run = s.runs[r];
      out += fmt::format("{},{},{},{:.17g},{:.17g},{},{}\n", csv_field(s.name), r, run.seed,
                         run.arise, run.scaling_metric * scale, run.total_trials, run.unconverged);
    }
  }
  return out;
}

}  // namespace arise
