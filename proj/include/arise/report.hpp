#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "arise/simulator.hpp"
#include "arise/trace_store.hpp"

namespace arise {

enum class ReportFormat { Csv, Markdown, Json };

ReportFormat parse_format(std::string_view name);

struct ReportRow {
  std::string model;
  std::string benchmark;
  double arise = 0.0;
  std::optional<double> scaling_metric;
  std::size_t n_samples = 0;
  std::size_t n_levels = 0;
  std::size_t unconverged_count = 0;
};

ReportRow report_row(const ResultBundle& bundle);

/// ARISE and SM are printed with 6 decimals; `sm_x1000` scales SM by 1000 first.
std::string render_table(std::span<const ReportRow> rows, ReportFormat format, bool sm_x1000);

/// One row per adjacent level pair:
/// from_level,to_level,stay_correct,degrade,improve,stay_incorrect
std::string transitions_csv(const ResultBundle& bundle);

/// Parses "adaptive", "adaptive:tau=0.25:m_max=20", "naive:1", "budget" or "budget:120".
/// A bare "budget" means 5 trials per configuration on average.
StudyMode parse_study_mode(std::string_view text, const ConvergenceConfig& base,
                           std::size_t n_samples, std::size_t n_levels);

/// Per-mode across-run summary.
std::string study_table(std::span<const ModeSummary> summaries, ReportFormat format,
                        bool sm_x1000);

/// mode,replicate,seed,arise,scaling_metric,total_trials,unconverged (one line per run).
std::string study_runs_csv(std::span<const ModeSummary> summaries, bool sm_x1000);

}  // namespace arise
