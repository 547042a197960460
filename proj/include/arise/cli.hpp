#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "arise/report.hpp"

namespace arise::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kValidation = 1;
inline constexpr int kIncomplete = 2;
inline constexpr int kBackendFailure = 3;

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  ReportFormat format = ReportFormat::Markdown;
  bool sm_x1000 = false;
};

struct ComputeOptions {
  std::filesystem::path traces;  // run directory or trials JSONL
  std::filesystem::path out;     // bundle JSON; empty: stdout table only
};

struct RunOptionsCli {
  std::filesystem::path config;  // simulator spec or HTTP backend config
  std::filesystem::path tasks;   // required for HTTP backends
  std::filesystem::path output_dir = "runs";
  std::string run_id;  // default: <config stem>-<mode>
  std::string model;
  std::string benchmark;
  std::optional<long long> budget;  // --budget B (0: 5nJ)
  std::optional<std::size_t> naive;
  bool resume = false;
  bool dry_run = false;
  bool probe = false;
  std::size_t threads = 1;
  ConvergenceConfig cfg;
};

struct SimulateOptions {
  std::filesystem::path spec;
  std::size_t runs = 200;
  std::vector<std::string> modes{"naive:1", "adaptive"};
  std::vector<double> tau_sweep;
  std::vector<std::size_t> m_max_sweep;
  std::filesystem::path out;       // summary table
  std::filesystem::path runs_csv;  // per-run rows for box plots
  std::size_t threads = 1;
  ConvergenceConfig cfg;
};

struct ReportOptions {
  std::vector<std::filesystem::path> bundles;
  std::filesystem::path curves_dir;
  std::filesystem::path transitions_dir;
  std::filesystem::path out;
};

int cmd_compute(const ComputeOptions& opts, const GlobalOptions& global, std::ostream& out,
                std::ostream& err);
int cmd_run(const RunOptionsCli& opts, const GlobalOptions& global, std::ostream& out,
            std::ostream& err);
int cmd_simulate(const SimulateOptions& opts, const GlobalOptions& global, std::ostream& out,
                 std::ostream& err);
int cmd_report(const ReportOptions& opts, const GlobalOptions& global, std::ostream& out,
               std::ostream& err);

/// Parses argv and dispatches to a command.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace arise::cli
