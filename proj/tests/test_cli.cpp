#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "arise/cli.hpp"
#include "arise/trace_store.hpp"
#include "temp_dir.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kSpec = std::string(ARISE_SOURCE_DIR) + "/configs/reference_spec.json";

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome cli(std::vector<std::string> args) {
  args.insert(args.begin(), "arise");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = arise::cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("help and parse errors") {
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({}).code == arise::cli::kValidation);
  CHECK(cli({"compute"}).code == arise::cli::kValidation);
  CHECK(cli({"run", kSpec, "--naive", "1", "--budget", "40"}).code == arise::cli::kValidation);
  CHECK(cli({"--format", "xml", "compute", "x"}).code == arise::cli::kValidation);
}

TEST_CASE("compute exit codes") {
  TempDir dir;
  std::ofstream((dir / "empty.jsonl")).close();
  const auto empty = cli({"compute", (dir / "empty.jsonl").string()});
  CHECK(empty.code == arise::cli::kIncomplete);
  CHECK(empty.err.find("incomplete") != std::string::npos);
  CHECK(cli({"compute", (dir / "missing.jsonl").string()}).code == arise::cli::kValidation);
  std::ofstream(dir / "junk.jsonl") << "{\"run_id\": 3}\n";
  CHECK(cli({"compute", (dir / "junk.jsonl").string()}).code == arise::cli::kValidation);
}

TEST_CASE("infeasible budget is rejected before anything is written") {
  TempDir dir;
  const auto r = cli({"run", kSpec, "--budget", "71", "--out-dir", (dir / "runs").string()});
  CHECK(r.code == arise::cli::kValidation);
  CHECK(r.err.find("n*J*m_min") != std::string::npos);
  CHECK(r.err.find("72") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "runs"));
  CHECK(cli({"run", kSpec, "--budget", "-4"}).code == arise::cli::kValidation);
}

TEST_CASE("adaptive run keeps every k* within bounds") {
  TempDir dir;
  const auto r = cli({"run", kSpec, "--out-dir", (dir / "runs").string(), "--run-id", "a"});
  REQUIRE(r.code == 0);
  const auto bundle = json::parse(read_all(dir / "runs" / "a" / "bundle.json"));
  CHECK(bundle["configurations"].size() == 24);
  for (const auto& c : bundle["configurations"]) {
    CHECK(c["k_star"].get<int>() >= 3);
    CHECK(c["k_star"].get<int>() <= 10);
  }
  CHECK(bundle["manifest"]["mode"] == "adaptive");
  CHECK(bundle["manifest"]["cfg"]["tau"] == 0.5);
}

TEST_CASE("fixed budget run spends the whole budget") {
  TempDir dir;
  REQUIRE(cli({"run", kSpec, "--budget", "auto", "--out-dir", (dir / "runs").string(), "--run-id",
               "b"})
              .code == 0);
  const auto run = arise::read_run(dir / "runs" / "b");
  CHECK(run.records.size() == 120);
  CHECK(run.manifest.budget == 120);
}

TEST_CASE("existing runs need --resume") {
  TempDir dir;
  const std::string out = (dir / "runs").string();
  REQUIRE(cli({"run", kSpec, "--naive", "2", "--out-dir", out}).code == 0);
  CHECK(fs::exists(dir / "runs" / "reference_spec-naive2" / "bundle.json"));
  const auto again = cli({"run", kSpec, "--naive", "2", "--out-dir", out});
  CHECK(again.code == arise::cli::kValidation);
  CHECK(again.err.find("--resume") != std::string::npos);
  CHECK(cli({"run", kSpec, "--naive", "2", "--out-dir", out, "--resume"}).code == 0);
  CHECK(cli({"run", kSpec, "--naive", "2", "--out-dir", out, "--resume", "--seed", "7"}).code ==
        arise::cli::kValidation);
}

TEST_CASE("resuming a truncated run reproduces the full run") {
  TempDir dir;
  const std::string full = (dir / "full").string();
  const std::string part = (dir / "part").string();
  REQUIRE(cli({"run", kSpec, "--out-dir", full, "--run-id", "r", "--seed", "9"}).code == 0);

  fs::create_directories(dir / "part" / "r");
  fs::copy_file(dir / "full" / "r" / "manifest.json", dir / "part" / "r" / "manifest.json");
  const auto lines = lines_of(read_all(dir / "full" / "r" / "trials.jsonl"));
  {
    std::ofstream trunc(dir / "part" / "r" / "trials.jsonl");
    for (std::size_t i = 0; i < lines.size() / 2; ++i) trunc << lines[i] << "\n";
  }
  const auto r = cli({"run", kSpec, "--out-dir", part, "--run-id", "r", "--seed", "9", "--resume"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  auto a = json::parse(read_all(dir / "full" / "r" / "bundle.json"));
  auto b = json::parse(read_all(dir / "part" / "r" / "bundle.json"));
  a["manifest"].erase("started_at");
  b["manifest"].erase("started_at");
  CHECK(a == b);
  CHECK(lines_of(read_all(dir / "part" / "r" / "trials.jsonl")).size() == lines.size());
}

TEST_CASE("global flags work after the subcommand and scale SM") {
  TempDir dir;
  REQUIRE(cli({"run", kSpec, "--naive", "3", "--seed", "5", "--out-dir", (dir / "runs").string(),
               "--run-id", "x"})
              .code == 0);
  const std::string traces = (dir / "runs" / "x").string();
  const auto plain = cli({"compute", traces, "--format", "csv"});
  const auto scaled = cli({"--sm-x1000", "--format", "csv", "compute", traces});
  REQUIRE(plain.code == 0);
  REQUIRE(scaled.code == 0);
  const auto p = lines_of(plain.out);
  const auto s = lines_of(scaled.out);
  CHECK(p[0] == "model,benchmark,arise,scaling_metric,n_samples,n_levels,unconverged_count");
  CHECK(s[0] == "model,benchmark,arise,scaling_metric_x1000,n_samples,n_levels,unconverged_count");
  auto field = [](const std::string& line, int idx) {
    std::stringstream ss(line);
    std::string f;
    for (int i = 0; i <= idx; ++i) std::getline(ss, f, ',');
    return f;
  };
  CHECK(field(p[1], 2) == field(s[1], 2));
  const double sm = std::stod(field(p[1], 3));
  const double sm1000 = std::stod(field(s[1], 3));
  CHECK(sm1000 == doctest::Approx(sm * 1000).epsilon(1e-3));
  CHECK(field(p[1], 2).size() - field(p[1], 2).find('.') - 1 == 6);

  const auto md = cli({"compute", traces, "--sm-x1000"});
  CHECK(md.out.find("SM×1000") != std::string::npos);
  const auto js = json::parse(cli({"compute", traces, "--format", "json"}).out);
  CHECK(js[0]["n_levels"] == 3);
}

TEST_CASE("simulate with one replication has zero spread") {
  const auto r = cli({"simulate", kSpec, "--runs", "1", "--format", "csv", "--modes",
                      "naive:1,adaptive,budget"});
  REQUIRE(r.code == 0);
  const auto lines = lines_of(r.out);
  REQUIRE(lines.size() == 4);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::stringstream ss(lines[i]);
    std::vector<std::string> f;
    std::string x;
    while (std::getline(ss, x, ',')) f.push_back(x);
    CHECK(f[3] == "0.000000");
    CHECK(f[6] == "0.000000");
  }
  CHECK(cli({"simulate", kSpec, "--runs", "0"}).code == arise::cli::kValidation);
  CHECK(cli({"simulate", kSpec, "--modes", "greedy"}).code == arise::cli::kValidation);
}

TEST_CASE("simulate writes per-run rows") {
  TempDir dir;
  const auto r = cli({"simulate", kSpec, "--runs", "5", "--tau-sweep", "1.0,0.25", "--m-max-sweep",
                      "20", "--runs-csv", (dir / "runs.csv").string(), "--out",
                      (dir / "summary.md").string()});
  REQUIRE(r.code == 0);
  const auto rows = lines_of(read_all(dir / "runs.csv"));
  CHECK(rows.size() == 1 + 5 * 5);
  CHECK(read_all(dir / "summary.md") == r.out);
  CHECK(r.out.find("adaptive:tau=0.25") != std::string::npos);
  CHECK(r.out.find("adaptive:m_max=20") != std::string::npos);
}

TEST_CASE("report emits curves, transitions and a shared table") {
  TempDir dir;
  {
    // 30 samples, 3 levels; 2 samples degrade between levels 1 and 2.
    arise::TrialAppender app(dir / "t.jsonl");
    for (int i = 0; i < 30; ++i) {
      for (std::size_t j = 0; j < 3; ++j) {
        arise::TrialRecordLine r;
        r.run_id = "fixture";
        r.model = "toy";
        r.sample_id = "s" + std::to_string(i);
        r.level_index = j;
        r.level_label = j == 0 ? "low" : j == 1 ? "medium" : "high";
        r.correct = (i < 20) ? 1.0 : 0.0;
        if (j == 2 && i < 2) r.correct = 0.0;
        r.completion_tokens = 100 * static_cast<std::int64_t>(j + 1) + i;
        r.timestamp = "2026-10-16T10:00:00Z";
        app.append_trial(r);
      }
    }
  }
  const std::string bundle = (dir / "fixture.json").string();
  REQUIRE(cli({"compute", (dir / "t.jsonl").string(), "--out", bundle}).code == 0);
  REQUIRE(cli({"run", kSpec, "--naive", "1", "--out-dir", (dir / "runs").string(), "--run-id",
               "sim"})
              .code == 0);
  const std::string sim = (dir / "runs" / "sim" / "bundle.json").string();

  const auto r = cli({"report", bundle, sim, "--curves", (dir / "curves").string(),
                      "--transitions", (dir / "trans").string(), "--format", "csv"});
  REQUIRE(r.code == 0);
  const auto table = lines_of(r.out);
  REQUIRE(table.size() == 3);
  CHECK(table[1].rfind("toy,", 0) == 0);
  CHECK(table[2].rfind("simulator,", 0) == 0);

  const auto curve = lines_of(read_all(dir / "curves" / "fixture.curve.csv"));
  CHECK(curve.size() == 1 + 3);
  const auto trans = lines_of(read_all(dir / "trans" / "fixture.transitions.csv"));
  REQUIRE(trans.size() == 3);
  CHECK(trans[0] == "from_level,to_level,stay_correct,degrade,improve,stay_incorrect");
  CHECK(trans[1] == "0,1,20,0,0,10");
  CHECK(trans[2] == "1,2,18,2,0,10");
  CHECK(fs::exists(dir / "curves" / "sim.curve.csv"));
}
