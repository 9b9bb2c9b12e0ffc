#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>

#include "coopk/experiment.hpp"
#include "coopk/metrics_io.hpp"

using namespace coopk;
namespace fs = std::filesystem;

namespace {

fs::path scratch_root() { return fs::temp_directory_path() / ("coopk-unit-" + std::to_string(::getpid())); }

// Removes this process's scratch tree at exit.
struct ScratchCleanup {
  ~ScratchCleanup() {
    std::error_code ec;
    fs::remove_all(scratch_root(), ec);
  }
} scratch_cleanup;

fs::path scratch(const std::string& name) {
  auto p = scratch_root() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig small_grid() {
  ExperimentConfig c;
  c.input = "chain:60";
  c.units = 4;
  c.wgsize = 4;
  c.workloads = {"heavy"};
  c.fractions = {"one", "half"};
  c.barriers = {"naive", "query"};
  c.trials = 2;
  c.seed = 9;
  c.sim.ticks_per_ms = 5;
  return c;
}

int cli(const std::string& args) {
  std::string cmd = std::string(COOPK_CLI) + " " + args + " >/dev/null 2>&1";
  int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

void expect_same(const TrialRecord& a, const TrialRecord& b) {
  EXPECT_EQ(a.key, b.key);
  EXPECT_EQ(a.trial, b.trial);
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_EQ(a.noncoop_groups, b.noncoop_groups);
  EXPECT_EQ(a.coop_runtime, b.coop_runtime);
  EXPECT_EQ(a.baseline_runtime, b.baseline_runtime);
  EXPECT_EQ(a.episodes, b.episodes);
  EXPECT_EQ(a.final_groups, b.final_groups);
  EXPECT_EQ(a.output_ok, b.output_ok);
  ASSERT_EQ(a.launches.size(), b.launches.size());
  for (size_t i = 0; i < a.launches.size(); ++i) {
    EXPECT_EQ(a.launches[i].start, b.launches[i].start);
    EXPECT_EQ(a.launches[i].gather, b.launches[i].gather);
    EXPECT_EQ(a.launches[i].period, b.launches[i].period);
  }
  ASSERT_EQ(a.demands.size(), b.demands.size());
  for (size_t i = 0; i < a.demands.size(); ++i) EXPECT_EQ(a.demands[i].gather(), b.demands[i].gather());
}

}  // namespace

// ---------------------------------------------------------------- statistics

TEST(Stats, OddAndEven) {
  auto s = stats_of({3, 1, 2});
  EXPECT_EQ(s.count, 3u);
  EXPECT_DOUBLE_EQ(s.mean, 2);
  EXPECT_DOUBLE_EQ(s.median, 2);
  EXPECT_DOUBLE_EQ(s.max, 3);
  auto e = stats_of({10, 1, 3, 2});
  EXPECT_DOUBLE_EQ(e.median, 2.5);
  EXPECT_DOUBLE_EQ(e.mean, 4);
  EXPECT_EQ(stats_of({}).count, 0u);
}

TEST(Summary, RecomputedFromTicks) {
  TrialRecord r;
  r.key = {"bfs", "chain:5", "heavy", "half", "query"};
  r.noncoop_groups = 4;
  r.coop_runtime = 1000;
  r.baseline_runtime = 800;
  r.episodes = 3;
  r.output_ok = true;
  // 250 ticks per ms: gathers 1, 3 and 7 ms, periods 42 and 44 ms
  r.launches = {{0, 4, 0, 250, 250, 2500, 2750, std::nullopt},
                {1, 4, 10000, 10750, 750, 2500, 13250, 10500},
                {2, 4, 20000, 21750, 1750, 2500, 24250, 11000}};
  r.demands = {{0, 100, 2, 600}, {1, 200, 1, std::nullopt}};
  auto s = summarise({r}, 250);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_DOUBLE_EQ(s[0].gather_ms.mean, (1.0 + 3.0 + 7.0) / 3);
  EXPECT_DOUBLE_EQ(s[0].exec_ms.max, 10);
  EXPECT_DOUBLE_EQ(s[0].period_ms.median, 43);
  EXPECT_DOUBLE_EQ(s[0].slowdown.mean, 1.25);
  EXPECT_EQ(s[0].demand_gather_ms.count, 1u);
  EXPECT_DOUBLE_EQ(s[0].demand_gather_ms.mean, 2);
  EXPECT_EQ(s[0].period_target_ms, 40);
  EXPECT_EQ(s[0].meets_period(), true);  // 43 <= 1.1 * 40
  r.launches[2].period = 12000;          // periods 42 and 48: median 45
  EXPECT_EQ(summarise({r}, 250)[0].meets_period(), false);
}

TEST(Experiment, SeedsPairBarriers) {
  EXPECT_EQ(trial_seed(1, "heavy", "half", 0), trial_seed(1, "heavy", "half", 0));
  EXPECT_NE(trial_seed(1, "heavy", "half", 0), trial_seed(1, "heavy", "half", 1));
  EXPECT_NE(trial_seed(1, "heavy", "half", 0), trial_seed(2, "heavy", "half", 0));
  EXPECT_NE(trial_seed(1, "heavy", "half", 0), trial_seed(1, "heavy", "one", 0));
}

TEST(Experiment, GridRunsInOrder) {
  auto cfg = small_grid();
  auto res = run_experiment(cfg);
  ASSERT_EQ(res.records.size(), 8u);
  EXPECT_EQ(res.records[0].key.fraction, "one");
  EXPECT_EQ(res.records[0].key.barrier, "naive");
  EXPECT_EQ(res.records[7].key.fraction, "half");
  EXPECT_EQ(res.records[7].key.barrier, "query");
  for (const auto& r : res.records) {
    EXPECT_TRUE(r.output_ok);
    EXPECT_TRUE(r.baseline_runtime.has_value());
    EXPECT_EQ(r.noncoop_groups, r.key.fraction == "one" ? 1 : 2);
  }
  // naive and query trials share seeds
  EXPECT_EQ(res.records[0].seed, res.records[2].seed);
  EXPECT_EQ(res.records[1].seed, res.records[3].seed);
  EXPECT_NE(res.records[0].seed, res.records[1].seed);
  EXPECT_NE(res.scheduler_trace.find("\"barrier\":\"query\""), std::string::npos);
}

TEST(Experiment, ScriptedDemandsRecorded) {
  auto cfg = small_grid();
  cfg.workloads = {"none"};
  cfg.fractions = {"one"};
  cfg.trials = 1;
  cfg.policy = Policy::Kind::ScriptedTrace;
  cfg.script = {{200, 2, 0}};
  auto res = run_experiment(cfg);
  ASSERT_EQ(res.records.size(), 2u);
  for (const auto& r : res.records) {
    ASSERT_EQ(r.demands.size(), 1u) << r.key.barrier;
    EXPECT_EQ(r.demands[0].count, 2);
    EXPECT_TRUE(r.demands[0].gather().has_value());
    EXPECT_TRUE(r.launches.empty());
  }
}

TEST(Experiment, ConfigValidation) {
  auto bad = [](auto mutate) {
    auto c = small_grid();
    mutate(c);
    try {
      c.check();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::MissingData;
  };
  EXPECT_EQ(bad([](ExperimentConfig& c) { c.program = "sort"; }), ErrorKind::InvalidConfig);
  EXPECT_EQ(bad([](ExperimentConfig& c) { c.trials = 0; }), ErrorKind::InvalidConfig);
  EXPECT_EQ(bad([](ExperimentConfig& c) { c.workloads = {"frantic"}; }), ErrorKind::InvalidConfig);
  EXPECT_EQ(bad([](ExperimentConfig& c) { c.fractions = {}; }), ErrorKind::InvalidConfig);
  EXPECT_EQ(bad([](ExperimentConfig& c) { c.barriers = {"plain"}; }), ErrorKind::InvalidConfig);
  EXPECT_EQ(bad([](ExperimentConfig& c) { c.program = "bfs-plain"; }), ErrorKind::InvalidConfig);
  EXPECT_EQ(bad([](ExperimentConfig& c) { c.input = "a,b"; }), ErrorKind::InvalidConfig);
  EXPECT_EQ(bad([](ExperimentConfig& c) { c.sim.quantum = 0; }), ErrorKind::InvalidConfig);
}

// ---------------------------------------------------------------- files

TEST(RunDir, CsvAndJsonRoundTrip) {
  auto cfg = small_grid();
  auto res = run_experiment(cfg);
  for (const char* fmt : {"csv", "json"}) {
    auto dir = scratch(std::string("rt-") + fmt);
    write_run_dir(dir, cfg, res, fmt);
    auto back = read_run_dir(dir);
    ASSERT_EQ(back.records.size(), res.records.size()) << fmt;
    for (size_t i = 0; i < res.records.size(); ++i) expect_same(back.records[i], res.records[i]);
    EXPECT_EQ(back.manifest["trials"], 2);
    EXPECT_EQ(back.manifest["format"], "coopk-run");
  }
}

TEST(RunDir, ReportIndependentOfFormat) {
  auto cfg = small_grid();
  auto res = run_experiment(cfg);
  auto a = scratch("fmt-csv"), b = scratch("fmt-json");
  write_run_dir(a, cfg, res, "csv");
  write_run_dir(b, cfg, res, "json");
  auto ra = build_report(read_run_dir(a), figure_names());
  auto rb = build_report(read_run_dir(b), figure_names());
  EXPECT_EQ(ra, rb);
  ASSERT_EQ(ra.size(), 4u);
  const auto& period = ra.at("period_vs_fraction.csv");
  auto t = parse_csv(period);
  EXPECT_EQ(t.header, (std::vector<std::string>{"program", "input", "workload", "fraction", "noncoop_groups", "naive",
                                                "query", "period_target_ms"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][3], "one");
  EXPECT_EQ(t.rows[0][7], "40.0000");
}

TEST(RunDir, MissingData) {
  auto empty = scratch("empty");
  try {
    read_run_dir(empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingData);
  }
  auto cfg = small_grid();
  cfg.barriers = {"query"};
  cfg.trials = 1;
  auto dir = scratch("query-only");
  write_run_dir(dir, cfg, run_experiment(cfg), "csv");
  try {
    build_report(read_run_dir(dir), figure_names());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingData);
  }
  // drop a record row: the grid is incomplete
  auto full = small_grid();
  full.trials = 1;
  auto d2 = scratch("holes");
  write_run_dir(d2, full, run_experiment(full), "csv");
  auto text = read_text(d2 / "records.csv");
  text.erase(text.rfind('\n', text.size() - 2) + 1);
  write_text(d2 / "records.csv", text);
  try {
    build_report(read_run_dir(d2), {"gather"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingData);
  }
}

TEST(RunDir, CsvParsing) {
  auto t = parse_csv("a,b\n1,\n\n3,4\n");
  EXPECT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "");
  EXPECT_EQ(t.col("b"), 1u);
  EXPECT_THROW(t.col("c"), Error);
  EXPECT_THROW(parse_csv("a,b\n1\n"), Error);
  EXPECT_THROW(parse_csv(""), Error);
}

// ---------------------------------------------------------------- command line

TEST(Cli, ExitCodes) {
  auto dir = scratch("cli");
  auto d = dir.string();
  EXPECT_EQ(cli("check --program mutex"), 0);
  EXPECT_EQ(cli("check --program mutex --fairness off --trace-out " + d + "/lasso.json"), 1);
  EXPECT_TRUE(fs::exists(dir / "lasso.json"));
  EXPECT_EQ(cli("replay " + d + "/lasso.json"), 0);
  EXPECT_EQ(cli("check --program barrier --units 2 --trace-out " + d + "/dl.json"), 1);
  EXPECT_EQ(cli("check --program resize --max-states 5"), 2);
  EXPECT_EQ(cli("run --program bfs-plain --workload none --mode occupancy --units 2 --groups 3 --input chain:20 "
                "--wgsize 2 --no-baseline --out-dir " + d + "/occ"),
            3);
  EXPECT_EQ(cli("run --units 0 --out-dir " + d + "/bad"), 4);
  EXPECT_EQ(cli("run --frobnicate"), 4);
  EXPECT_EQ(cli("report --out-dir " + d + "/nothing-here"), 5);
  EXPECT_EQ(cli("replay " + d + "/missing.json"), 5);
}

TEST(Cli, RunThenReport) {
  auto dir = scratch("cli-run");
  auto d = dir.string();
  std::string common = "run --input chain:40 --units 4 --wgsize 2 --workload heavy --fraction one,half "
                       "--barrier naive,query --trials 2 --ticks-per-ms 5 --seed 3 --out-dir " + d;
  ASSERT_EQ(cli(common), 0);
  for (const char* f : {"manifest.json", "records.csv", "launches.csv", "demands.csv", "summary.csv",
                        "scheduler_trace.jsonl", "episodes.jsonl"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  ASSERT_EQ(cli("report --out-dir " + d + " --report-dir " + d + "/rep"), 0);
  for (const char* f : {"gather_vs_fraction.csv", "exec_vs_fraction.csv", "period_vs_fraction.csv",
                        "slowdown_vs_fraction.csv"})
    EXPECT_TRUE(fs::exists(dir / "rep" / f)) << f;
  auto first = read_text(dir / "rep" / "gather_vs_fraction.csv");
  ASSERT_EQ(cli("report --out-dir " + d + " --report-dir " + d + "/rep2"), 0);
  EXPECT_EQ(read_text(dir / "rep2" / "gather_vs_fraction.csv"), first);
}
