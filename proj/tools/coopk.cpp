// coopk: run experiments, check kernels, build report series, replay traces.
//
// Exit codes: 0 ok, 1 counterexample, 2 exploration budget exhausted,
// 3 deadlock, 4 invalid configuration or flags, 5 missing data, 6 other error.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "coopk/assembler.hpp"
#include "coopk/checker.hpp"
#include "coopk/experiment.hpp"
#include "coopk/metrics_io.hpp"
#include "coopk/validate.hpp"
#include "coopk/workloads.hpp"

namespace {

using namespace coopk;

enum Exit : int { kOk = 0, kCounterexample = 1, kBudget = 2, kDeadlock = 3, kInvalid = 4, kMissing = 5, kFailure = 6 };

int exit_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::Deadlock: return kDeadlock;
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidInterval:
    case ErrorKind::Parse:
    case ErrorKind::Validation:
    case ErrorKind::RejectedNoCapacity: return kInvalid;
    case ErrorKind::MissingData: return kMissing;
    default: return kFailure;
  }
}

std::vector<ScriptedEvent> parse_script(const std::string& text) {
  std::vector<ScriptedEvent> out;
  if (text.empty()) return out;
  for (const auto& item : split(text, ',')) {
    auto f = split(item, ':');
    if (f.size() < 2 || f.size() > 3) throw Error(ErrorKind::InvalidConfig, "script item '" + item + "' is not AT:DEMAND[:GRANT]");
    ScriptedEvent e;
    e.at = parse_number(f[0], "script time");
    e.demand = static_cast<int>(parse_number(f[1], "script demand"));
    e.grant = f.size() == 3 ? static_cast<int>(parse_number(f[2], "script grant")) : 0;
    out.push_back(e);
  }
  return out;
}

std::vector<Word> parse_words(const std::string& text) {
  std::vector<Word> out;
  if (text.empty()) return out;
  for (const auto& s : split(text, ',')) out.push_back(parse_number(s, "word"));
  return out;
}

// ---------------------------------------------------------------- run

struct RunFlags {
  ExperimentConfig cfg;
  std::string policy = "auto";
  std::string script;
  std::string mode = "fair";
  std::string out_dir = "coopk-out";
  std::string format = "csv";
  bool no_baseline = false;
};

void add_run(CLI::App& app, RunFlags& f) {
  auto* run = app.add_subcommand("run", "Run an experiment grid and write metric files");
  run->set_config("--config", "", "Read flags from a TOML/INI file");
  auto& c = f.cfg;
  run->add_option("--program", c.program, "bfs | workstealing | bfs-plain | workstealing-plain")->capture_default_str();
  run->add_option("--input", c.input, "Graph spec KIND:SIZE[:SEED] or file, or tree:DEPTH:BRANCHING")->capture_default_str();
  run->add_option("--units", c.units, "Compute units")->capture_default_str();
  run->add_option("--groups", c.groups, "Cooperative launch size N (0: one per unit)")->capture_default_str();
  run->add_option("--wgsize", c.wgsize, "Threads per workgroup")->capture_default_str();
  run->add_option("--workload", c.workloads, "light | medium | heavy | none (comma list)")->delimiter(',')->capture_default_str();
  run->add_option("--fraction", c.fractions, "one | quarter | half | allbutone (comma list)")->delimiter(',')->capture_default_str();
  run->add_option("--barrier", c.barriers, "naive | query (comma list)")->delimiter(',')->capture_default_str();
  run->add_option("--policy", f.policy, "auto | never | scripted | target")->capture_default_str();
  run->add_option("--script", f.script, "Scripted events AT:DEMAND[:GRANT],... in ticks");
  run->add_option("--trials", c.trials, "Trials per configuration")->capture_default_str();
  run->add_option("--seed", c.seed, "Base seed")->capture_default_str();
  run->add_option("--out-dir", f.out_dir, "Output directory")->capture_default_str();
  run->add_option("--format", f.format, "csv | json")->capture_default_str();
  run->add_option("--mode", f.mode, "fair | occupancy")->capture_default_str();
  run->add_option("--quantum", c.sim.quantum, "Fair-mode quantum in workgroup events")->capture_default_str();
  run->add_option("--ticks-per-ms", c.sim.ticks_per_ms, "Virtual ticks per virtual millisecond")->capture_default_str();
  run->add_option("--jitter", c.sim.jitter, "Maximum extra ticks per workgroup step")->capture_default_str();
  run->add_option("--step-budget", c.sim.step_budget, "Maximum simulation events per run")->capture_default_str();
  run->add_option("--cost-alu", c.sim.costs.alu)->capture_default_str();
  run->add_option("--cost-global", c.sim.costs.global)->capture_default_str();
  run->add_option("--cost-local", c.sim.costs.local)->capture_default_str();
  run->add_option("--cost-atomic", c.sim.costs.atomic)->capture_default_str();
  run->add_option("--cost-primitive", c.sim.costs.primitive)->capture_default_str();
  run->add_option("--cost-barrier", c.sim.costs.barrier)->capture_default_str();
  run->add_flag("--no-baseline", f.no_baseline, "Skip the baseline runs used for slowdown");
}

int cmd_run(RunFlags& f) {
  auto& c = f.cfg;
  c.sim.mode = exec_mode_from_string(f.mode);
  if (f.policy != "auto") c.policy = policy_kind_from_string(f.policy);
  c.script = parse_script(f.script);
  c.baseline = !f.no_baseline;
  if (!c.script.empty() && c.policy != Policy::Kind::ScriptedTrace)
    throw Error(ErrorKind::InvalidConfig, "--script needs --policy scripted");
  if (f.format != "csv" && f.format != "json") throw Error(ErrorKind::InvalidConfig, "--format must be csv or json");
  auto res = run_experiment(c);
  auto files = write_run_dir(f.out_dir, c, res, f.format);
  auto sums = summarise(res.records, c.sim.ticks_per_ms);
  std::cout << std::left << std::setw(10) << "workload" << std::setw(11) << "fraction" << std::setw(8) << "barrier"
            << std::right << std::setw(8) << "trials" << std::setw(12) << "gather_ms" << std::setw(12) << "exec_ms"
            << std::setw(12) << "period_ms" << std::setw(10) << "meets_P" << std::setw(10) << "slowdown" << "\n";
  for (const auto& s : sums) {
    auto cell = [](const Stats& st, bool median) { return st.count ? fmt_num(median ? st.median : st.mean) : std::string("-"); };
    auto meets = s.meets_period();
    std::cout << std::left << std::setw(10) << s.key.workload << std::setw(11) << s.key.fraction << std::setw(8)
              << s.key.barrier << std::right << std::setw(8) << s.trials << std::setw(12) << cell(s.gather_ms, false)
              << std::setw(12) << cell(s.exec_ms, false) << std::setw(12) << cell(s.period_ms, true) << std::setw(10)
              << (meets ? (*meets ? "yes" : "no") : "-") << std::setw(10) << cell(s.slowdown, false) << "\n";
    if (!s.outputs_ok) std::cerr << "warning: outputs differ from the oracle for " << key_columns(s.key) << "\n";
  }
  std::cout << "wrote";
  for (const auto& file : files) std::cout << " " << (std::filesystem::path(f.out_dir) / file).string();
  std::cout << "\n";
  return kOk;
}

// ---------------------------------------------------------------- check

struct CheckFlags {
  std::string program = "mutex";
  int n = 0;
  int d = 0;
  std::size_t max_states = 500000;
  std::size_t max_depth = 1000000;
  int fork_cap = 2;
  std::string fairness = "on";
  int units = 0;
  int initial_groups = -1;
  std::string memory;
  std::string args;
  std::string trace_out = "counterexample.json";
  bool json = false;
};

void add_check(CLI::App& app, CheckFlags& f) {
  auto* check = app.add_subcommand("check", "Exhaustively explore a small kernel");
  check->set_config("--config", "", "Read flags from a TOML/INI file");
  check->add_option("--program", f.program, "mutex | barrier | resize | path to a kernel file")->capture_default_str();
  check->add_option("--n", f.n, "Launch size N (0: the program's .groups)");
  check->add_option("--d", f.d, "Threads per workgroup (0: the program's .wgsize)");
  check->add_option("--max-states", f.max_states, "State budget")->capture_default_str();
  check->add_option("--max-depth", f.max_depth, "Depth budget")->capture_default_str();
  check->add_option("--fork-cap", f.fork_cap, "Largest k offered at request_fork")->capture_default_str();
  check->add_option("--fairness", f.fairness, "on | off")->capture_default_str();
  check->add_option("--units", f.units, "Occupancy-bound compute units (0: every workgroup runs)")->capture_default_str();
  check->add_option("--initial-groups", f.initial_groups,
                    "Initial active count (-1: N for plain kernels, every value in [1, N] otherwise; 0: every value)");
  check->add_option("--memory", f.memory, "Initial global memory, comma separated");
  check->add_option("--args", f.args, "Kernel arguments, comma separated");
  check->add_option("--trace-out", f.trace_out, "Where to write the first counterexample")->capture_default_str();
  check->add_flag("--json", f.json, "Print the verdicts as JSON");
}

int cmd_check(const CheckFlags& f) {
  ExplorationTarget target;
  ExplorationConfig cfg;
  cfg.max_states = f.max_states;
  cfg.max_depth = f.max_depth;
  cfg.fork_cap = f.fork_cap;
  cfg.occupancy_units = f.units;
  if (f.fairness != "on" && f.fairness != "off") throw Error(ErrorKind::InvalidConfig, "--fairness must be on or off");
  cfg.fairness = f.fairness == "on";

  DemoKernel demo;
  if (f.program == "mutex") demo = mutex_demo();
  else if (f.program == "barrier") demo = barrier_demo();
  else if (f.program == "resize") demo = resize_demo();
  else {
    std::filesystem::path p(f.program);
    demo.program = std::make_shared<const Program>(assemble(read_text(p)));
    demo.groups = demo.program->groups;
    demo.wgsize = demo.program->wgsize;
  }
  auto report = validate(*demo.program);
  if (!report.ok()) throw Error(ErrorKind::Validation, report.summary());
  if (demo.critical.first >= 0) cfg.invariants.push_back(mutex_invariant(demo.critical.first, demo.critical.second));
  target.program = demo.program;
  target.groups = f.n > 0 ? f.n : std::max(1, demo.groups);
  target.wgsize = f.d > 0 ? f.d : std::max(1, demo.wgsize);
  target.memory = f.memory.empty() ? demo.memory : parse_words(f.memory);
  target.args = parse_words(f.args);

  bool cooperative = false;
  for (const auto& ins : demo.program->code)
    if (ins.op == Op::OfferKill || ins.op == Op::RequestFork || ins.op == Op::ResizingBarrier) cooperative = true;
  cfg.initial_groups = f.initial_groups >= 0 ? f.initial_groups : (cooperative ? 0 : target.groups);

  auto rep = explore(target, cfg);
  std::optional<std::pair<std::string, Counterexample>> first;
  for (const auto& v : rep.verdicts)
    if (v.trace && !first) first = {v.property, *v.trace};

  if (f.json) {
    nlohmann::ordered_json j;
    j["states"] = rep.states;
    j["transitions"] = rep.transitions;
    j["depth"] = rep.depth;
    j["exhaustive"] = rep.exhaustive;
    j["frontier"] = rep.frontier;
    j["completes"] = rep.completes;
    auto& vs = j["verdicts"] = nlohmann::ordered_json::object();
    for (const auto& v : rep.verdicts) vs[v.property] = std::string(to_string(v.status));
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "states " << rep.states << ", transitions " << rep.transitions << ", depth " << rep.depth
              << (rep.exhaustive ? ", exhaustive" : ", budget exhausted (frontier " + std::to_string(rep.frontier) + ")")
              << ", terminating schedule " << (rep.completes ? "exists" : "does not exist") << "\n";
    for (const auto& v : rep.verdicts) {
      std::cout << "  " << std::left << std::setw(24) << v.property << to_string(v.status);
      if (v.trace) std::cout << ": " << v.trace->message;
      std::cout << "\n";
    }
  }
  if (first) {
    write_text(f.trace_out, trace_to_json(target, cfg, first->first, first->second).dump(2) + "\n");
    std::cerr << (first->second.loop_start ? "lasso" : "counterexample") << " trace for " << first->first << ": "
              << f.trace_out << "\n";
  }
  switch (rep.overall()) {
    case VerdictStatus::Pass: return kOk;
    case VerdictStatus::Counterexample: return kCounterexample;
    case VerdictStatus::BudgetExhausted: return kBudget;
  }
  return kFailure;
}

// ---------------------------------------------------------------- report

struct ReportFlags {
  std::string out_dir = "coopk-out";
  std::string report_dir;
  std::vector<std::string> figures{"gather", "exec", "period", "slowdown"};
};

void add_report(CLI::App& app, ReportFlags& f) {
  auto* rep = app.add_subcommand("report", "Build figure series CSVs from a run directory");
  rep->set_config("--config", "", "Read flags from a TOML/INI file");
  rep->add_option("--out-dir", f.out_dir, "Run directory to read")->capture_default_str();
  rep->add_option("--report-dir", f.report_dir, "Where to write series (default: the run directory)");
  rep->add_option("--figure", f.figures, "gather | exec | period | slowdown (comma list)")->delimiter(',')->capture_default_str();
}

int cmd_report(const ReportFlags& f) {
  auto run = read_run_dir(f.out_dir);
  auto files = build_report(run, f.figures);
  std::filesystem::path dir = f.report_dir.empty() ? std::filesystem::path(f.out_dir) : std::filesystem::path(f.report_dir);
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] : files) {
    write_text(dir / name, text);
    std::cout << (dir / name).string() << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------- replay

struct ReplayFlags {
  std::string trace;
};

void add_replay(CLI::App& app, ReplayFlags& f) {
  auto* rep = app.add_subcommand("replay", "Re-execute a checker trace step by step");
  rep->add_option("trace", f.trace, "Trace file written by check")->required();
}

int cmd_replay(const ReplayFlags& f) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(f.trace));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, e.what());
  }
  auto r = replay_trace(j);
  const auto& steps = j.at("steps");
  for (size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    if (!j.at("loop_start").is_null() && j.at("loop_start").get<size_t>() == i) std::cout << "-- loop --\n";
    std::cout << std::setw(4) << i << "  " << s.at("rule").get<std::string>() << " wg=" << s.at("wg").get<int>();
    if (s.at("tid").get<int>() >= 0) std::cout << " tid=" << s.at("tid").get<int>();
    if (s.at("rule") == "fork") std::cout << " k=" << s.at("choice").get<Word>();
    std::cout << "  M=" << r.states[i + 1].M << "\n";
  }
  std::cout << "property " << j.at("property").get<std::string>() << ": " << j.at("message").get<std::string>() << "\n";
  if (r.error) std::cout << "last step raised " << *r.error << "\n";
  if (!j.at("loop_start").is_null()) std::cout << "loop " << (r.loop_closes ? "closes" : "does not close") << "\n";
  std::cout << "replayed " << steps.size() << " steps, final M=" << r.final_state.M << "\n";
  return (j.at("loop_start").is_null() || r.loop_closes) ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cooperative kernel simulator, checker and experiment driver"};
  app.require_subcommand(1);
  RunFlags run_flags;
  CheckFlags check_flags;
  ReportFlags report_flags;
  ReplayFlags replay_flags;
  add_run(app, run_flags);
  add_check(app, check_flags);
  add_report(app, report_flags);
  add_replay(app, replay_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    if (app.got_subcommand("run")) return cmd_run(run_flags);
    if (app.got_subcommand("check")) return cmd_check(check_flags);
    if (app.got_subcommand("report")) return cmd_report(report_flags);
    if (app.got_subcommand("replay")) return cmd_replay(replay_flags);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kInvalid;
}
