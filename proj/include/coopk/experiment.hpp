#pragma once

// Experiment grid: {kernel x input} x workload x fraction x barrier x trials.
// Each trial runs the cooperative kernel next to a periodic non-cooperative
// stream (or a scripted demand trace) and a baseline run without either.

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "coopk/errors.hpp"
#include "coopk/graph_io.hpp"
#include "coopk/sim.hpp"
#include "coopk/workloads.hpp"

namespace coopk {

inline const std::vector<std::string>& workload_names() {
  static const std::vector<std::string> v{"light", "medium", "heavy", "none"};
  return v;
}
inline const std::vector<std::string>& fraction_names() {
  static const std::vector<std::string> v{"one", "quarter", "half", "allbutone"};
  return v;
}

inline int order_of(const std::vector<std::string>& names, const std::string& s) {
  auto it = std::find(names.begin(), names.end(), s);
  return it == names.end() ? static_cast<int>(names.size()) : static_cast<int>(it - names.begin());
}

struct ExperimentConfig {
  std::string program = "bfs";  // bfs | workstealing
  std::string input = "chain:1000";
  int units = 8;
  int groups = 0;  // N; 0 means one per unit
  int wgsize = 16;
  std::vector<std::string> workloads{"heavy"};
  std::vector<std::string> fractions{"half"};
  std::vector<std::string> barriers{"query"};
  std::optional<Policy::Kind> policy;  // default: target with a workload, never without
  std::vector<ScriptedEvent> script;
  int trials = 1;
  std::uint64_t seed = 1;
  SimConfig sim;  // costs, mode, quantum, ticks_per_ms, jitter, step budget
  bool baseline = true;

  ExperimentConfig() { sim.jitter = 2; }

  int n() const { return groups > 0 ? groups : units; }
  bool cooperative() const { return program.find("-plain") == std::string::npos; }

  void check() const {
    static const std::vector<std::string> programs{"bfs", "workstealing", "bfs-plain", "workstealing-plain"};
    if (std::find(programs.begin(), programs.end(), program) == programs.end())
      throw Error(ErrorKind::InvalidConfig,
                  "unknown program '" + program + "' (bfs, workstealing, bfs-plain, workstealing-plain)");
    if (input.find(',') != std::string::npos) throw Error(ErrorKind::InvalidConfig, "input must not contain ','");
    if (units < 1) throw Error(ErrorKind::InvalidConfig, "units must be >= 1");
    if (groups < 0) throw Error(ErrorKind::InvalidConfig, "groups must be >= 0");
    if (wgsize < 1) throw Error(ErrorKind::InvalidConfig, "wgsize must be >= 1");
    if (trials < 1) throw Error(ErrorKind::InvalidConfig, "trials must be >= 1");
    if (workloads.empty() || fractions.empty() || barriers.empty())
      throw Error(ErrorKind::InvalidConfig, "workload, fraction and barrier lists must be non-empty");
    for (const auto& w : workloads) {
      if (order_of(workload_names(), w) == static_cast<int>(workload_names().size()))
        throw Error(ErrorKind::InvalidConfig, "unknown workload '" + w + "'");
      if (w != "none" && !cooperative())
        throw Error(ErrorKind::InvalidConfig, "a non-cooperative workload needs a cooperative program");
    }
    for (const auto& f : fractions) fraction_groups(f, units);
    for (const auto& b : barriers) {
      auto k = barrier_kind_from_string(b);
      if (k == BarrierKind::Plain) throw Error(ErrorKind::InvalidConfig, "experiment barriers are naive or query");
    }
    Policy{policy.value_or(Policy::Kind::NeverResize), script}.check();
    sim.check();
  }
};

struct ConfigKey {
  std::string program, input, workload, fraction, barrier;

  auto rank() const {
    return std::make_tuple(program, input, order_of(workload_names(), workload), order_of(fraction_names(), fraction),
                           barrier);
  }
  bool operator<(const ConfigKey& o) const { return rank() < o.rank(); }
  bool operator==(const ConfigKey& o) const = default;
};

struct DemandMetrics {
  int index = 0;
  Tick posted = 0;
  int count = 0;
  std::optional<Tick> satisfied;
  std::optional<Tick> gather() const {
    if (!satisfied) return std::nullopt;
    return *satisfied - posted;
  }
};

struct TrialRecord {
  ConfigKey key;
  int trial = 0;
  std::uint64_t seed = 0;
  int noncoop_groups = 0;
  Tick coop_runtime = 0;
  std::optional<Tick> baseline_runtime;
  int episodes = 0;
  int final_groups = 0;
  bool output_ok = false;
  std::vector<LaunchMetrics> launches;
  std::vector<DemandMetrics> demands;

  std::optional<double> slowdown() const {
    if (!baseline_runtime || *baseline_runtime <= 0) return std::nullopt;
    return static_cast<double>(coop_runtime) / static_cast<double>(*baseline_runtime);
  }
};

struct ExperimentResult {
  std::vector<TrialRecord> records;
  std::string scheduler_trace;  // JSON lines tagged with configuration and trial
  std::string episodes;         // JSON lines tagged likewise
};

/// Per-trial seed: depends on the base seed, workload, fraction and trial but
/// not on the barrier, so naive and query runs of a trial are paired.
inline std::uint64_t trial_seed(std::uint64_t base, const std::string& workload, const std::string& fraction, int trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(order_of(workload_names(), workload)),
                    static_cast<std::uint32_t>(order_of(fraction_names(), fraction)), static_cast<std::uint32_t>(trial)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

namespace detail {

struct PreparedKernel {
  WorkloadInstance instance;
  std::function<bool(const std::vector<Word>&)> output_ok;
};

inline PreparedKernel prepare_kernel(const ExperimentConfig& cfg) {
  PreparedKernel p;
  if (cfg.program.rfind("bfs", 0) == 0) {
    auto g = parse_graph_spec(cfg.input);
    p.instance = make_bfs_instance(g, cfg.n(), cfg.wgsize, cfg.cooperative());
    auto want = bfs_oracle(g);
    auto layout = p.instance.bfs;
    p.output_ok = [want, layout](const std::vector<Word>& m) { return extract_levels(m, layout) == want; };
  } else {
    auto t = parse_tree_spec(cfg.input);
    p.instance = make_workstealing_instance(t.depth, t.branching, cfg.n(), cfg.cooperative());
    auto want = task_tree_oracle(t.depth, t.branching);
    auto log = p.instance.log;
    p.output_ok = [want, log](const std::vector<Word>& m) { return extract_processed(m, log) == want; };
  }
  return p;
}

inline std::string tag_lines(const std::string& jsonl, const ConfigKey& k, int trial) {
  std::string out;
  size_t start = 0;
  while (start < jsonl.size()) {
    size_t end = jsonl.find('\n', start);
    if (end == std::string::npos) end = jsonl.size();
    auto j = nlohmann::ordered_json::parse(jsonl.substr(start, end - start));
    nlohmann::ordered_json t;
    t["program"] = k.program;
    t["input"] = k.input;
    t["workload"] = k.workload;
    t["fraction"] = k.fraction;
    t["barrier"] = k.barrier;
    t["trial"] = trial;
    for (auto& [name, v] : j.items()) t[name] = v;
    out += t.dump() + "\n";
    start = end + 1;
  }
  return out;
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.check();
  auto kernel = detail::prepare_kernel(cfg);
  ExperimentResult res;
  std::map<std::pair<std::string, std::uint64_t>, Tick> baselines;

  std::vector<ConfigKey> keys;
  for (const auto& w : cfg.workloads)
    for (const auto& f : cfg.fractions)
      for (const auto& b : cfg.barriers) keys.push_back({cfg.program, cfg.input, w, f, b});
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

  for (const auto& key : keys) {
    for (int trial = 0; trial < cfg.trials; ++trial) {
      TrialRecord rec;
      rec.key = key;
      rec.trial = trial;
      rec.seed = trial_seed(cfg.seed, key.workload, key.fraction, trial);

      SimConfig sc = cfg.sim;
      sc.units = cfg.units;
      sc.seed = rec.seed;
      sc.barrier = barrier_kind_from_string(key.barrier);
      auto kind = cfg.policy.value_or(key.workload == "none" ? Policy::Kind::NeverResize : Policy::Kind::TargetOccupancy);
      sc.policy = Policy{kind, kind == Policy::Kind::ScriptedTrace ? cfg.script : std::vector<ScriptedEvent>{}};

      std::optional<NonCoopStream> stream;
      if (key.workload != "none") {
        rec.noncoop_groups = fraction_groups(key.fraction, cfg.units);
        auto preset = workload_preset(key.workload);
        std::mt19937_64 rng(rec.seed);
        Tick period = ms_to_ticks(preset.period_ms, sc.ticks_per_ms);
        Tick phase = static_cast<Tick>(rng() % static_cast<std::uint64_t>(std::max<Tick>(period, 1)));
        stream = make_synthetic_noncoop(preset, cfg.units, rec.noncoop_groups, sc.ticks_per_ms, phase);
      }

      auto r = run(sc, kernel.instance.launch, stream);
      rec.coop_runtime = r.metrics.coop_runtime;
      rec.episodes = r.metrics.episodes;
      rec.final_groups = r.metrics.final_groups;
      rec.output_ok = kernel.output_ok(r.final_state.shared.global);
      rec.launches = r.metrics.launches;
      for (const auto& d : r.demands) {
        if (d.requester >= 0) continue;  // stream demands are reported through launches
        DemandMetrics m{d.id, d.posted, d.count, std::nullopt};
        if (d.satisfied()) m.satisfied = d.satisfied_at();
        rec.demands.push_back(m);
      }

      if (cfg.baseline) {
        auto bkey = std::make_pair(key.barrier, rec.seed);
        auto it = baselines.find(bkey);
        if (it == baselines.end()) {
          SimConfig bc = sc;
          bc.policy = Policy::never_resize();
          it = baselines.emplace(bkey, run(bc, kernel.instance.launch).metrics.coop_runtime).first;
        }
        rec.baseline_runtime = it->second;
      }

      res.scheduler_trace += detail::tag_lines(r.scheduler_trace, key, trial);
      res.episodes += detail::tag_lines(r.episodes_jsonl(), key, trial);
      res.records.push_back(std::move(rec));
    }
  }
  return res;
}

// ---------------------------------------------------------------- statistics

struct Stats {
  std::size_t count = 0;
  double mean = 0, median = 0, max = 0;
};

inline Stats stats_of(std::vector<double> v) {
  Stats s;
  s.count = v.size();
  if (v.empty()) return s;
  std::sort(v.begin(), v.end());
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  size_t h = v.size() / 2;
  s.median = v.size() % 2 ? v[h] : (v[h - 1] + v[h]) / 2;
  s.max = v.back();
  return s;
}

/// A period median meets P when it is within 10% of it.
inline constexpr double kPeriodSlack = 1.10;

struct ConfigSummary {
  ConfigKey key;
  int trials = 0;
  int noncoop_groups = 0;
  std::optional<double> period_target_ms;
  Stats gather_ms, exec_ms, period_ms, slowdown, demand_gather_ms, coop_runtime_ms;
  double episodes_mean = 0;
  bool outputs_ok = true;

  std::optional<bool> meets_period() const {
    if (!period_target_ms || period_ms.count == 0) return std::nullopt;
    return period_ms.median <= kPeriodSlack * *period_target_ms;
  }
};

inline std::vector<ConfigSummary> summarise(const std::vector<TrialRecord>& records, Tick ticks_per_ms) {
  auto ms = [ticks_per_ms](Tick t) { return static_cast<double>(t) / static_cast<double>(ticks_per_ms); };
  std::map<ConfigKey, std::vector<const TrialRecord*>> groups;
  for (const auto& r : records) groups[r.key].push_back(&r);
  std::vector<ConfigSummary> out;
  for (const auto& [key, recs] : groups) {
    ConfigSummary s;
    s.key = key;
    s.trials = static_cast<int>(recs.size());
    s.noncoop_groups = recs.front()->noncoop_groups;
    if (key.workload != "none") s.period_target_ms = workload_preset(key.workload).period_ms;
    std::vector<double> g, e, p, sd, dg, rt;
    double eps = 0;
    for (const auto* r : recs) {
      for (const auto& l : r->launches) {
        g.push_back(ms(l.gather));
        e.push_back(ms(l.exec));
        if (l.period) p.push_back(ms(*l.period));
      }
      for (const auto& d : r->demands)
        if (auto x = d.gather()) dg.push_back(ms(*x));
      if (auto x = r->slowdown()) sd.push_back(*x);
      rt.push_back(ms(r->coop_runtime));
      eps += r->episodes;
      s.outputs_ok = s.outputs_ok && r->output_ok;
    }
    s.gather_ms = stats_of(g);
    s.exec_ms = stats_of(e);
    s.period_ms = stats_of(p);
    s.slowdown = stats_of(sd);
    s.demand_gather_ms = stats_of(dg);
    s.coop_runtime_ms = stats_of(rt);
    s.episodes_mean = eps / static_cast<double>(recs.size());
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace coopk
