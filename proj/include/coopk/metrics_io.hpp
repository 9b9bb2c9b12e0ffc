#pragma once

// Run directories (docs/formats.md): manifest, per-trial records, launches,
// demands, summary and JSON-lines traces; plus the figure-series report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coopk/errors.hpp"
#include "coopk/experiment.hpp"

namespace coopk {

inline constexpr int kRunFormatVersion = 1;

inline std::string fmt_num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}
template <class T>
std::string fmt_opt(const std::optional<T>& v) {
  if (!v) return "";
  if constexpr (std::is_floating_point_v<T>) return fmt_num(*v);
  else return std::to_string(*v);
}

inline std::string key_columns(const ConfigKey& k) {
  return k.program + "," + k.input + "," + k.workload + "," + k.fraction + "," + k.barrier;
}
inline constexpr const char* kKeyHeader = "program,input,workload,fraction,barrier";

// ---------------------------------------------------------------- manifest

inline nlohmann::ordered_json manifest_json(const ExperimentConfig& cfg, const std::string& format) {
  nlohmann::ordered_json m;
  m["format"] = "coopk-run";
  m["version"] = kRunFormatVersion;
  m["records"] = format;
  m["program"] = cfg.program;
  m["input"] = cfg.input;
  m["units"] = cfg.units;
  m["groups"] = cfg.n();
  m["wgsize"] = cfg.wgsize;
  m["workloads"] = cfg.workloads;
  m["fractions"] = cfg.fractions;
  m["barriers"] = cfg.barriers;
  m["policy"] = cfg.policy ? std::string(to_string(*cfg.policy)) : std::string("auto");
  auto& script = m["script"] = nlohmann::ordered_json::array();
  for (const auto& e : cfg.script) script.push_back({{"at", e.at}, {"demand", e.demand}, {"grant", e.grant}});
  m["trials"] = cfg.trials;
  m["seed"] = cfg.seed;
  m["mode"] = std::string(to_string(cfg.sim.mode));
  m["quantum"] = cfg.sim.quantum;
  m["ticks_per_ms"] = cfg.sim.ticks_per_ms;
  m["jitter"] = cfg.sim.jitter;
  m["step_budget"] = cfg.sim.step_budget;
  const auto& c = cfg.sim.costs;
  m["costs"] = {{"alu", c.alu},         {"global", c.global},       {"local", c.local},
                {"atomic", c.atomic},   {"primitive", c.primitive}, {"barrier", c.barrier}};
  m["period_slack"] = kPeriodSlack;
  return m;
}

// ---------------------------------------------------------------- CSV

inline std::string records_csv(const std::vector<TrialRecord>& recs) {
  std::string out = std::string(kKeyHeader) +
                    ",trial,seed,noncoop_groups,coop_runtime,baseline_runtime,slowdown,episodes,final_groups,launches,"
                    "output_ok\n";
  for (const auto& r : recs) {
    out += key_columns(r.key) + "," + std::to_string(r.trial) + "," + std::to_string(r.seed) + "," +
           std::to_string(r.noncoop_groups) + "," + std::to_string(r.coop_runtime) + "," + fmt_opt(r.baseline_runtime) +
           "," + fmt_opt(r.slowdown()) + "," + std::to_string(r.episodes) + "," + std::to_string(r.final_groups) + "," +
           std::to_string(r.launches.size()) + "," + (r.output_ok ? "1" : "0") + "\n";
  }
  return out;
}

inline std::string launches_csv(const std::vector<TrialRecord>& recs) {
  std::string out = std::string(kKeyHeader) + ",trial,launch,workgroups,requested,start,gather,exec,end,period\n";
  for (const auto& r : recs)
    for (const auto& l : r.launches)
      out += key_columns(r.key) + "," + std::to_string(r.trial) + "," + std::to_string(l.index) + "," +
             std::to_string(l.workgroups) + "," + std::to_string(l.requested) + "," + std::to_string(l.start) + "," +
             std::to_string(l.gather) + "," + std::to_string(l.exec) + "," + std::to_string(l.end) + "," +
             fmt_opt(l.period) + "\n";
  return out;
}

inline std::string demands_csv(const std::vector<TrialRecord>& recs) {
  std::string out = std::string(kKeyHeader) + ",trial,demand,posted,count,satisfied,gather\n";
  for (const auto& r : recs)
    for (const auto& d : r.demands)
      out += key_columns(r.key) + "," + std::to_string(r.trial) + "," + std::to_string(d.index) + "," +
             std::to_string(d.posted) + "," + std::to_string(d.count) + "," + fmt_opt(d.satisfied) + "," +
             fmt_opt(d.gather()) + "\n";
  return out;
}

inline void stats_header(std::string& out, const std::string& name) {
  out += "," + name + "_mean," + name + "_median," + name + "_max";
}
inline void stats_cells(std::string& out, const Stats& s) {
  if (s.count == 0) {
    out += ",,,";
    return;
  }
  out += "," + fmt_num(s.mean) + "," + fmt_num(s.median) + "," + fmt_num(s.max);
}

inline std::string summary_csv(const std::vector<ConfigSummary>& sums) {
  std::string out = std::string(kKeyHeader) + ",trials,noncoop_groups,launches";
  for (auto n : {"gather_ms", "exec_ms", "period_ms", "slowdown", "demand_gather_ms", "coop_runtime_ms"})
    stats_header(out, n);
  out += ",episodes_mean,period_target_ms,meets_period,outputs_ok\n";
  for (const auto& s : sums) {
    out += key_columns(s.key) + "," + std::to_string(s.trials) + "," + std::to_string(s.noncoop_groups) + "," +
           std::to_string(s.exec_ms.count);
    for (const auto* st : {&s.gather_ms, &s.exec_ms, &s.period_ms, &s.slowdown, &s.demand_gather_ms, &s.coop_runtime_ms})
      stats_cells(out, *st);
    auto meets = s.meets_period();
    out += "," + fmt_num(s.episodes_mean) + "," + fmt_opt(s.period_target_ms) + "," +
           (meets ? (*meets ? "1" : "0") : "") + "," + (s.outputs_ok ? "1" : "0") + "\n";
  }
  return out;
}

// ---------------------------------------------------------------- JSON

inline nlohmann::ordered_json stats_json(const Stats& s) {
  if (s.count == 0) return nullptr;
  return {{"count", s.count}, {"mean", s.mean}, {"median", s.median}, {"max", s.max}};
}

inline nlohmann::ordered_json key_json(const ConfigKey& k) {
  return {{"program", k.program},
          {"input", k.input},
          {"workload", k.workload},
          {"fraction", k.fraction},
          {"barrier", k.barrier}};
}

inline nlohmann::ordered_json records_json(const std::vector<TrialRecord>& recs) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : recs) {
    auto j = key_json(r.key);
    j["trial"] = r.trial;
    j["seed"] = r.seed;
    j["noncoop_groups"] = r.noncoop_groups;
    j["coop_runtime"] = r.coop_runtime;
    j["baseline_runtime"] = r.baseline_runtime ? nlohmann::ordered_json(*r.baseline_runtime) : nlohmann::ordered_json(nullptr);
    j["episodes"] = r.episodes;
    j["final_groups"] = r.final_groups;
    j["output_ok"] = r.output_ok;
    auto& ls = j["launches"] = nlohmann::ordered_json::array();
    for (const auto& l : r.launches)
      ls.push_back({{"launch", l.index},
                    {"workgroups", l.workgroups},
                    {"requested", l.requested},
                    {"start", l.start},
                    {"gather", l.gather},
                    {"exec", l.exec},
                    {"end", l.end},
                    {"period", l.period ? nlohmann::ordered_json(*l.period) : nlohmann::ordered_json(nullptr)}});
    auto& ds = j["demands"] = nlohmann::ordered_json::array();
    for (const auto& d : r.demands)
      ds.push_back({{"demand", d.index},
                    {"posted", d.posted},
                    {"count", d.count},
                    {"satisfied", d.satisfied ? nlohmann::ordered_json(*d.satisfied) : nlohmann::ordered_json(nullptr)}});
    arr.push_back(std::move(j));
  }
  return arr;
}

inline nlohmann::ordered_json summary_json(const std::vector<ConfigSummary>& sums) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : sums) {
    auto j = key_json(s.key);
    j["trials"] = s.trials;
    j["noncoop_groups"] = s.noncoop_groups;
    j["gather_ms"] = stats_json(s.gather_ms);
    j["exec_ms"] = stats_json(s.exec_ms);
    j["period_ms"] = stats_json(s.period_ms);
    j["slowdown"] = stats_json(s.slowdown);
    j["demand_gather_ms"] = stats_json(s.demand_gather_ms);
    j["coop_runtime_ms"] = stats_json(s.coop_runtime_ms);
    j["episodes_mean"] = s.episodes_mean;
    j["period_target_ms"] = s.period_target_ms ? nlohmann::ordered_json(*s.period_target_ms) : nlohmann::ordered_json(nullptr);
    auto meets = s.meets_period();
    j["meets_period"] = meets ? nlohmann::ordered_json(*meets) : nlohmann::ordered_json(nullptr);
    j["outputs_ok"] = s.outputs_ok;
    arr.push_back(std::move(j));
  }
  return arr;
}

// ---------------------------------------------------------------- files

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::InvalidConfig, "cannot write '" + p.string() + "'");
  f << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorKind::MissingData, "cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Writes every artifact of a run; returns the file names written.
inline std::vector<std::string> write_run_dir(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                                              const ExperimentResult& res, const std::string& format) {
  if (format != "csv" && format != "json") throw Error(ErrorKind::InvalidConfig, "format must be csv or json");
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  auto put = [&](const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    files.push_back(name);
  };
  put("manifest.json", manifest_json(cfg, format).dump(2) + "\n");
  auto sums = summarise(res.records, cfg.sim.ticks_per_ms);
  if (format == "csv") {
    put("records.csv", records_csv(res.records));
    put("launches.csv", launches_csv(res.records));
    put("demands.csv", demands_csv(res.records));
    put("summary.csv", summary_csv(sums));
  } else {
    put("records.json", records_json(res.records).dump(2) + "\n");
    put("summary.json", summary_json(sums).dump(2) + "\n");
  }
  put("scheduler_trace.jsonl", res.scheduler_trace);
  put("episodes.jsonl", res.episodes);
  return files;
}

// ---------------------------------------------------------------- reading back

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  size_t col(const std::string& name) const {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error(ErrorKind::Parse, "missing CSV column '" + name + "'");
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream is(text);
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split(line, ',');
    if (first) {
      t.header = std::move(cells);
      first = false;
      continue;
    }
    if (cells.size() != t.header.size()) throw Error(ErrorKind::Parse, "ragged CSV row: " + line);
    t.rows.push_back(std::move(cells));
  }
  if (first) throw Error(ErrorKind::Parse, "empty CSV file");
  return t;
}

struct RunDir {
  nlohmann::json manifest;
  std::vector<TrialRecord> records;
};

namespace detail {

template <class T>
std::optional<T> opt_cell(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return static_cast<T>(parse_number(s, "number"));
}

inline ConfigKey key_from_row(const CsvTable& t, const std::vector<std::string>& r) {
  return {r[t.col("program")], r[t.col("input")], r[t.col("workload")], r[t.col("fraction")], r[t.col("barrier")]};
}

inline std::string trial_id(const ConfigKey& k, int trial) { return key_columns(k) + "#" + std::to_string(trial); }

inline std::vector<TrialRecord> records_from_csv(const std::filesystem::path& dir) {
  auto rt = parse_csv(read_text(dir / "records.csv"));
  std::vector<TrialRecord> recs;
  std::map<std::string, size_t> where;
  for (const auto& r : rt.rows) {
    TrialRecord x;
    x.key = key_from_row(rt, r);
    x.trial = static_cast<int>(parse_number(r[rt.col("trial")], "trial"));
    x.seed = std::stoull(r[rt.col("seed")]);
    x.noncoop_groups = static_cast<int>(parse_number(r[rt.col("noncoop_groups")], "noncoop_groups"));
    x.coop_runtime = parse_number(r[rt.col("coop_runtime")], "coop_runtime");
    x.baseline_runtime = opt_cell<Tick>(r[rt.col("baseline_runtime")]);
    x.episodes = static_cast<int>(parse_number(r[rt.col("episodes")], "episodes"));
    x.final_groups = static_cast<int>(parse_number(r[rt.col("final_groups")], "final_groups"));
    x.output_ok = r[rt.col("output_ok")] == "1";
    where[trial_id(x.key, x.trial)] = recs.size();
    recs.push_back(std::move(x));
  }
  auto lt = parse_csv(read_text(dir / "launches.csv"));
  for (const auto& r : lt.rows) {
    auto id = trial_id(key_from_row(lt, r), static_cast<int>(parse_number(r[lt.col("trial")], "trial")));
    if (!where.count(id)) throw Error(ErrorKind::MissingData, "launch row without a record: " + id);
    LaunchMetrics l;
    l.index = static_cast<int>(parse_number(r[lt.col("launch")], "launch"));
    l.workgroups = static_cast<int>(parse_number(r[lt.col("workgroups")], "workgroups"));
    l.requested = parse_number(r[lt.col("requested")], "requested");
    l.start = parse_number(r[lt.col("start")], "start");
    l.gather = parse_number(r[lt.col("gather")], "gather");
    l.exec = parse_number(r[lt.col("exec")], "exec");
    l.end = parse_number(r[lt.col("end")], "end");
    l.period = opt_cell<Tick>(r[lt.col("period")]);
    recs[where[id]].launches.push_back(l);
  }
  auto dt = parse_csv(read_text(dir / "demands.csv"));
  for (const auto& r : dt.rows) {
    auto id = trial_id(key_from_row(dt, r), static_cast<int>(parse_number(r[dt.col("trial")], "trial")));
    if (!where.count(id)) throw Error(ErrorKind::MissingData, "demand row without a record: " + id);
    DemandMetrics d;
    d.index = static_cast<int>(parse_number(r[dt.col("demand")], "demand"));
    d.posted = parse_number(r[dt.col("posted")], "posted");
    d.count = static_cast<int>(parse_number(r[dt.col("count")], "count"));
    d.satisfied = opt_cell<Tick>(r[dt.col("satisfied")]);
    recs[where[id]].demands.push_back(d);
  }
  return recs;
}

template <class T>
std::optional<T> opt_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<T>();
}

inline std::vector<TrialRecord> records_from_json(const std::filesystem::path& dir) {
  auto arr = nlohmann::json::parse(read_text(dir / "records.json"));
  std::vector<TrialRecord> recs;
  for (const auto& j : arr) {
    TrialRecord x;
    x.key = {j.at("program"), j.at("input"), j.at("workload"), j.at("fraction"), j.at("barrier")};
    x.trial = j.at("trial");
    x.seed = j.at("seed");
    x.noncoop_groups = j.at("noncoop_groups");
    x.coop_runtime = j.at("coop_runtime");
    x.baseline_runtime = opt_json<Tick>(j.at("baseline_runtime"));
    x.episodes = j.at("episodes");
    x.final_groups = j.at("final_groups");
    x.output_ok = j.at("output_ok");
    for (const auto& l : j.at("launches"))
      x.launches.push_back({l.at("launch"), l.at("workgroups"), l.at("requested"), l.at("start"), l.at("gather"),
                            l.at("exec"), l.at("end"), opt_json<Tick>(l.at("period"))});
    for (const auto& d : j.at("demands"))
      x.demands.push_back({d.at("demand"), d.at("posted"), d.at("count"), opt_json<Tick>(d.at("satisfied"))});
    recs.push_back(std::move(x));
  }
  return recs;
}

}  // namespace detail

inline RunDir read_run_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "manifest.json"))
    throw Error(ErrorKind::MissingData, "no manifest.json in '" + dir.string() + "'");
  RunDir r;
  try {
    r.manifest = nlohmann::json::parse(read_text(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("manifest: ") + e.what());
  }
  if (r.manifest.value("format", "") != "coopk-run") throw Error(ErrorKind::Parse, "not a coopk run directory");
  auto format = r.manifest.at("records").get<std::string>();
  r.records = format == "csv" ? detail::records_from_csv(dir) : detail::records_from_json(dir);
  if (r.records.empty()) throw Error(ErrorKind::MissingData, "run directory has no records");
  return r;
}

// ---------------------------------------------------------------- report

inline const std::vector<std::string>& figure_names() {
  static const std::vector<std::string> v{"gather", "exec", "period", "slowdown"};
  return v;
}

/// Figure-analogue series: one row per (program, input, workload, fraction),
/// naive and query as columns. Returns file name -> CSV text.
inline std::map<std::string, std::string> build_report(const RunDir& run, const std::vector<std::string>& figures) {
  const Tick tpm = run.manifest.at("ticks_per_ms").get<Tick>();
  auto sums = summarise(run.records, tpm);
  std::map<ConfigKey, const ConfigSummary*> by_key;
  for (const auto& s : sums) by_key[s.key] = &s;

  // Every configuration the manifest declares must be present.
  std::set<std::tuple<int, int>> rows;
  const auto program = run.manifest.at("program").get<std::string>();
  const auto input = run.manifest.at("input").get<std::string>();
  const auto workloads = run.manifest.at("workloads").get<std::vector<std::string>>();
  const auto fractions = run.manifest.at("fractions").get<std::vector<std::string>>();
  const auto barriers = run.manifest.at("barriers").get<std::vector<std::string>>();
  const int trials = run.manifest.at("trials").get<int>();
  for (const auto& b : {"naive", "query"})
    if (std::find(barriers.begin(), barriers.end(), b) == barriers.end())
      throw Error(ErrorKind::MissingData, std::string("grid has no '") + b + "' barrier runs");
  for (const auto& w : workloads)
    for (const auto& f : fractions)
      for (const auto& b : barriers) {
        ConfigKey k{program, input, w, f, b};
        auto it = by_key.find(k);
        if (it == by_key.end() || it->second->trials != trials)
          throw Error(ErrorKind::MissingData, "incomplete grid: " + key_columns(k));
        rows.insert({order_of(workload_names(), w), order_of(fraction_names(), f)});
      }

  std::map<std::string, std::string> out;
  for (const auto& fig : figures) {
    if (std::find(figure_names().begin(), figure_names().end(), fig) == figure_names().end())
      throw Error(ErrorKind::InvalidConfig, "unknown figure '" + fig + "'");
    std::string csv = "program,input,workload,fraction,noncoop_groups,naive,query";
    if (fig == "period") csv += ",period_target_ms";
    csv += "\n";
    for (const auto& [wi, fi] : rows) {
      const auto& w = workload_names()[static_cast<size_t>(wi)];
      const auto& f = fraction_names()[static_cast<size_t>(fi)];
      if (w == "none" && fig != "slowdown") continue;
      const auto* naive = by_key.at({program, input, w, f, "naive"});
      const auto* query = by_key.at({program, input, w, f, "query"});
      auto cell = [&](const ConfigSummary* s) -> std::string {
        const Stats& st = fig == "gather" ? s->gather_ms : fig == "exec" ? s->exec_ms : fig == "period" ? s->period_ms : s->slowdown;
        if (st.count == 0) return "";
        return fmt_num(fig == "period" ? st.median : st.mean);
      };
      csv += program + "," + input + "," + w + "," + f + "," + std::to_string(naive->noncoop_groups) + "," + cell(naive) +
             "," + cell(query);
      if (fig == "period") csv += "," + fmt_opt(naive->period_target_ms);
      csv += "\n";
    }
    out[fig + "_vs_fraction.csv"] = csv;
  }
  return out;
}

}  // namespace coopk
