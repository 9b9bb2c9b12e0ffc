#pragma once

// Discrete-event virtual-time executor.
//
// Each compute unit hosts at most one workgroup. An event advances one
// workgroup: every live thread not waiting at a primitive executes one
// instruction and the workgroup's clock moves by the most expensive of them.
// The next event is always the unit-holding workgroup with the smallest
// (clock, unit) key; scheduler actions at the same time run first.
//
// Fair mode time-slices units among more workgroups than units with a fixed
// quantum and yields the unit while a workgroup waits at a barrier.
// OccupancyBound mode keeps a workgroup on its unit until it terminates.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coopk/barrier_runtime.hpp"
#include "coopk/errors.hpp"
#include "coopk/scheduler.hpp"
#include "coopk/semantics.hpp"
#include "coopk/validate.hpp"
#include "coopk/workloads.hpp"

namespace coopk {

enum class ExecMode { Fair, OccupancyBound };

inline std::string_view to_string(ExecMode m) { return m == ExecMode::Fair ? "fair" : "occupancy"; }
inline ExecMode exec_mode_from_string(std::string_view s) {
  if (s == "fair") return ExecMode::Fair;
  if (s == "occupancy") return ExecMode::OccupancyBound;
  throw Error(ErrorKind::InvalidConfig, "unknown mode '" + std::string(s) + "'");
}

/// Virtual ticks per instruction class.
struct InstructionCosts {
  Tick alu = 1;
  Tick global = 4;
  Tick local = 1;
  Tick atomic = 16;
  Tick primitive = 4;  // offer_kill / request_fork / query: one scheduler-channel access
  Tick barrier = 16;

  Tick of(CostClass c) const {
    switch (c) {
      case CostClass::Alu: return alu;
      case CostClass::Global: return global;
      case CostClass::Local: return local;
      case CostClass::Atomic: return atomic;
      case CostClass::Primitive: return primitive;
      case CostClass::Barrier: return barrier;
    }
    return alu;
  }
  void check() const {
    if (alu < 1 || global < 1 || local < 1 || atomic < 1 || barrier < 1)
      throw Error(ErrorKind::InvalidConfig, "instruction costs must be positive");
    if (primitive < 0) throw Error(ErrorKind::InvalidConfig, "primitive cost must be >= 0");
  }
};

struct SimConfig {
  int units = 8;
  InstructionCosts costs;
  ExecMode mode = ExecMode::Fair;
  std::uint64_t seed = 0;
  Policy policy;
  BarrierKind barrier = BarrierKind::Query;
  int quantum = 64;
  Tick ticks_per_ms = 250;
  Tick jitter = 0;  // extra ticks in [0, jitter] drawn per event
  std::uint64_t step_budget = 100'000'000;

  void check() const {
    if (units < 1) throw Error(ErrorKind::InvalidConfig, "units must be >= 1");
    if (quantum < 1) throw Error(ErrorKind::InvalidConfig, "quantum must be >= 1");
    if (ticks_per_ms < 1) throw Error(ErrorKind::InvalidConfig, "ticks_per_ms must be >= 1");
    if (jitter < 0) throw Error(ErrorKind::InvalidConfig, "jitter must be >= 0");
    costs.check();
    policy.check();
  }
};

struct LaunchMetrics {
  int index = 0;
  int workgroups = 0;
  Tick requested = 0;
  Tick start = 0;
  Tick gather = 0;
  Tick exec = 0;
  Tick end = 0;
  std::optional<Tick> period;  // start minus the previous launch's start
};

struct MetricsRecord {
  std::vector<LaunchMetrics> launches;
  Tick coop_runtime = 0;
  int episodes = 0;  // resizing-barrier episodes
  std::optional<double> slowdown;
  std::uint64_t events = 0;
  int final_groups = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["coop_runtime"] = coop_runtime;
    j["episodes"] = episodes;
    j["events"] = events;
    j["final_groups"] = final_groups;
    j["slowdown"] = slowdown ? nlohmann::ordered_json(*slowdown) : nlohmann::ordered_json(nullptr);
    auto& arr = j["launches"] = nlohmann::ordered_json::array();
    for (const auto& l : launches) {
      nlohmann::ordered_json x;
      x["index"] = l.index;
      x["workgroups"] = l.workgroups;
      x["requested"] = l.requested;
      x["start"] = l.start;
      x["gather"] = l.gather;
      x["exec"] = l.exec;
      x["end"] = l.end;
      x["period"] = l.period ? nlohmann::ordered_json(*l.period) : nlohmann::ordered_json(nullptr);
      arr.push_back(x);
    }
    return j;
  }
};

struct SimResult {
  MetricsRecord metrics;
  KernelState final_state;
  std::vector<BarrierEpisode> episodes;
  std::vector<DemandRecord> demands;
  std::string scheduler_trace;  // JSON lines
  std::vector<int> schedule;    // slot per workgroup event, when recorded

  std::string episodes_jsonl() const {
    std::string out;
    for (const auto& e : episodes) {
      nlohmann::ordered_json j;
      j["episode"] = e.index;
      j["barrier"] = to_string(e.kind);
      j["m_before"] = e.m_before;
      j["m_after"] = e.m_after;
      j["forks"] = e.forks;
      j["kills"] = e.kills;
      j["query"] = e.query;
      j["start"] = e.start;
      j["decision"] = e.decision;
      j["release"] = e.release;
      j["end"] = e.end == kNever ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(e.end);
      out += j.dump() + "\n";
    }
    return out;
  }
};

class Simulator final : private BarrierPort {
 public:
  Simulator(SimConfig cfg, LaunchSpec coop, std::optional<NonCoopStream> stream = std::nullopt)
      : cfg_(std::move(cfg)),
        spec_(std::move(coop)),
        stream_(std::move(stream)),
        sched_(cfg_.units, cfg_.policy),
        rng_(cfg_.seed),
        plain_(BarrierKind::Plain, {cfg_.costs.primitive, cfg_.costs.barrier}, std::max(1, spec_.groups)),
        resize_(spec_.cooperative ? cfg_.barrier : BarrierKind::Plain, {cfg_.costs.primitive, cfg_.costs.barrier},
                std::max(1, spec_.groups)) {
    cfg_.check();
    spec_.check();
    auto report = validate(*spec_.program);
    if (!report.ok()) throw Error(ErrorKind::Validation, report.summary());
    if (stream_ && !spec_.cooperative)
      throw Error(ErrorKind::InvalidConfig, "a non-cooperative stream needs a cooperative primary kernel");
  }

  void record_schedule(bool on) { record_ = on; }

  SimResult run() {
    start();
    while (!finished()) {
      if (++events_ > cfg_.step_budget)
        throw Error(ErrorKind::StepBudgetExceeded, "more than " + std::to_string(cfg_.step_budget) + " events");
      Tick t_sched = next_scheduler_time();
      int wg = next_group();
      Tick t_wg = wg >= 0 ? groups_[static_cast<size_t>(wg)].ready : kNever;
      Tick t_spin = spin_at_.value_or(kNever);
      if (wg < 0 && !spin_at_) {
        // Nothing runnable: only the scheduler can still change the picture.
        if (t_sched == kNever) throw Error(ErrorKind::Deadlock, deadlock_message());
        scheduler_event(std::max(now_, t_sched));
        continue;
      }
      if (t_sched <= std::min(t_wg, t_spin)) {
        scheduler_event(t_sched);
      } else if (t_spin <= t_wg) {
        now_ = std::max(now_, t_spin);
        spin_at_.reset();
        resize_.spin(*this, t_spin);
      } else {
        group_event(wg);
      }
    }
    return finish();
  }

 private:
  enum class Status { Absent, Ready, Waiting, Done, Queued };
  struct Group {
    Status status = Status::Absent;
    Tick ready = 0;
    int unit = -1;
    int used = 0;  // events since the unit was acquired
  };
  struct Running {
    int request;
    int launch;
    Tick end;
  };

  // ------------------------------------------------------------ lifecycle

  void start() {
    groups_.assign(static_cast<size_t>(spec_.groups), Group{});
    if (spec_.cooperative) {
      auto d = sched_.launch({spec_.program->name, true, spec_.groups}, 0);
      kid_ = d.kernel;
      state_ = make_initial_state(spec_, static_cast<int>(d.units.size()));
      for (size_t i = 0; i < d.units.size(); ++i) groups_[i] = {Status::Ready, 0, d.units[i], 0};
    } else {
      state_ = make_initial_state(spec_, spec_.groups);
      for (int i = 0; i < spec_.groups; ++i) {
        auto& g = groups_[static_cast<size_t>(i)];
        g.status = Status::Ready;
        if (i < cfg_.units) {
          g.unit = i;
        } else {
          g.status = Status::Queued;
          run_queue_.push_back(i);
        }
      }
    }
    if (stream_) next_launch_time_ = stream_->launch_time(0);
    for (int i = 0; i < state_.M; ++i)
      if (state_.group(i).all_terminated()) finish_group(i, 0);
  }

  bool finished() const { return state_.all_terminated(); }

  SimResult finish() {
    if (spec_.cooperative) sched_.finish(kid_, coop_end_);
    SimResult r;
    r.metrics.coop_runtime = coop_end_;
    r.metrics.events = events_;
    r.metrics.final_groups = state_.M;
    for (const auto& e : resize_.episodes())
      if (e.kind != BarrierKind::Plain) r.episodes.push_back(e);
    r.metrics.episodes = static_cast<int>(r.episodes.size());
    std::sort(launches_.begin(), launches_.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
    for (size_t i = 1; i < launches_.size(); ++i) launches_[i].period = launches_[i].start - launches_[i - 1].start;
    r.metrics.launches = launches_;
    r.final_state = state_;
    r.demands = sched_.demands();
    r.scheduler_trace = sched_.trace_jsonl();
    r.schedule = std::move(schedule_);
    return r;
  }

  std::string deadlock_message() const {
    std::string waiting, queued;
    for (int i = 0; i < state_.M; ++i) {
      auto st = groups_[static_cast<size_t>(i)].status;
      if (st == Status::Waiting) waiting += " " + std::to_string(i);
      if (st == Status::Queued) queued += " " + std::to_string(i);
    }
    return "no workgroup can make progress at t=" + std::to_string(now_) + " (waiting at barrier:" +
           (waiting.empty() ? " none" : waiting) + "; waiting for a compute unit:" + (queued.empty() ? " none" : queued) +
           ")";
  }

  // ------------------------------------------------------------ scheduler side

  Tick next_completion() const {
    Tick t = kNever;
    for (const auto& r : running_) t = std::min(t, r.end);
    return t;
  }

  Tick next_scheduler_time() const {
    Tick t = next_completion();
    if (stream_) t = std::min(t, next_launch_time_);
    if (spec_.cooperative) t = std::min(t, sched_.next_script_time());
    return t;
  }

  void scheduler_event(Tick t) {
    now_ = std::max(now_, t);
    for (size_t i = 0; i < running_.size();) {
      if (running_[i].end <= t) {
        sched_.finish(sched_.kernel_of(running_[i].request), running_[i].end);
        // The stream is serial: the next instance is issued once this one is done.
        next_launch_time_ = std::max(stream_->launch_time(next_launch_), running_[i].end);
        running_.erase(running_.begin() + static_cast<long>(i));
      } else {
        ++i;
      }
    }
    if (spec_.cooperative) sched_.apply_script(kid_, t);
    if (stream_ && next_launch_time_ <= t) {
      int idx = next_launch_++;
      auto d = sched_.launch({stream_->name, false, stream_->workgroups}, next_launch_time_);
      pending_launch_[d.request] = idx;
      Tick at = next_launch_time_;
      next_launch_time_ = kNever;
      if (d.status == LaunchDecision::Status::Started) started(d.request, at);
    }
    poll(t);
  }

  void poll(Tick t) {
    for (int r : sched_.poll(t)) started(r, t);
  }

  void started(int request, Tick t) {
    int idx = pending_launch_.at(request);
    LaunchMetrics m;
    m.index = idx;
    m.workgroups = stream_->workgroups;
    m.requested = sched_.request_time(request);
    m.start = t;
    m.gather = t - m.requested;
    m.exec = stream_->exec_time(static_cast<int>(sched_.units_of(request).size()));
    m.end = t + m.exec;
    launches_.push_back(m);
    running_.push_back({request, idx, m.end});
  }

  // ------------------------------------------------------------ workgroup side

  int next_group() const {
    int best = -1;
    for (int i = 0; i < state_.M; ++i) {
      const auto& g = groups_[static_cast<size_t>(i)];
      if (g.status != Status::Ready || g.unit < 0) continue;
      if (best < 0) {
        best = i;
        continue;
      }
      const auto& b = groups_[static_cast<size_t>(best)];
      if (g.ready < b.ready || (g.ready == b.ready && g.unit < b.unit)) best = i;
    }
    return best;
  }

  Tick draw_jitter() {
    if (cfg_.jitter == 0) return 0;
    return static_cast<Tick>(rng_() % static_cast<std::uint64_t>(cfg_.jitter + 1));
  }

  void group_event(int s) {
    auto& g = groups_[static_cast<size_t>(s)];
    const Tick t = g.ready;
    now_ = std::max(now_, t);
    if (record_) schedule_.push_back(s);
    ++g.used;
    const Program& p = state_.prog();
    auto& threads = state_.group(s).threads;

    bool stepped = false;
    Tick cost = 0;
    int prim_pc = -1;
    bool mixed = false;
    bool some_done = false;
    for (int tid = 0; tid < state_.d; ++tid) {
      auto& th = threads[static_cast<size_t>(tid)];
      if (th.terminated()) {
        some_done = true;
        continue;
      }
      const auto& ins = p.code[static_cast<size_t>(th.pc)];
      if (is_primitive(ins.op)) {
        if (prim_pc >= 0 && prim_pc != th.pc) mixed = true;
        prim_pc = th.pc;
        continue;
      }
      StepContext ctx;
      if (ins.op == Op::Query && spec_.cooperative) ctx.query_value = sched_.query(kid_);
      cost = std::max(cost, cfg_.costs.of(cost_class(ins.op)));
      step_thread_inplace(state_, s, tid, ctx);
      stepped = true;
    }

    if (stepped) {
      g.ready = t + cost + draw_jitter();
      if (state_.group(s).all_terminated()) {
        finish_group(s, g.ready);
        return;
      }
      maybe_yield(s);
      return;
    }

    // Every live thread waits at a cooperative primitive.
    const Instruction& ins = p.code[static_cast<size_t>(prim_pc)];
    if (mixed || some_done) {
      if (is_kernel_primitive(ins.op))
        throw Error(ErrorKind::BarrierDivergence, "threads of workgroup " + std::to_string(s) + " diverge at a barrier");
      throw Error(ErrorKind::NonUniformReach, "threads of workgroup " + std::to_string(s) + " reach a primitive non-uniformly");
    }
    const Tick cp = cfg_.costs.primitive;
    switch (ins.op) {
      case Op::OfferKill: {
        bool eligible = spec_.cooperative && s == state_.M - 1 && state_.M > 1;
        if (eligible && sched_.on_offer_kill(kid_, g.unit, t + cp)) {
          g.unit = -1;
          g.status = Status::Absent;
          kill_top(state_);
          coop_end_ = std::max(coop_end_, t + cp);
          poll(t + cp);
        } else {
          advance_group(state_, s);
          g.ready = t + cp + draw_jitter();
          after_primitive(s);
        }
        return;
      }
      case Op::RequestFork: {
        std::vector<int> units;
        if (spec_.cooperative) units = sched_.on_request_fork(kid_, state_.M, state_.N, t);
        auto created = apply_request_fork_inplace(state_, s, static_cast<int>(units.size()));
        for (size_t i = 0; i < created.size(); ++i)
          groups_[static_cast<size_t>(created[i])] = {Status::Ready, t + cp, units[i], 0};
        g.ready = t + cp + draw_jitter();
        after_primitive(s);
        return;
      }
      case Op::GlobalBarrier:
        if (resize_.open()) throw Error(ErrorKind::BarrierDivergence, "global_barrier while a resizing barrier is open");
        g.status = Status::Waiting;
        plain_.arrive(*this, s, t, ins.barrier_label);
        break;
      case Op::ResizingBarrier:
        if (plain_.open()) throw Error(ErrorKind::BarrierDivergence, "resizing barrier while a global_barrier is open");
        g.status = Status::Waiting;
        barrier_pc_ = prim_pc;
        resize_.arrive(*this, s, t, prim_pc);
        break;
      default: break;
    }
    // Waiting workgroups hand their unit to a queued one in fair mode.
    if (s < state_.M && groups_[static_cast<size_t>(s)].status == Status::Waiting) release_unit_if_wanted(s, t);
  }

  void after_primitive(int s) {
    if (state_.group(s).all_terminated()) {
      finish_group(s, groups_[static_cast<size_t>(s)].ready);
      return;
    }
    maybe_yield(s);
  }

  void finish_group(int s, Tick t) {
    auto& g = groups_[static_cast<size_t>(s)];
    g.status = Status::Done;
    coop_end_ = std::max(coop_end_, t);
    if (!spec_.cooperative && g.unit >= 0) {
      int u = g.unit;
      g.unit = -1;
      hand_unit(u, t);
    }
  }

  void maybe_yield(int s) {
    auto& g = groups_[static_cast<size_t>(s)];
    if (cfg_.mode != ExecMode::Fair || run_queue_.empty() || g.used < cfg_.quantum) return;
    int u = g.unit;
    g.unit = -1;
    g.status = Status::Queued;
    run_queue_.push_back(s);
    hand_unit(u, g.ready);
  }

  void release_unit_if_wanted(int s, Tick t) {
    auto& g = groups_[static_cast<size_t>(s)];
    if (cfg_.mode != ExecMode::Fair || run_queue_.empty() || g.unit < 0) return;
    int u = g.unit;
    g.unit = -1;
    hand_unit(u, t);
  }

  void hand_unit(int unit, Tick t) {
    if (run_queue_.empty()) return;
    int next = run_queue_.front();
    run_queue_.pop_front();
    auto& n = groups_[static_cast<size_t>(next)];
    n.unit = unit;
    n.used = 0;
    n.status = Status::Ready;
    n.ready = std::max(n.ready, t);
  }

  // ------------------------------------------------------------ BarrierPort

  int active_groups() const override { return state_.M; }

  bool offer_kill(int slot, Tick at) override {
    auto& g = groups_[static_cast<size_t>(slot)];
    if (g.unit < 0 || !sched_.on_offer_kill(kid_, g.unit, at)) return false;
    g.unit = -1;
    coop_end_ = std::max(coop_end_, at);
    poll(at);
    return true;
  }

  std::vector<int> remove_top(int count) override {
    std::vector<int> held;
    for (int i = 0; i < count; ++i) {
      int top = state_.M - 1;
      auto& g = groups_[static_cast<size_t>(top)];
      if (g.unit >= 0) held.push_back(g.unit);
      g = Group{};
      kill_top(state_);
    }
    return held;
  }

  int fork(Tick at) override {
    auto units = sched_.on_request_fork(kid_, state_.M, state_.N, at);
    auto created = fork_groups(state_, 0, static_cast<int>(units.size()), barrier_pc_ + 1);
    for (size_t i = 0; i < created.size(); ++i)
      groups_[static_cast<size_t>(created[i])] = {Status::Waiting, at, units[i], 0};
    return static_cast<int>(created.size());
  }

  int query(Tick) override { return sched_.query(kid_); }

  void release(int slot, Tick at, bool advance) override {
    auto& g = groups_[static_cast<size_t>(slot)];
    if (advance) advance_group(state_, slot);
    g.ready = std::max(g.ready, at);
    g.status = Status::Ready;
    if (g.unit < 0) {
      g.status = Status::Queued;
      run_queue_.push_back(slot);
    }
    if (state_.group(slot).all_terminated()) {
      if (g.status == Status::Queued) run_queue_.erase(std::find(run_queue_.begin(), run_queue_.end(), slot));
      finish_group(slot, at);
    }
  }

  bool surrender(int unit, Tick at) override {
    if (!sched_.on_offer_kill(kid_, unit, at)) return false;
    poll(at);
    return true;
  }

  void schedule_spin(Tick at) override { spin_at_ = at; }

  SimConfig cfg_;
  LaunchSpec spec_;
  std::optional<NonCoopStream> stream_;
  SchedulerContext sched_;
  std::mt19937_64 rng_;
  BarrierRuntime plain_;
  BarrierRuntime resize_;
  KernelState state_;
  std::vector<Group> groups_;
  std::deque<int> run_queue_;
  int kid_ = -1;
  int barrier_pc_ = -1;
  Tick now_ = 0;
  Tick coop_end_ = 0;
  std::optional<Tick> spin_at_;
  std::uint64_t events_ = 0;
  Tick next_launch_time_ = kNever;
  int next_launch_ = 0;
  std::map<int, int> pending_launch_;
  std::vector<Running> running_;
  std::vector<LaunchMetrics> launches_;
  bool record_ = false;
  std::vector<int> schedule_;
};

inline SimResult run(const SimConfig& cfg, const LaunchSpec& coop, const std::optional<NonCoopStream>& stream = std::nullopt) {
  return Simulator(cfg, coop, stream).run();
}

using OutputExtractor = std::function<std::vector<Word>(const std::vector<Word>&)>;

/// Runtime ratio of a cooperative kernel over its plain counterpart with a
/// never-resizing scheduler. Outputs are compared before timing is reported.
inline double measure_overhead(const LaunchSpec& coop, const LaunchSpec& plain, SimConfig cfg,
                               const OutputExtractor& output = {}) {
  cfg.policy = Policy::never_resize();
  cfg.jitter = 0;
  auto a = run(cfg, coop);
  auto b = run(cfg, plain);
  auto pick = [&](const std::vector<Word>& m) { return output ? output(m) : m; };
  if (pick(a.final_state.shared.global) != pick(b.final_state.shared.global))
    throw Error(ErrorKind::MismatchedOutputs, "cooperative and plain versions disagree");
  if (b.metrics.coop_runtime <= 0) throw Error(ErrorKind::InvalidConfig, "plain run took no time");
  return static_cast<double>(a.metrics.coop_runtime) / static_cast<double>(b.metrics.coop_runtime);
}

/// Kernel-level preemption: switching to a D-long task every P costs P/(P-D).
inline double preemption_model_overhead(double P, double D) {
  if (!(D >= 0) || !(D < P)) throw Error(ErrorKind::InvalidInterval, "need 0 <= D < P");
  return P / (P - D);
}

}  // namespace coopk
