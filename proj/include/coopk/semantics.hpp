#pragma once

// Executable transition system for cooperative kernels.
//
// A kernel state is (shared memory, N workgroup slots) where slots [0, M-1]
// hold workgroup states and the rest are absent. The rules implemented here:
//   Thread-Step   step_thread
//   Kill-No-Op    apply_offer_kill(accept = false, or ineligible workgroup)
//   Kill          apply_offer_kill(accept = true, workgroup M-1, M > 1)
//   Fork          apply_request_fork
//   Barrier       apply_global_barrier (sync is a sequentially consistent flush)
//   Resizing-Barrier  desugar_resizing_barrier (static rewrite)
//
// Every `apply_*` / `step_*` function comes in an in-place flavour (suffix
// _inplace) used by the simulator and a pure flavour returning a new state.

#include <algorithm>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "coopk/errors.hpp"
#include "coopk/program.hpp"

namespace coopk {

inline constexpr int kTerminated = -1;

struct LocalEnv {
  std::vector<std::optional<Word>> values;  // indexed by variable slot

  bool defined(int slot) const { return values[static_cast<size_t>(slot)].has_value(); }
  void write(int slot, Word v) { values[static_cast<size_t>(slot)] = v; }
  bool operator==(const LocalEnv&) const = default;
};

struct ThreadState {
  LocalEnv env;
  int pc = 0;
  std::optional<int> blocked_on;  // barrier label while waiting (simulator only)

  bool terminated() const { return pc == kTerminated; }
  bool operator==(const ThreadState& o) const { return env == o.env && pc == o.pc; }
};

struct WorkgroupState {
  std::vector<ThreadState> threads;
  int group_id = 0;
  bool resident = true;  // holds a compute unit (occupancy-bound exploration)

  bool all_terminated() const {
    return std::all_of(threads.begin(), threads.end(), [](const ThreadState& t) { return t.terminated(); });
  }
  bool operator==(const WorkgroupState&) const = default;
};

struct SharedState {
  std::vector<Word> global;
  std::vector<std::vector<Word>> local;  // one array per slot
  std::vector<Word> params;              // immutable kernel arguments
  bool operator==(const SharedState&) const = default;
};

struct KernelState {
  ProgramPtr program;
  SharedState shared;
  std::vector<std::optional<WorkgroupState>> slots;
  int M = 0;
  int N = 0;
  int d = 1;
  int occupancy_units = 0;  // 0: every workgroup may run (fair); >0: occupancy-bound

  bool active(int wg) const { return wg >= 0 && wg < N && slots[static_cast<size_t>(wg)].has_value(); }
  WorkgroupState& group(int wg) { return *slots[static_cast<size_t>(wg)]; }
  const WorkgroupState& group(int wg) const { return *slots[static_cast<size_t>(wg)]; }
  const Program& prog() const { return *program; }

  bool all_terminated() const {
    for (int i = 0; i < M; ++i)
      if (!group(i).all_terminated()) return false;
    return true;
  }

  /// M bounds and slot contiguity; returns a description of the first violation.
  std::optional<std::string> invariant_violation() const {
    if (M < 1 || M > N) return "M=" + std::to_string(M) + " outside [1, N=" + std::to_string(N) + "]";
    for (int i = 0; i < N; ++i) {
      bool present = slots[static_cast<size_t>(i)].has_value();
      if (present != (i < M)) return "slot " + std::to_string(i) + " breaks contiguity (M=" + std::to_string(M) + ")";
      if (present && static_cast<int>(group(i).threads.size()) != d)
        return "workgroup " + std::to_string(i) + " has wrong thread count";
      if (present && group(i).group_id != i) return "workgroup id mismatch at slot " + std::to_string(i);
    }
    return std::nullopt;
  }
};

inline ThreadState fresh_thread(const Program& p) {
  ThreadState t;
  t.env.values.assign(p.vars.size(), std::nullopt);
  t.pc = p.code.empty() ? kTerminated : 0;
  return t;
}

inline WorkgroupState fresh_group(const Program& p, int id, int d, bool resident) {
  WorkgroupState w;
  w.group_id = id;
  w.resident = resident;
  w.threads.assign(static_cast<size_t>(d), fresh_thread(p));
  return w;
}

/// Initial kernel state for a launch with `initial_groups` active workgroups.
inline KernelState make_initial_state(const LaunchSpec& spec, int initial_groups, int occupancy_units = 0) {
  spec.check();
  if (initial_groups < 1 || initial_groups > spec.groups)
    throw Error(ErrorKind::InvalidConfig, "initial workgroup count outside [1, N]");
  KernelState s;
  s.program = spec.program;
  s.N = spec.groups;
  s.M = initial_groups;
  s.d = spec.wgsize;
  s.occupancy_units = occupancy_units;
  s.shared.global = spec.memory;
  s.shared.params = spec.args;
  s.shared.local.assign(static_cast<size_t>(s.N),
                        std::vector<Word>(static_cast<size_t>(spec.program->local_size), 0));
  s.slots.resize(static_cast<size_t>(s.N));
  for (int i = 0; i < s.M; ++i)
    s.slots[static_cast<size_t>(i)] = fresh_group(*spec.program, i, s.d, occupancy_units == 0);
  return s;
}

struct StepContext {
  Word query_value = 0;  // value returned by `query` (the scheduler's W)
};

namespace detail {

inline Word read_operand(const KernelState& s, const ThreadState& t, const Operand& o) {
  switch (o.kind) {
    case Operand::Kind::Imm: return o.value;
    case Operand::Kind::Param: return s.shared.params[static_cast<size_t>(o.value)];
    case Operand::Kind::Var: {
      const auto& v = t.env.values[static_cast<size_t>(o.value)];
      if (!v) throw Error(ErrorKind::UninitialisedRead, "read of uninitialised variable '" + s.prog().vars[o.value] + "'");
      return *v;
    }
    default: return 0;
  }
}

inline Word& global_cell(KernelState& s, Word addr) {
  if (addr < 0 || addr >= static_cast<Word>(s.shared.global.size()))
    throw Error(ErrorKind::OutOfBoundsAccess, "global address " + std::to_string(addr) + " out of range [0, " +
                                                  std::to_string(s.shared.global.size()) + ")");
  return s.shared.global[static_cast<size_t>(addr)];
}

inline Word& local_cell(KernelState& s, int wg, Word addr) {
  auto& mem = s.shared.local[static_cast<size_t>(wg)];
  if (addr < 0 || addr >= static_cast<Word>(mem.size()))
    throw Error(ErrorKind::OutOfBoundsAccess, "local address " + std::to_string(addr) + " out of range");
  return mem[static_cast<size_t>(addr)];
}

inline bool compare(Cmp c, Word a, Word b) {
  switch (c) {
    case Cmp::Eq: return a == b;
    case Cmp::Ne: return a != b;
    case Cmp::Lt: return a < b;
    case Cmp::Le: return a <= b;
    case Cmp::Gt: return a > b;
    case Cmp::Ge: return a >= b;
  }
  return false;
}

inline Word wrap(unsigned long long v) { return static_cast<Word>(v); }
inline unsigned long long u(Word v) { return static_cast<unsigned long long>(v); }

inline Word alu(Op op, Word a, Word b) {
  switch (op) {
    case Op::Mov: return a;
    case Op::Add: return wrap(u(a) + u(b));
    case Op::Sub: return wrap(u(a) - u(b));
    case Op::Mul: return wrap(u(a) * u(b));
    case Op::Div:
    case Op::Mod:
      if (b == 0) throw Error(ErrorKind::DivisionByZero, "division by zero");
      if (a == INT64_MIN && b == -1) return op == Op::Div ? a : 0;
      return op == Op::Div ? a / b : a % b;
    case Op::And: return a & b;
    case Op::Or: return a | b;
    case Op::Xor: return a ^ b;
    case Op::Shl: return wrap(u(a) << (b & 63));
    case Op::Shr: return a >> (b & 63);
    case Op::Min: return std::min(a, b);
    case Op::Max: return std::max(a, b);
    case Op::Eq: return a == b;
    case Op::Ne: return a != b;
    case Op::Lt: return a < b;
    case Op::Le: return a <= b;
    case Op::Gt: return a > b;
    case Op::Ge: return a >= b;
    case Op::Not: return a == 0;
    case Op::Neg: return wrap(0ULL - u(a));
    default: return 0;
  }
}

inline void finish_pc(ThreadState& t, int next, const Program& p) {
  t.pc = next >= p.size() ? kTerminated : next;
}

}  // namespace detail

/// Thread-Step: executes exactly one non-primitive instruction of (wg, tid).
inline void step_thread_inplace(KernelState& s, int wg, int tid, const StepContext& ctx = {}) {
  if (!s.active(wg) || tid < 0 || tid >= s.d)
    throw Error(ErrorKind::NotEnabled, "no thread (" + std::to_string(wg) + ", " + std::to_string(tid) + ")");
  auto& t = s.group(wg).threads[static_cast<size_t>(tid)];
  if (t.terminated()) throw Error(ErrorKind::NotEnabled, "thread has terminated");
  const Program& p = s.prog();
  const Instruction& ins = p.code[static_cast<size_t>(t.pc)];
  if (is_primitive(ins.op))
    throw Error(ErrorKind::NotEnabled, "next statement is a cooperative primitive; use its rule");
  if (s.occupancy_units > 0) s.group(wg).resident = true;

  using detail::read_operand;
  auto rd = [&](const Operand& o) { return read_operand(s, t, o); };
  int next = t.pc + 1;
  switch (ins.op) {
    case Op::GlobalId: t.env.write(ins.dst, static_cast<Word>(wg) * s.d + tid); break;
    case Op::LocalId: t.env.write(ins.dst, tid); break;
    case Op::GroupId: t.env.write(ins.dst, wg); break;
    case Op::LocalSize: t.env.write(ins.dst, s.d); break;
    case Op::NumGroups: t.env.write(ins.dst, s.M); break;
    case Op::GlobalSize: t.env.write(ins.dst, static_cast<Word>(s.M) * s.d); break;
    case Op::LoadGlobal:
    case Op::AtomicLoad: {
      Word a = rd(ins.a);
      t.env.write(ins.dst, detail::global_cell(s, a));
      break;
    }
    case Op::StoreGlobal:
    case Op::AtomicStore: {
      Word a = rd(ins.a), v = rd(ins.b);
      detail::global_cell(s, a) = v;
      break;
    }
    case Op::LoadLocal: {
      Word a = rd(ins.a);
      t.env.write(ins.dst, detail::local_cell(s, wg, a));
      break;
    }
    case Op::StoreLocal: {
      Word a = rd(ins.a), v = rd(ins.b);
      detail::local_cell(s, wg, a) = v;
      break;
    }
    case Op::AtomicCas: {
      Word a = rd(ins.a), e = rd(ins.b), n = rd(ins.c);
      Word& cell = detail::global_cell(s, a);
      Word old = cell;
      if (old == e) cell = n;
      t.env.write(ins.dst, old);
      break;
    }
    case Op::AtomicAdd: {
      Word a = rd(ins.a), v = rd(ins.b);
      Word& cell = detail::global_cell(s, a);
      Word old = cell;
      cell = detail::wrap(detail::u(old) + detail::u(v));
      t.env.write(ins.dst, old);
      break;
    }
    case Op::AtomicExch: {
      Word a = rd(ins.a), v = rd(ins.b);
      Word& cell = detail::global_cell(s, a);
      t.env.write(ins.dst, cell);
      cell = v;
      break;
    }
    case Op::Query: t.env.write(ins.dst, ctx.query_value); break;
    case Op::Branch:
      if (!detail::compare(ins.cmp, rd(ins.a), rd(ins.b))) next = ins.target;
      break;
    case Op::Jump: next = ins.target; break;
    case Op::Halt: next = p.size(); break;
    default: {
      Word a = arity(ins.op) >= 1 ? rd(ins.a) : 0;
      Word b = arity(ins.op) >= 2 ? rd(ins.b) : 0;
      t.env.write(ins.dst, detail::alu(ins.op, a, b));
    }
  }
  detail::finish_pc(t, next, p);
}

inline KernelState step_thread(KernelState s, int wg, int tid, const StepContext& ctx = {}) {
  step_thread_inplace(s, wg, tid, ctx);
  return s;
}

/// The pc at which every thread of `wg` waits on primitive `op`; throws
/// NonUniformReach when the workgroup does not reach it uniformly.
inline int uniform_pc(const KernelState& s, int wg, Op op) {
  if (!s.active(wg)) throw Error(ErrorKind::NotEnabled, "workgroup " + std::to_string(wg) + " is absent");
  const auto& threads = s.group(wg).threads;
  int pc = threads[0].pc;
  for (const auto& t : threads)
    if (t.terminated() || t.pc != pc)
      throw Error(ErrorKind::NonUniformReach,
                  "threads of workgroup " + std::to_string(wg) + " are not at the same statement");
  if (s.prog().code[static_cast<size_t>(pc)].op != op)
    throw Error(ErrorKind::NotEnabled, "workgroup " + std::to_string(wg) + " is not at the requested primitive");
  return pc;
}

/// Whether all threads of wg sit at the same pc holding `op` (no throw).
inline bool at_uniform(const KernelState& s, int wg, Op op) {
  const auto& threads = s.group(wg).threads;
  int pc = threads[0].pc;
  if (pc == kTerminated) return false;
  for (const auto& t : threads)
    if (t.pc != pc) return false;
  return s.prog().code[static_cast<size_t>(pc)].op == op;
}

inline void advance_group(KernelState& s, int wg) {
  for (auto& t : s.group(wg).threads) detail::finish_pc(t, t.pc + 1, s.prog());
}

/// Removes workgroup M-1. Callers enforce the kill-order rule.
inline void kill_top(KernelState& s) {
  if (s.M <= 1) throw Error(ErrorKind::NotEnabled, "workgroup 0 can never be killed");
  int top = s.M - 1;
  s.slots[static_cast<size_t>(top)].reset();
  std::fill(s.shared.local[static_cast<size_t>(top)].begin(), s.shared.local[static_cast<size_t>(top)].end(), 0);
  s.M -= 1;
}

/// Spawns k workgroups in slots [M, M+k-1] resuming at `resume_pc`; their
/// threads see only the transmit variables, valued as thread 0 of `src` held them.
inline std::vector<int> fork_groups(KernelState& s, int src, int k, int resume_pc) {
  if (k < 0 || k > s.N - s.M)
    throw Error(ErrorKind::ForkBoundExceeded,
                "k=" + std::to_string(k) + " exceeds N-M=" + std::to_string(s.N - s.M));
  const Program& p = s.prog();
  const auto& donor = s.group(src).threads[0].env;
  ThreadState proto = fresh_thread(p);
  for (int slot : p.transmit) proto.env.values[static_cast<size_t>(slot)] = donor.values[static_cast<size_t>(slot)];
  detail::finish_pc(proto, resume_pc, p);
  std::vector<int> created;
  for (int a = 0; a < k; ++a) {
    int id = s.M + a;
    WorkgroupState w;
    w.group_id = id;
    w.resident = s.occupancy_units == 0;
    w.threads.assign(static_cast<size_t>(s.d), proto);
    s.slots[static_cast<size_t>(id)] = std::move(w);
    std::fill(s.shared.local[static_cast<size_t>(id)].begin(), s.shared.local[static_cast<size_t>(id)].end(), 0);
    created.push_back(id);
  }
  s.M += k;
  return created;
}

/// Kill / Kill-No-Op. Returns true when the workgroup was removed.
inline bool apply_offer_kill_inplace(KernelState& s, int wg, bool accept) {
  uniform_pc(s, wg, Op::OfferKill);
  if (accept && wg == s.M - 1 && s.M > 1) {
    kill_top(s);
    return true;
  }
  advance_group(s, wg);
  return false;
}

inline KernelState apply_offer_kill(KernelState s, int wg, bool accept) {
  apply_offer_kill_inplace(s, wg, accept);
  return s;
}

/// Fork: k new workgroups start just after the request_fork.
inline std::vector<int> apply_request_fork_inplace(KernelState& s, int wg, int k) {
  int pc = uniform_pc(s, wg, Op::RequestFork);
  if (k < 0 || k > s.N - s.M)
    throw Error(ErrorKind::ForkBoundExceeded,
                "k=" + std::to_string(k) + " exceeds N-M=" + std::to_string(s.N - s.M));
  auto created = fork_groups(s, wg, k, pc + 1);
  advance_group(s, wg);
  return created;
}

inline KernelState apply_request_fork(KernelState s, int wg, int k) {
  apply_request_fork_inplace(s, wg, k);
  return s;
}

/// Label of the global barrier every active thread waits at, if they all agree.
inline std::optional<int> common_barrier(const KernelState& s) {
  std::optional<int> label;
  for (int i = 0; i < s.M; ++i)
    for (const auto& t : s.group(i).threads) {
      if (t.terminated()) return std::nullopt;
      const auto& ins = s.prog().code[static_cast<size_t>(t.pc)];
      if (ins.op != Op::GlobalBarrier) return std::nullopt;
      if (label && *label != ins.barrier_label) return std::nullopt;
      label = ins.barrier_label;
    }
  return label;
}

/// Barrier: every thread of every active workgroup passes the same barrier.
/// Memory is sequentially consistent, so sync leaves the state unchanged.
inline void apply_global_barrier_inplace(KernelState& s) {
  if (!common_barrier(s))
    throw Error(ErrorKind::BarrierDivergence, "not every thread waits at the same global_barrier");
  for (int i = 0; i < s.M; ++i) advance_group(s, i);
}

inline KernelState apply_global_barrier(KernelState s) {
  apply_global_barrier_inplace(s);
  return s;
}

/// Resizing-Barrier as a static rewrite. Workgroup 0 runs
///   barrier; request_fork; barrier; barrier
/// every other workgroup runs
///   barrier; barrier; offer_kill; barrier
/// Matching barriers share a label so the Barrier rule can fire across both arms.
inline Program desugar_resizing_barrier(const Program& p) {
  if (!p.has_resizing_barrier()) return p;
  Program out = p;
  out.code.clear();
  std::string gid_name = "__rb_gid";
  while (p.find_var(gid_name) || p.find_param(gid_name)) gid_name += "_";
  out.vars.push_back(gid_name);
  const int gid = static_cast<int>(out.vars.size()) - 1;
  int label = 0;
  for (const auto& ins : p.code) label = std::max(label, ins.barrier_label + 1);

  std::vector<int> new_pc(p.code.size() + 1, 0);
  std::vector<std::pair<int, int>> fixups;  // (new index, old target)
  for (size_t pc = 0; pc < p.code.size(); ++pc) {
    const auto& ins = p.code[pc];
    new_pc[pc] = static_cast<int>(out.code.size());
    if (ins.op != Op::ResizingBarrier) {
      if (ins.op == Op::Branch || ins.op == Op::Jump) fixups.emplace_back(static_cast<int>(out.code.size()), ins.target);
      out.code.push_back(ins);
      continue;
    }
    const int base = static_cast<int>(out.code.size());
    const int la = label++, lb = label++, lc = label++;
    auto mk = [&](Op op) {
      Instruction i;
      i.op = op;
      i.synthetic = true;
      i.line = ins.line;
      return i;
    };
    auto barrier = [&](int l) {
      Instruction i = mk(Op::GlobalBarrier);
      i.barrier_label = l;
      return i;
    };
    Instruction g = mk(Op::GroupId);
    g.dst = gid;
    Instruction br = mk(Op::Branch);
    br.role = BlockRole::IfHead;
    br.cmp = Cmp::Eq;
    br.a = Operand::var(gid);
    br.b = Operand::imm(0);
    br.target = base + 7;
    Instruction jmp = mk(Op::Jump);
    jmp.role = BlockRole::ElseJump;
    jmp.target = base + 11;
    out.code.push_back(g);
    out.code.push_back(br);
    out.code.push_back(barrier(la));
    out.code.push_back(mk(Op::RequestFork));
    out.code.push_back(barrier(lb));
    out.code.push_back(barrier(lc));
    out.code.push_back(jmp);
    out.code.push_back(barrier(la));
    out.code.push_back(barrier(lb));
    out.code.push_back(mk(Op::OfferKill));
    out.code.push_back(barrier(lc));
  }
  new_pc[p.code.size()] = static_cast<int>(out.code.size());
  for (auto [idx, old] : fixups) out.code[static_cast<size_t>(idx)].target = new_pc[static_cast<size_t>(old)];
  return out;
}

enum class Rule : std::uint8_t { ThreadStep, KillNoOp, Kill, Fork, Barrier };

inline std::string_view to_string(Rule r) {
  switch (r) {
    case Rule::ThreadStep: return "thread-step";
    case Rule::KillNoOp: return "kill-no-op";
    case Rule::Kill: return "kill";
    case Rule::Fork: return "fork";
    case Rule::Barrier: return "barrier";
  }
  return "?";
}

inline std::optional<Rule> rule_from_string(std::string_view s) {
  for (Rule r : {Rule::ThreadStep, Rule::KillNoOp, Rule::Kill, Rule::Fork, Rule::Barrier})
    if (to_string(r) == s) return r;
  return std::nullopt;
}

struct Transition {
  Rule rule = Rule::ThreadStep;
  int wg = -1;
  int tid = -1;
  Word choice = 0;  // k for Fork
  bool operator==(const Transition&) const = default;
};

struct TransitionOptions {
  int fork_cap = 2;  // largest k enumerated for request_fork
};

inline bool may_run(const KernelState& s, int wg) {
  if (s.occupancy_units <= 0) return true;
  const auto& g = s.group(wg);
  if (g.resident) return true;
  int running = 0;
  for (int i = 0; i < s.M; ++i)
    if (s.group(i).resident && !s.group(i).all_terminated()) ++running;
  return running < s.occupancy_units;
}

/// Every applicable (rule, workgroup, thread, scheduler choice).
inline std::vector<Transition> enabled_transitions(const KernelState& s, const TransitionOptions& opt = {}) {
  std::vector<Transition> out;
  const Program& p = s.prog();
  for (int wg = 0; wg < s.M; ++wg) {
    if (!may_run(s, wg)) continue;
    const auto& g = s.group(wg);
    for (int tid = 0; tid < s.d; ++tid) {
      const auto& t = g.threads[static_cast<size_t>(tid)];
      if (t.terminated()) continue;
      if (!is_primitive(p.code[static_cast<size_t>(t.pc)].op)) out.push_back({Rule::ThreadStep, wg, tid, 0});
    }
    if (at_uniform(s, wg, Op::OfferKill)) {
      out.push_back({Rule::KillNoOp, wg, -1, 0});
      if (wg == s.M - 1 && s.M > 1) out.push_back({Rule::Kill, wg, -1, 0});
    } else if (at_uniform(s, wg, Op::RequestFork)) {
      int kmax = std::min(s.N - s.M, opt.fork_cap);
      for (int k = 0; k <= kmax; ++k) out.push_back({Rule::Fork, wg, -1, k});
    }
  }
  if (common_barrier(s)) out.push_back({Rule::Barrier, -1, -1, 0});
  return out;
}

inline void apply_transition_inplace(KernelState& s, const Transition& t, const StepContext& ctx = {}) {
  switch (t.rule) {
    case Rule::ThreadStep: step_thread_inplace(s, t.wg, t.tid, ctx); break;
    case Rule::KillNoOp: apply_offer_kill_inplace(s, t.wg, false); break;
    case Rule::Kill:
      if (!apply_offer_kill_inplace(s, t.wg, true))
        throw Error(ErrorKind::NotEnabled, "kill of workgroup " + std::to_string(t.wg) + " is not enabled");
      break;
    case Rule::Fork: apply_request_fork_inplace(s, t.wg, static_cast<int>(t.choice)); break;
    case Rule::Barrier: apply_global_barrier_inplace(s); break;
  }
  // A workgroup that acted now holds a compute unit.
  if (s.occupancy_units > 0 && (t.rule == Rule::KillNoOp || t.rule == Rule::Fork) && s.active(t.wg))
    s.group(t.wg).resident = true;
}

inline KernelState apply_transition(KernelState s, const Transition& t, const StepContext& ctx = {}) {
  apply_transition_inplace(s, t, ctx);
  return s;
}

/// Canonical byte encoding used for state hashing and equality.
inline std::string encode(const KernelState& s) {
  std::string out;
  auto put = [&](Word v) { out.append(reinterpret_cast<const char*>(&v), sizeof v); };
  put(s.M);
  for (int i = 0; i < s.M; ++i) {
    const auto& g = s.group(i);
    put(g.resident ? 1 : 0);
    for (const auto& t : g.threads) {
      put(t.pc);
      for (const auto& v : t.env.values) {
        if (v) {
          out.push_back(1);
          put(*v);
        } else {
          out.push_back(0);
        }
      }
    }
    for (Word w : s.shared.local[static_cast<size_t>(i)]) put(w);
  }
  for (Word w : s.shared.global) put(w);
  return out;
}

}  // namespace coopk
