#pragma once

// Kernel instruction set for cooperative kernels and an in-process builder.
//
// Programs are stored as a flat instruction list whose branches are only ever
// produced from structured `if`/`else`/`while` blocks, so every program point
// (in particular "the statement after request_fork") is a plain index.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "coopk/errors.hpp"

namespace coopk {

using Word = std::int64_t;

enum class Op : std::uint8_t {
  // arithmetic / compare: dst := op a [b]
  Mov, Add, Sub, Mul, Div, Mod, And, Or, Xor, Shl, Shr, Min, Max,
  Eq, Ne, Lt, Le, Gt, Ge, Not, Neg,
  // id intrinsics: dst := op
  GlobalId, LocalId, GroupId, LocalSize, NumGroups, GlobalSize,
  // memory
  LoadGlobal, StoreGlobal, LoadLocal, StoreLocal,
  AtomicCas, AtomicAdd, AtomicExch, AtomicLoad, AtomicStore,
  // structured control flow (only emitted by the builder)
  Branch,  // if !(a cmp b) goto target
  Jump,    // goto target
  // cooperative primitives
  OfferKill, RequestFork, GlobalBarrier, ResizingBarrier, Query,
  Halt,
};

enum class Cmp : std::uint8_t { Eq, Ne, Lt, Le, Gt, Ge };

/// Role of a control-flow instruction inside its structured block.
enum class BlockRole : std::uint8_t { None, IfHead, ElseJump, WhileHead, WhileBack };

enum class CostClass : std::uint8_t { Alu, Global, Local, Atomic, Primitive, Barrier };

struct Operand {
  enum class Kind : std::uint8_t { None, Var, Param, Imm };
  Kind kind = Kind::None;
  Word value = 0;  // variable slot, parameter index or immediate

  static Operand var(int slot) { return {Kind::Var, slot}; }
  static Operand param(int index) { return {Kind::Param, index}; }
  static Operand imm(Word v) { return {Kind::Imm, v}; }

  bool operator==(const Operand&) const = default;
};

struct Instruction {
  Op op = Op::Halt;
  int dst = -1;
  Operand a, b, c;
  Cmp cmp = Cmp::Ne;
  int target = -1;
  BlockRole role = BlockRole::None;
  int barrier_label = -1;
  bool synthetic = false;  // emitted by desugaring, exempt from source-level checks
  int line = 0;

  bool operator==(const Instruction& o) const {
    return op == o.op && dst == o.dst && a == o.a && b == o.b && c == o.c && cmp == o.cmp &&
           target == o.target && role == o.role && barrier_label == o.barrier_label &&
           synthetic == o.synthetic;
  }
};

inline bool is_workgroup_primitive(Op op) { return op == Op::OfferKill || op == Op::RequestFork; }
inline bool is_kernel_primitive(Op op) {
  return op == Op::GlobalBarrier || op == Op::ResizingBarrier;
}
inline bool is_primitive(Op op) { return is_workgroup_primitive(op) || is_kernel_primitive(op); }

inline CostClass cost_class(Op op) {
  switch (op) {
    case Op::LoadGlobal:
    case Op::StoreGlobal: return CostClass::Global;
    case Op::LoadLocal:
    case Op::StoreLocal: return CostClass::Local;
    case Op::AtomicCas:
    case Op::AtomicAdd:
    case Op::AtomicExch:
    case Op::AtomicLoad:
    case Op::AtomicStore: return CostClass::Atomic;
    case Op::OfferKill:
    case Op::RequestFork:
    case Op::Query: return CostClass::Primitive;
    case Op::GlobalBarrier:
    case Op::ResizingBarrier: return CostClass::Barrier;
    default: return CostClass::Alu;
  }
}

/// Number of value operands an op reads (excluding branch compare operands).
inline int arity(Op op) {
  switch (op) {
    case Op::Mov: case Op::Not: case Op::Neg:
    case Op::LoadGlobal: case Op::LoadLocal: case Op::AtomicLoad: return 1;
    case Op::Add: case Op::Sub: case Op::Mul: case Op::Div: case Op::Mod:
    case Op::And: case Op::Or: case Op::Xor: case Op::Shl: case Op::Shr:
    case Op::Min: case Op::Max:
    case Op::Eq: case Op::Ne: case Op::Lt: case Op::Le: case Op::Gt: case Op::Ge:
    case Op::StoreGlobal: case Op::StoreLocal: case Op::AtomicAdd: case Op::AtomicExch:
    case Op::AtomicStore: case Op::Branch: return 2;
    case Op::AtomicCas: return 3;
    default: return 0;
  }
}

inline bool writes_dst(Op op) {
  switch (op) {
    case Op::StoreGlobal: case Op::StoreLocal: case Op::AtomicStore:
    case Op::Branch: case Op::Jump:
    case Op::OfferKill: case Op::RequestFork: case Op::GlobalBarrier:
    case Op::ResizingBarrier: case Op::Halt: return false;
    default: return true;
  }
}

struct Program {
  std::string name = "kernel";
  std::vector<std::string> params;
  std::vector<std::string> vars;
  std::vector<int> transmit;  // sorted variable slots
  std::vector<Instruction> code;
  int groups = 1;      // requested N
  int wgsize = 1;      // requested d
  int local_size = 0;  // group-local cells per workgroup

  std::optional<int> find_var(std::string_view n) const {
    auto it = std::find(vars.begin(), vars.end(), n);
    if (it == vars.end()) return std::nullopt;
    return static_cast<int>(it - vars.begin());
  }
  std::optional<int> find_param(std::string_view n) const {
    auto it = std::find(params.begin(), params.end(), n);
    if (it == params.end()) return std::nullopt;
    return static_cast<int>(it - params.begin());
  }
  bool is_transmit(int slot) const {
    return std::binary_search(transmit.begin(), transmit.end(), slot);
  }
  int size() const { return static_cast<int>(code.size()); }
  bool has_resizing_barrier() const {
    return std::any_of(code.begin(), code.end(),
                       [](const Instruction& i) { return i.op == Op::ResizingBarrier; });
  }
};

using ProgramPtr = std::shared_ptr<const Program>;

/// A kernel launch: program, requested workgroups N, threads per workgroup d,
/// parameter values and the initial global memory image.
struct LaunchSpec {
  ProgramPtr program;
  int groups = 1;
  int wgsize = 1;
  bool cooperative = true;
  std::vector<Word> args;
  std::vector<Word> memory;

  void check() const {
    if (!program) throw Error(ErrorKind::InvalidConfig, "launch without program");
    if (groups < 1) throw Error(ErrorKind::InvalidConfig, "N must be >= 1");
    if (wgsize < 1) throw Error(ErrorKind::InvalidConfig, "d must be >= 1");
    if (args.size() != program->params.size())
      throw Error(ErrorKind::InvalidConfig,
                  "kernel '" + program->name + "' expects " +
                      std::to_string(program->params.size()) + " arguments, got " +
                      std::to_string(args.size()));
  }
};

/// Operand spelled by name (variable or parameter) or as an immediate.
struct Arg {
  std::variant<std::string, Word> v;
  Arg(const char* s) : v(std::string(s)) {}
  Arg(std::string s) : v(std::move(s)) {}
  Arg(int x) : v(static_cast<Word>(x)) {}
  Arg(long x) : v(static_cast<Word>(x)) {}
  Arg(long long x) : v(static_cast<Word>(x)) {}
};

/// Structured builder. Blocks opened with if_/while_ must be closed with end().
class ProgramBuilder {
 public:
  explicit ProgramBuilder(std::string name = "kernel") { prog_.name = std::move(name); }

  ProgramBuilder& groups(int n) { prog_.groups = n; return *this; }
  ProgramBuilder& wgsize(int d) { prog_.wgsize = d; return *this; }
  ProgramBuilder& local_size(int cells) { prog_.local_size = cells; return *this; }
  ProgramBuilder& at_line(int line) { line_ = line; return *this; }

  ProgramBuilder& param(const std::string& name) {
    if (prog_.find_param(name) || prog_.find_var(name))
      throw Error(ErrorKind::Validation, "duplicate name '" + name + "'");
    prog_.params.push_back(name);
    return *this;
  }

  ProgramBuilder& transmit(const std::string& name) {
    if (prog_.find_param(name))
      throw Error(ErrorKind::Validation, "parameter '" + name + "' cannot be transmit");
    int slot = var_slot(name);
    auto& t = prog_.transmit;
    if (!std::binary_search(t.begin(), t.end(), slot)) t.insert(std::upper_bound(t.begin(), t.end(), slot), slot);
    return *this;
  }

  ProgramBuilder& op(const std::string& dst, Op o, std::vector<Arg> args = {}) {
    if (static_cast<int>(args.size()) != arity(o) || !writes_dst(o) || o == Op::Query)
      throw Error(ErrorKind::Validation, "bad operand count for op");
    Instruction ins;
    ins.op = o;
    ins.dst = dst_slot(dst);
    if (args.size() > 0) ins.a = operand(args[0]);
    if (args.size() > 1) ins.b = operand(args[1]);
    if (args.size() > 2) ins.c = operand(args[2]);
    return emit(ins);
  }

  ProgramBuilder& mov(const std::string& d, Arg a) { return op(d, Op::Mov, {std::move(a)}); }
  ProgramBuilder& add(const std::string& d, Arg a, Arg b) { return op(d, Op::Add, {std::move(a), std::move(b)}); }
  ProgramBuilder& sub(const std::string& d, Arg a, Arg b) { return op(d, Op::Sub, {std::move(a), std::move(b)}); }
  ProgramBuilder& mul(const std::string& d, Arg a, Arg b) { return op(d, Op::Mul, {std::move(a), std::move(b)}); }
  ProgramBuilder& load_global(const std::string& d, Arg addr) { return op(d, Op::LoadGlobal, {std::move(addr)}); }
  ProgramBuilder& load_local(const std::string& d, Arg addr) { return op(d, Op::LoadLocal, {std::move(addr)}); }
  ProgramBuilder& atomic_load(const std::string& d, Arg addr) { return op(d, Op::AtomicLoad, {std::move(addr)}); }
  ProgramBuilder& atomic_add(const std::string& d, Arg addr, Arg v) { return op(d, Op::AtomicAdd, {std::move(addr), std::move(v)}); }
  ProgramBuilder& atomic_cas(const std::string& d, Arg addr, Arg expected, Arg desired) {
    return op(d, Op::AtomicCas, {std::move(addr), std::move(expected), std::move(desired)});
  }
  ProgramBuilder& intrinsic(const std::string& d, Op o) { return op(d, o); }

  ProgramBuilder& store_global(Arg addr, Arg v) { return store(Op::StoreGlobal, std::move(addr), std::move(v)); }
  ProgramBuilder& store_local(Arg addr, Arg v) { return store(Op::StoreLocal, std::move(addr), std::move(v)); }
  ProgramBuilder& atomic_store(Arg addr, Arg v) { return store(Op::AtomicStore, std::move(addr), std::move(v)); }

  ProgramBuilder& query(const std::string& d) {
    Instruction ins;
    ins.op = Op::Query;
    ins.dst = dst_slot(d);
    return emit(ins);
  }

  ProgramBuilder& if_(Arg a, Cmp c = Cmp::Ne, Arg b = Arg(0)) {
    open_.push_back({BlockRole::IfHead, pc(), -1});
    return branch_head(BlockRole::IfHead, std::move(a), c, std::move(b));
  }
  ProgramBuilder& else_() {
    if (open_.empty() || open_.back().role != BlockRole::IfHead || open_.back().else_pc >= 0)
      throw Error(ErrorKind::Validation, "'else' without matching 'if'");
    Instruction j;
    j.op = Op::Jump;
    j.role = BlockRole::ElseJump;
    open_.back().else_pc = pc();
    emit(j);
    prog_.code[open_.back().head_pc].target = pc();
    return *this;
  }
  ProgramBuilder& while_(Arg a, Cmp c = Cmp::Ne, Arg b = Arg(0)) {
    open_.push_back({BlockRole::WhileHead, pc(), -1});
    return branch_head(BlockRole::WhileHead, std::move(a), c, std::move(b));
  }
  ProgramBuilder& end() {
    if (open_.empty()) throw Error(ErrorKind::Validation, "'end' without open block");
    Block blk = open_.back();
    open_.pop_back();
    if (blk.role == BlockRole::WhileHead) {
      Instruction j;
      j.op = Op::Jump;
      j.role = BlockRole::WhileBack;
      j.target = blk.head_pc;
      emit(j);
      prog_.code[blk.head_pc].target = pc();
    } else if (blk.else_pc >= 0) {
      prog_.code[blk.else_pc].target = pc();
    } else {
      prog_.code[blk.head_pc].target = pc();
    }
    return *this;
  }

  ProgramBuilder& offer_kill() { return simple(Op::OfferKill); }
  ProgramBuilder& request_fork() { return simple(Op::RequestFork); }
  ProgramBuilder& resizing_barrier() { return simple(Op::ResizingBarrier); }
  ProgramBuilder& halt() { return simple(Op::Halt); }
  ProgramBuilder& global_barrier(int label = -1) {
    Instruction ins;
    ins.op = Op::GlobalBarrier;
    ins.barrier_label = label >= 0 ? label : next_label_;
    next_label_ = std::max(next_label_, ins.barrier_label + 1);
    return emit(ins);
  }

  int pc() const { return static_cast<int>(prog_.code.size()); }
  int depth() const { return static_cast<int>(open_.size()); }

  Program build() const {
    if (!open_.empty()) throw Error(ErrorKind::Validation, "unterminated block at end of program");
    return prog_;
  }
  ProgramPtr build_shared() const { return std::make_shared<const Program>(build()); }

 private:
  struct Block {
    BlockRole role;
    int head_pc;
    int else_pc;
  };

  int var_slot(const std::string& name) {
    if (auto s = prog_.find_var(name)) return *s;
    if (name.empty()) throw Error(ErrorKind::Validation, "empty variable name");
    prog_.vars.push_back(name);
    return static_cast<int>(prog_.vars.size()) - 1;
  }
  int dst_slot(const std::string& name) {
    if (prog_.find_param(name))
      throw Error(ErrorKind::Validation, "kernel parameter '" + name + "' is immutable");
    return var_slot(name);
  }
  Operand operand(const Arg& a) {
    if (auto w = std::get_if<Word>(&a.v)) return Operand::imm(*w);
    const auto& name = std::get<std::string>(a.v);
    if (auto p = prog_.find_param(name)) return Operand::param(*p);
    return Operand::var(var_slot(name));
  }
  ProgramBuilder& store(Op o, Arg addr, Arg v) {
    Instruction ins;
    ins.op = o;
    ins.a = operand(addr);
    ins.b = operand(v);
    return emit(ins);
  }
  ProgramBuilder& simple(Op o) {
    Instruction ins;
    ins.op = o;
    return emit(ins);
  }
  ProgramBuilder& branch_head(BlockRole role, Arg a, Cmp c, Arg b) {
    Instruction ins;
    ins.op = Op::Branch;
    ins.role = role;
    ins.cmp = c;
    ins.a = operand(a);
    ins.b = operand(b);
    return emit(ins);
  }
  ProgramBuilder& emit(Instruction ins) {
    ins.line = line_;
    prog_.code.push_back(ins);
    return *this;
  }

  Program prog_;
  std::vector<Block> open_;
  int next_label_ = 0;
  int line_ = 0;
};

}  // namespace coopk
