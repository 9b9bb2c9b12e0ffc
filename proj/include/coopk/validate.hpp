#pragma once

// Conservative syntactic checks for cooperative kernels.
//
// Uniformity is approximated by taint: values derived from get_local_id /
// get_global_id or from atomic read-modify-write results vary per thread;
// get_group_id additionally varies across workgroups. Plain loads are assumed
// uniform, as in the kernel programmer's contract. Assignments under a varying
// guard inherit the guard's variance.

#include <string>
#include <vector>

#include "coopk/program.hpp"

namespace coopk {

enum class ViolationKind {
  NonUniformWorkgroupOp,
  NonUniformBarrier,
  TransmitUnassigned,
  TransmitNotRootScope,
  MalformedControlFlow,
};

struct Violation {
  ViolationKind kind;
  int pc;
  int line;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string summary() const {
    std::string s;
    for (const auto& v : violations)
      s += "line " + std::to_string(v.line) + " (pc " + std::to_string(v.pc) + "): " + v.message + "\n";
    return s;
  }
};

namespace detail {

struct Variance {
  std::vector<bool> thread;  // varies between threads of one workgroup
  std::vector<bool> group;   // varies anywhere in the kernel
};

inline bool reads(const Operand& o, const std::vector<bool>& tainted) {
  return o.kind == Operand::Kind::Var && tainted[static_cast<size_t>(o.value)];
}

inline bool instruction_reads(const Instruction& ins, const std::vector<bool>& t) {
  return reads(ins.a, t) || reads(ins.b, t) || reads(ins.c, t);
}

/// guards[pc] = pcs of the Branch instructions whose block encloses pc.
inline std::vector<std::vector<int>> enclosing_guards(const Program& p) {
  std::vector<std::vector<int>> guards(p.code.size());
  struct Open { int head; int end; };
  std::vector<Open> stack;
  for (int pc = 0; pc < p.size(); ++pc) {
    while (!stack.empty() && pc >= stack.back().end) stack.pop_back();
    for (const auto& o : stack) guards[pc].push_back(o.head);
    const auto& ins = p.code[pc];
    if (ins.op != Op::Branch) continue;
    int end = ins.target;
    if (ins.role == BlockRole::IfHead && end > 0 && p.code[end - 1].role == BlockRole::ElseJump &&
        end - 1 > pc)
      end = p.code[end - 1].target;
    stack.push_back({pc, end});
  }
  return guards;
}

inline Variance compute_variance(const Program& p, const std::vector<std::vector<int>>& guards) {
  const size_t nv = p.vars.size();
  Variance v{std::vector<bool>(nv, false), std::vector<bool>(nv, false)};
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pc = 0; pc < p.size(); ++pc) {
      const auto& ins = p.code[pc];
      if (ins.dst < 0) continue;
      auto d = static_cast<size_t>(ins.dst);
      bool thread_src = ins.op == Op::LocalId || ins.op == Op::GlobalId || ins.op == Op::AtomicCas ||
                        ins.op == Op::AtomicAdd || ins.op == Op::AtomicExch;
      bool group_src = thread_src || ins.op == Op::GroupId;
      bool t = thread_src || instruction_reads(ins, v.thread);
      bool g = group_src || instruction_reads(ins, v.group);
      for (int gpc : guards[pc]) {
        t = t || instruction_reads(p.code[gpc], v.thread);
        g = g || instruction_reads(p.code[gpc], v.group);
      }
      if (t && !v.thread[d]) { v.thread[d] = true; changed = true; }
      if ((g || t) && !v.group[d]) { v.group[d] = true; changed = true; }
    }
  }
  return v;
}

class DefiniteAssignment {
 public:
  DefiniteAssignment(const Program& p, ValidationReport& r) : p_(p), r_(r) {}

  void run() {
    std::vector<bool> defined(p_.vars.size(), false);
    walk(0, p_.size(), defined);
  }

 private:
  void check_fork_point(int pc, const std::vector<bool>& defined) {
    for (int s : p_.transmit) {
      if (!defined[static_cast<size_t>(s)])
        r_.violations.push_back({ViolationKind::TransmitUnassigned, pc, p_.code[pc].line,
                                 "transmit variable '" + p_.vars[s] +
                                     "' may be unassigned at this fork point"});
    }
  }

  // Returns the definitely-assigned set after executing [begin, end).
  std::vector<bool> walk(int begin, int end, std::vector<bool> defined) {
    int pc = begin;
    while (pc < end) {
      const auto& ins = p_.code[pc];
      if (ins.op == Op::RequestFork || ins.op == Op::ResizingBarrier) check_fork_point(pc, defined);
      if (ins.op == Op::Branch) {
        int t = ins.target;
        if (t <= pc || t > p_.size()) {
          r_.violations.push_back({ViolationKind::MalformedControlFlow, pc, ins.line, "bad branch target"});
          return defined;
        }
        if (ins.role == BlockRole::IfHead && t - 1 > pc && p_.code[t - 1].role == BlockRole::ElseJump) {
          int join = p_.code[t - 1].target;
          auto then_out = walk(pc + 1, t - 1, defined);
          auto else_out = walk(t, join, defined);
          for (size_t i = 0; i < defined.size(); ++i) defined[i] = then_out[i] && else_out[i];
          pc = join;
        } else if (ins.role == BlockRole::WhileHead) {
          walk(pc + 1, t - 1, defined);
          pc = t;
        } else {
          walk(pc + 1, t, defined);
          pc = t;
        }
        continue;
      }
      if (ins.dst >= 0) defined[static_cast<size_t>(ins.dst)] = true;
      ++pc;
    }
    return defined;
  }

  const Program& p_;
  ValidationReport& r_;
};

}  // namespace detail

inline ValidationReport validate(const Program& p) {
  ValidationReport r;
  auto guards = detail::enclosing_guards(p);
  auto var = detail::compute_variance(p, guards);

  for (int pc = 0; pc < p.size(); ++pc) {
    const auto& ins = p.code[pc];
    if (ins.synthetic) continue;
    if (is_workgroup_primitive(ins.op)) {
      for (int g : guards[pc])
        if (detail::instruction_reads(p.code[g], var.thread)) {
          r.violations.push_back({ViolationKind::NonUniformWorkgroupOp, pc, ins.line,
                                  std::string(ins.op == Op::OfferKill ? "offer_kill" : "request_fork") +
                                      " under a thread-dependent condition (line " +
                                      std::to_string(p.code[g].line) + ")"});
          break;
        }
    } else if (is_kernel_primitive(ins.op)) {
      for (int g : guards[pc])
        if (detail::instruction_reads(p.code[g], var.group)) {
          r.violations.push_back({ViolationKind::NonUniformBarrier, pc, ins.line,
                                  "barrier under a non-uniform condition (line " +
                                      std::to_string(p.code[g].line) + ")"});
          break;
        }
    }
  }

  for (int s : p.transmit) {
    bool root = false;
    for (int pc = 0; pc < p.size(); ++pc)
      if (p.code[pc].dst == s && guards[pc].empty()) root = true;
    if (!root)
      r.violations.push_back({ViolationKind::TransmitNotRootScope, -1, 0,
                              "transmit variable '" + p.vars[s] + "' is not assigned in root scope"});
  }

  detail::DefiniteAssignment(p, r).run();
  return r;
}

}  // namespace coopk
