#pragma once

// Explicit-state exploration of the transition system.
//
// Breadth-first over canonical state encodings, from every initial active
// count M0 in [1, N] unless one is fixed. Safety properties are checked on
// each transition; deadlocks on each state; non-termination after the search
// by looking for a strongly connected component that is fair (every
// workgroup enabled somewhere in it also moves inside it), removing offending
// states and retrying on what is left of the component.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "coopk/assembler.hpp"
#include "coopk/errors.hpp"
#include "coopk/semantics.hpp"

namespace coopk {

enum class VerdictStatus { Pass, Counterexample, BudgetExhausted };

inline std::string_view to_string(VerdictStatus v) {
  switch (v) {
    case VerdictStatus::Pass: return "pass";
    case VerdictStatus::Counterexample: return "counterexample";
    case VerdictStatus::BudgetExhausted: return "budget-exhausted";
  }
  return "?";
}

struct Counterexample {
  int initial_groups = 1;
  std::vector<Transition> steps;
  std::optional<std::size_t> loop_start;  // lasso: steps[loop_start..] return to the state before it
  std::string message;
};

struct PropertyVerdict {
  std::string property;
  VerdictStatus status = VerdictStatus::Pass;
  std::optional<Counterexample> trace;
};

using StateInvariant = std::function<std::optional<std::string>(const KernelState&)>;

struct NamedInvariant {
  std::string name;
  StateInvariant check;
};

struct ExplorationTarget {
  ProgramPtr program;
  int groups = 1;  // N
  int wgsize = 1;  // d
  std::vector<Word> memory;
  std::vector<Word> args;
};

struct ExplorationConfig {
  std::size_t max_states = 500000;
  std::size_t max_depth = 1000000;
  int fork_cap = 2;
  int initial_groups = 0;  // 0: every M0 in [1, N]
  bool fairness = true;
  int occupancy_units = 0;  // 0: every workgroup may run
  std::vector<NamedInvariant> invariants;

  void check() const {
    if (max_states == 0 || max_depth == 0) throw Error(ErrorKind::InvalidConfig, "exploration caps must be positive");
    if (fork_cap < 0) throw Error(ErrorKind::InvalidConfig, "fork cap must be >= 0");
  }
};

inline const std::vector<std::string>& builtin_properties() {
  static const std::vector<std::string> p{"m-bounds",     "contiguity",  "kill-order",       "survivor-prefix",
                                          "fork-framing", "transmit-completeness", "runtime-errors", "deadlock-freedom",
                                          "termination"};
  return p;
}

struct ExplorationReport {
  std::vector<PropertyVerdict> verdicts;
  std::size_t states = 0;
  std::size_t transitions = 0;
  std::size_t frontier = 0;  // unexpanded states when the budget ran out
  std::size_t terminal_states = 0;
  std::size_t depth = 0;
  bool exhaustive = true;
  bool completes = false;  // some schedule terminates every thread

  const PropertyVerdict& verdict(const std::string& name) const {
    for (const auto& v : verdicts)
      if (v.property == name) return v;
    throw Error(ErrorKind::InvalidConfig, "no property '" + name + "'");
  }
  VerdictStatus overall() const {
    bool budget = false;
    for (const auto& v : verdicts) {
      if (v.status == VerdictStatus::Counterexample) return VerdictStatus::Counterexample;
      if (v.status == VerdictStatus::BudgetExhausted) budget = true;
    }
    return budget ? VerdictStatus::BudgetExhausted : VerdictStatus::Pass;
  }
};

namespace detail {

inline std::uint32_t wg_bit(int wg) { return wg < 0 ? ~0u : (1u << wg); }

class Explorer {
 public:
  Explorer(const ExplorationTarget& target, const ExplorationConfig& cfg) : cfg_(cfg) {
    cfg_.check();
    if (target.groups < 1 || target.groups > 31) throw Error(ErrorKind::InvalidConfig, "checker supports 1 <= N <= 31");
    LaunchSpec spec;
    spec.program = std::make_shared<const Program>(desugar_resizing_barrier(*target.program));
    spec.groups = target.groups;
    spec.wgsize = target.wgsize;
    spec.args = target.args;
    spec.memory = target.memory;
    spec_ = spec;
    for (const auto& n : builtin_properties()) report_.verdicts.push_back({n, VerdictStatus::Pass, std::nullopt});
    for (const auto& inv : cfg_.invariants) report_.verdicts.push_back({inv.name, VerdictStatus::Pass, std::nullopt});
  }

  ExplorationReport run() {
    int lo = cfg_.initial_groups > 0 ? cfg_.initial_groups : 1;
    int hi = cfg_.initial_groups > 0 ? cfg_.initial_groups : spec_.groups;
    for (int m = lo; m <= hi; ++m) {
      auto s = make_initial_state(spec_, m, cfg_.occupancy_units);
      add_state(std::move(s), -1, Transition{}, m, 0);
    }
    while (!queue_.empty()) {
      if (nodes_.size() >= cfg_.max_states) {
        report_.exhaustive = false;
        break;
      }
      int id = queue_.front();
      queue_.pop_front();
      expand(id);
    }
    report_.frontier = queue_.size();
    report_.states = nodes_.size();
    if (report_.exhaustive) {
      find_nontermination();
    } else {
      for (auto& v : report_.verdicts)
        if (v.status == VerdictStatus::Pass) v.status = VerdictStatus::BudgetExhausted;
    }
    return report_;
  }

 private:
  struct Edge {
    int to;
    int wg;  // -1: barrier (every workgroup moves)
  };
  struct Node {
    KernelState state;
    int parent;
    Transition via;
    int initial_groups;
    std::size_t depth;
    std::vector<Edge> edges;
    std::uint32_t enabled = 0;  // workgroups with an enabled transition
    bool expanded = false;
  };

  PropertyVerdict& verdict(const std::string& name) {
    for (auto& v : report_.verdicts)
      if (v.property == name) return v;
    throw Error(ErrorKind::InvalidConfig, "no property '" + name + "'");
  }

  std::vector<Transition> path_to(int id) const {
    std::vector<Transition> steps;
    for (int n = id; nodes_[static_cast<size_t>(n)].parent >= 0; n = nodes_[static_cast<size_t>(n)].parent)
      steps.push_back(nodes_[static_cast<size_t>(n)].via);
    std::reverse(steps.begin(), steps.end());
    return steps;
  }

  void violate(const std::string& property, int from, std::optional<Transition> last, const std::string& msg) {
    auto& v = verdict(property);
    if (v.status == VerdictStatus::Counterexample) return;
    Counterexample c;
    c.initial_groups = nodes_[static_cast<size_t>(from)].initial_groups;
    c.steps = path_to(from);
    if (last) c.steps.push_back(*last);
    c.message = msg;
    v.status = VerdictStatus::Counterexample;
    v.trace = std::move(c);
  }

  int add_state(KernelState s, int parent, Transition via, int m0, std::size_t depth) {
    auto key = encode(s);
    auto it = index_.find(key);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(nodes_.size());
    index_.emplace(std::move(key), id);
    if (s.all_terminated()) {
      report_.completes = true;
      ++report_.terminal_states;
    }
    nodes_.push_back({std::move(s), parent, via, m0, depth, {}, 0, false});
    report_.depth = std::max(report_.depth, depth);
    for (const auto& inv : cfg_.invariants)
      if (auto msg = inv.check(nodes_.back().state)) violate(inv.name, id, std::nullopt, *msg);
    if (depth < cfg_.max_depth) {
      queue_.push_back(id);
    } else {
      report_.exhaustive = false;
    }
    return id;
  }

  void expand(int id) {
    auto& node = nodes_[static_cast<size_t>(id)];
    node.expanded = true;
    const KernelState pre = node.state;
    auto ts = enabled_transitions(pre, TransitionOptions{cfg_.fork_cap});
    std::uint32_t enabled = 0;
    for (const auto& t : ts) enabled |= t.wg < 0 ? active_mask(pre) : wg_bit(t.wg);
    node.enabled = enabled;
    if (ts.empty() && !pre.all_terminated())
      violate("deadlock-freedom", id, std::nullopt, "no transition enabled but some thread has not terminated");
    for (const auto& t : ts) {
      KernelState post = pre;
      try {
        apply_transition_inplace(post, t);
      } catch (const Error& e) {
        violate("runtime-errors", id, t, e.what());
        continue;
      }
      ++report_.transitions;
      check_transition(id, pre, t, post);
      int to = add_state(std::move(post), id, t, nodes_[static_cast<size_t>(id)].initial_groups,
                         nodes_[static_cast<size_t>(id)].depth + 1);
      nodes_[static_cast<size_t>(id)].edges.push_back({to, t.wg});
    }
  }

  static std::uint32_t active_mask(const KernelState& s) { return s.M >= 32 ? ~0u : ((1u << s.M) - 1); }

  void check_transition(int from, const KernelState& pre, const Transition& t, const KernelState& post) {
    if (post.M < 1 || post.M > post.N)
      violate("m-bounds", from, t, "M=" + std::to_string(post.M) + " outside [1, " + std::to_string(post.N) + "]");
    if (auto msg = post.invariant_violation(); msg && post.M >= 1 && post.M <= post.N) violate("contiguity", from, t, *msg);

    if (t.rule == Rule::Kill && !(t.wg == pre.M - 1 && pre.M > 1))
      violate("kill-order", from, t, "kill of workgroup " + std::to_string(t.wg) + " with M=" + std::to_string(pre.M));
    if (post.M < pre.M && t.rule != Rule::Kill)
      violate("kill-order", from, t, "active count dropped outside a kill");

    int keep = std::min(pre.M, post.M);
    for (int i = 0; i < keep; ++i) {
      if (!post.active(i)) {
        violate("survivor-prefix", from, t, "workgroup " + std::to_string(i) + " vanished");
        break;
      }
      if (t.rule == Rule::Kill && !(post.group(i) == pre.group(i))) {
        violate("survivor-prefix", from, t, "kill changed surviving workgroup " + std::to_string(i));
        break;
      }
    }

    if (t.rule != Rule::Fork) return;
    const auto& src = pre.group(t.wg);
    for (int i = 0; i < pre.M; ++i) {
      const auto& a = pre.group(i).threads;
      const auto& b = post.group(i).threads;
      for (size_t k = 0; k < a.size(); ++k) {
        bool env_same = a[k].env == b[k].env;
        int want_pc = i == t.wg ? (a[k].pc + 1 >= pre.prog().size() ? kTerminated : a[k].pc + 1) : a[k].pc;
        if (!env_same || b[k].pc != want_pc) {
          violate("fork-framing", from, t, "fork altered thread " + std::to_string(k) + " of workgroup " + std::to_string(i));
          return;
        }
      }
    }
    const auto& tx = pre.prog().transmit;
    for (int i = pre.M; i < post.M; ++i)
      for (const auto& th : post.group(i).threads)
        for (size_t slot = 0; slot < th.env.values.size(); ++slot) {
          bool is_tx = std::binary_search(tx.begin(), tx.end(), static_cast<int>(slot));
          const auto& want = is_tx ? src.threads[0].env.values[slot] : std::optional<Word>{};
          if (th.env.values[slot] != want) {
            violate("transmit-completeness", from, t,
                    "new workgroup " + std::to_string(i) + " has wrong value for '" + pre.prog().vars[slot] + "'");
            return;
          }
        }
  }

  // ---------------------------------------------------------- non-termination

  std::vector<std::vector<int>> sccs(const std::vector<char>& allowed) const {
    const int n = static_cast<int>(nodes_.size());
    std::vector<int> index(static_cast<size_t>(n), -1), low(static_cast<size_t>(n), 0);
    std::vector<char> on(static_cast<size_t>(n), 0);
    std::vector<int> stack;
    std::vector<std::vector<int>> out;
    int counter = 0;
    struct Frame {
      int v;
      size_t next;
    };
    for (int root = 0; root < n; ++root) {
      if (!allowed[static_cast<size_t>(root)] || index[static_cast<size_t>(root)] >= 0) continue;
      std::vector<Frame> call{{root, 0}};
      index[static_cast<size_t>(root)] = low[static_cast<size_t>(root)] = counter++;
      stack.push_back(root);
      on[static_cast<size_t>(root)] = 1;
      while (!call.empty()) {
        auto& f = call.back();
        const auto& edges = nodes_[static_cast<size_t>(f.v)].edges;
        if (f.next < edges.size()) {
          int w = edges[f.next++].to;
          if (!allowed[static_cast<size_t>(w)]) continue;
          if (index[static_cast<size_t>(w)] < 0) {
            index[static_cast<size_t>(w)] = low[static_cast<size_t>(w)] = counter++;
            stack.push_back(w);
            on[static_cast<size_t>(w)] = 1;
            call.push_back({w, 0});
          } else if (on[static_cast<size_t>(w)]) {
            low[static_cast<size_t>(f.v)] = std::min(low[static_cast<size_t>(f.v)], index[static_cast<size_t>(w)]);
          }
          continue;
        }
        int v = f.v;
        call.pop_back();
        if (!call.empty())
          low[static_cast<size_t>(call.back().v)] = std::min(low[static_cast<size_t>(call.back().v)], low[static_cast<size_t>(v)]);
        if (low[static_cast<size_t>(v)] == index[static_cast<size_t>(v)]) {
          std::vector<int> comp;
          int w;
          do {
            w = stack.back();
            stack.pop_back();
            on[static_cast<size_t>(w)] = 0;
            comp.push_back(w);
          } while (w != v);
          out.push_back(std::move(comp));
        }
      }
    }
    return out;
  }

  bool nontrivial(const std::vector<int>& comp, const std::vector<char>& in) const {
    if (comp.size() > 1) return true;
    for (const auto& e : nodes_[static_cast<size_t>(comp[0])].edges)
      if (e.to == comp[0] && in[static_cast<size_t>(e.to)]) return true;
    return false;
  }

  std::uint32_t taken_in(const std::vector<int>& comp, const std::vector<char>& in) const {
    std::uint32_t taken = 0;
    for (int v : comp)
      for (const auto& e : nodes_[static_cast<size_t>(v)].edges)
        if (in[static_cast<size_t>(e.to)]) taken |= wg_bit(e.wg);
    return taken;
  }

  /// A fair (or, without fairness, any) cycle-carrying component, as a member mask.
  std::optional<std::vector<char>> find_cycle_component() const {
    std::vector<std::vector<char>> work{std::vector<char>(nodes_.size(), 1)};
    while (!work.empty()) {
      auto allowed = std::move(work.back());
      work.pop_back();
      for (auto& comp : sccs(allowed)) {
        std::vector<char> in(nodes_.size(), 0);
        for (int v : comp) in[static_cast<size_t>(v)] = 1;
        if (!nontrivial(comp, in)) continue;
        if (!cfg_.fairness) return in;
        std::uint32_t enabled = 0;
        for (int v : comp) enabled |= nodes_[static_cast<size_t>(v)].enabled;
        std::uint32_t bad = enabled & ~taken_in(comp, in);
        if (bad == 0) return in;
        std::vector<char> rest(nodes_.size(), 0);
        bool any = false;
        for (int v : comp)
          if ((nodes_[static_cast<size_t>(v)].enabled & bad) == 0) {
            rest[static_cast<size_t>(v)] = 1;
            any = true;
          }
        if (any) work.push_back(std::move(rest));
      }
    }
    return std::nullopt;
  }

  // Shortest path inside `in` from `from` to a node satisfying `goal` via an edge
  // accepted by `edge_ok`; returns the node sequence after `from`, with edges.
  struct Hop {
    int from, to;
  };
  std::optional<std::vector<Hop>> path_within(const std::vector<char>& in, int from,
                                              const std::function<bool(int, const Edge&)>& edge_ok) const {
    std::unordered_map<int, Hop> prev;
    std::deque<int> q{from};
    std::vector<char> seen(nodes_.size(), 0);
    seen[static_cast<size_t>(from)] = 1;
    while (!q.empty()) {
      int v = q.front();
      q.pop_front();
      for (const auto& e : nodes_[static_cast<size_t>(v)].edges) {
        if (!in[static_cast<size_t>(e.to)]) continue;
        if (edge_ok(v, e)) {
          std::vector<Hop> hops{{v, e.to}};
          for (int x = v; x != from; x = prev.at(x).from) hops.push_back(prev.at(x));
          std::reverse(hops.begin(), hops.end());
          return hops;
        }
        if (!seen[static_cast<size_t>(e.to)]) {
          seen[static_cast<size_t>(e.to)] = 1;
          prev[e.to] = {v, e.to};
          q.push_back(e.to);
        }
      }
    }
    return std::nullopt;
  }

  Transition transition_of(int from, int to) const {
    return nodes_[static_cast<size_t>(to)].parent == from ? nodes_[static_cast<size_t>(to)].via : recompute(from, to);
  }

  Transition recompute(int from, int to) const {
    const auto& pre = nodes_[static_cast<size_t>(from)].state;
    const auto& want = nodes_[static_cast<size_t>(to)].state;
    for (const auto& t : enabled_transitions(pre, TransitionOptions{cfg_.fork_cap})) {
      try {
        if (encode(apply_transition(pre, t)) == encode(want)) return t;
      } catch (const Error&) {
      }
    }
    throw Error(ErrorKind::NotEnabled, "internal: edge without transition");
  }

  void find_nontermination() {
    auto comp = find_cycle_component();
    if (!comp) return;
    const auto& in = *comp;
    int entry = -1;
    for (size_t v = 0; v < in.size(); ++v)
      if (in[v]) {
        entry = static_cast<int>(v);
        break;
      }
    std::uint32_t taken = 0;
    if (cfg_.fairness) {
      std::vector<int> members;
      for (size_t v = 0; v < in.size(); ++v)
        if (in[v]) members.push_back(static_cast<int>(v));
      taken = taken_in(members, in);
    }
    std::vector<Hop> cycle;
    int cur = entry;
    for (int w = 0; w < 32 && cfg_.fairness; ++w) {
      if (!(taken & (1u << w))) continue;
      auto hops = path_within(in, cur, [w](int, const Edge& e) { return e.wg == w || e.wg < 0; });
      if (!hops) continue;
      cycle.insert(cycle.end(), hops->begin(), hops->end());
      cur = cycle.back().to;
    }
    if (cur != entry || cycle.empty()) {
      auto back = path_within(in, cur, [entry](int, const Edge& e) { return e.to == entry; });
      if (back) cycle.insert(cycle.end(), back->begin(), back->end());
    }
    Counterexample c;
    c.initial_groups = nodes_[static_cast<size_t>(entry)].initial_groups;
    c.steps = path_to(entry);
    c.loop_start = c.steps.size();
    for (const auto& h : cycle) c.steps.push_back(transition_of(h.from, h.to));
    std::uint32_t moved = 0, starved = 0;
    for (const auto& h : cycle) {
      for (const auto& e : nodes_[static_cast<size_t>(h.from)].edges)
        if (e.to == h.to) {
          moved |= e.wg < 0 ? active_mask(nodes_[static_cast<size_t>(h.from)].state) : wg_bit(e.wg);
          break;
        }
      starved |= nodes_[static_cast<size_t>(h.from)].enabled;
    }
    starved &= ~moved;
    auto list = [](std::uint32_t mask) {
      std::string out;
      for (int w = 0; w < 32; ++w)
        if (mask & (1u << w)) out += (out.empty() ? "" : ",") + std::to_string(w);
      return out;
    };
    if (cfg_.fairness) {
      c.message = "fair cycle: workgroups " + list(moved) + " keep running yet the kernel never terminates";
    } else if (starved) {
      c.message = "starvation: workgroups " + list(moved) + " spin forever while enabled workgroups " + list(starved) +
                  " never run";
    } else {
      c.message = "cycle: workgroups " + list(moved) + " run forever";
    }
    auto& v = verdict("termination");
    v.status = VerdictStatus::Counterexample;
    v.trace = std::move(c);
  }

  ExplorationConfig cfg_;
  LaunchSpec spec_;
  ExplorationReport report_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> index_;
  std::deque<int> queue_;
};

}  // namespace detail

inline ExplorationReport explore(const ExplorationTarget& target, const ExplorationConfig& config = {}) {
  return detail::Explorer(target, config).run();
}

/// At most one thread inside [begin, end) at any time.
inline NamedInvariant mutex_invariant(int begin, int end) {
  return {"mutex-safety", [begin, end](const KernelState& s) -> std::optional<std::string> {
            int inside = 0;
            for (int i = 0; i < s.M; ++i)
              for (const auto& t : s.group(i).threads)
                if (t.pc >= begin && t.pc < end) ++inside;
            if (inside > 1) return std::to_string(inside) + " threads inside the critical section";
            return std::nullopt;
          }};
}

// ------------------------------------------------------------ trace files

inline nlohmann::ordered_json trace_to_json(const ExplorationTarget& target, const ExplorationConfig& cfg,
                                            const std::string& property, const Counterexample& c) {
  nlohmann::ordered_json j;
  j["format"] = "coopk-trace";
  j["version"] = 1;
  j["property"] = property;
  j["message"] = c.message;
  j["program"] = print(*target.program);
  j["n"] = target.groups;
  j["d"] = target.wgsize;
  j["occupancy_units"] = cfg.occupancy_units;
  j["initial_groups"] = c.initial_groups;
  j["memory"] = target.memory;
  j["args"] = target.args;
  auto& steps = j["steps"] = nlohmann::ordered_json::array();
  for (const auto& t : c.steps)
    steps.push_back({{"rule", std::string(to_string(t.rule))}, {"wg", t.wg}, {"tid", t.tid}, {"choice", t.choice}});
  j["loop_start"] = c.loop_start ? nlohmann::ordered_json(*c.loop_start) : nlohmann::ordered_json(nullptr);
  return j;
}

struct ReplayResult {
  KernelState final_state;
  std::vector<KernelState> states;  // state before each step, then the final one
  bool loop_closes = false;          // lasso returns to the state at loop_start
  std::optional<std::string> error;  // error raised by the last step, if any
};

/// Re-executes a trace step by step; every step must be enabled.
inline ReplayResult replay_trace(const nlohmann::json& j) {
  if (j.value("format", "") != "coopk-trace") throw Error(ErrorKind::Parse, "not a coopk trace");
  LaunchSpec spec;
  spec.program = std::make_shared<const Program>(desugar_resizing_barrier(assemble(j.at("program").get<std::string>())));
  spec.groups = j.at("n").get<int>();
  spec.wgsize = j.at("d").get<int>();
  spec.memory = j.at("memory").get<std::vector<Word>>();
  spec.args = j.at("args").get<std::vector<Word>>();
  ReplayResult r;
  KernelState s = make_initial_state(spec, j.at("initial_groups").get<int>(), j.value("occupancy_units", 0));
  const auto& steps = j.at("steps");
  for (size_t i = 0; i < steps.size(); ++i) {
    const auto& st = steps[i];
    auto rule = rule_from_string(st.at("rule").get<std::string>());
    if (!rule) throw Error(ErrorKind::Parse, "unknown rule in trace");
    Transition t{*rule, st.at("wg").get<int>(), st.at("tid").get<int>(), st.at("choice").get<Word>()};
    auto en = enabled_transitions(s, TransitionOptions{s.N});
    if (std::find(en.begin(), en.end(), t) == en.end())
      throw Error(ErrorKind::NotEnabled, "trace step " + std::to_string(i) + " is not enabled");
    r.states.push_back(s);
    try {
      apply_transition_inplace(s, t);
    } catch (const Error& e) {
      if (i + 1 != steps.size()) throw;
      r.error = e.what();
    }
  }
  r.states.push_back(s);
  if (!j.at("loop_start").is_null()) {
    auto k = j.at("loop_start").get<size_t>();
    r.loop_closes = k < r.states.size() && encode(r.states[k]) == encode(s);
  }
  r.final_state = std::move(s);
  return r;
}

}  // namespace coopk
