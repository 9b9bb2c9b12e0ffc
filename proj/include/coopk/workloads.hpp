#pragma once

// Bundled workloads: frontier BFS and work stealing (cooperative and plain
// variants), graph and task-tree inputs with sequential oracles, the periodic
// synthetic non-cooperative kernel, and small demo kernels for the checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "coopk/assembler.hpp"
#include "coopk/bundled_kernels.hpp"
#include "coopk/errors.hpp"
#include "coopk/program.hpp"
#include "coopk/scheduler.hpp"

namespace coopk {

// ---------------------------------------------------------------- graphs

struct Graph {
  std::string name;
  int n = 0;
  int source = 0;
  std::vector<Word> offsets;  // n+1 entries
  std::vector<Word> edges;    // both directions of every undirected edge

  std::size_t edge_count() const { return edges.size() / 2; }
  bool operator==(const Graph&) const = default;
};

/// CSR from an undirected edge list; neighbours sorted, duplicates and self loops dropped.
inline Graph graph_from_edges(std::string name, int n, std::vector<std::pair<int, int>> undirected, int source = 0) {
  if (n < 1) throw Error(ErrorKind::InvalidConfig, "graph needs at least one node");
  if (source < 0 || source >= n) throw Error(ErrorKind::InvalidConfig, "source outside graph");
  std::vector<std::set<int>> adj(static_cast<size_t>(n));
  for (auto [u, v] : undirected) {
    if (u < 0 || v < 0 || u >= n || v >= n) throw Error(ErrorKind::InvalidConfig, "edge endpoint outside graph");
    if (u == v) continue;
    adj[static_cast<size_t>(u)].insert(v);
    adj[static_cast<size_t>(v)].insert(u);
  }
  Graph g;
  g.name = std::move(name);
  g.n = n;
  g.source = source;
  g.offsets.push_back(0);
  for (const auto& nb : adj) {
    for (int w : nb) g.edges.push_back(w);
    g.offsets.push_back(static_cast<Word>(g.edges.size()));
  }
  return g;
}

enum class GraphKind { Chain, Star, Grid, Random };

inline GraphKind graph_kind_from_string(std::string_view s) {
  if (s == "chain") return GraphKind::Chain;
  if (s == "star") return GraphKind::Star;
  if (s == "grid") return GraphKind::Grid;
  if (s == "random") return GraphKind::Random;
  throw Error(ErrorKind::InvalidConfig, "unknown graph kind '" + std::string(s) + "'");
}

/// Deterministic generators. chain is deep (n levels), star and random are wide.
inline Graph generate_graph(GraphKind kind, int size, std::uint64_t seed = 0) {
  if (size < 1) throw Error(ErrorKind::InvalidConfig, "graph size must be >= 1");
  std::vector<std::pair<int, int>> e;
  std::string name;
  switch (kind) {
    case GraphKind::Chain:
      name = "chain:" + std::to_string(size);
      for (int i = 0; i + 1 < size; ++i) e.emplace_back(i, i + 1);
      break;
    case GraphKind::Star:
      name = "star:" + std::to_string(size);
      for (int i = 1; i < size; ++i) e.emplace_back(0, i);
      break;
    case GraphKind::Grid: {
      name = "grid:" + std::to_string(size);
      int w = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(size))));
      for (int i = 0; i < size; ++i) {
        if ((i + 1) % w != 0 && i + 1 < size) e.emplace_back(i, i + 1);
        if (i + w < size) e.emplace_back(i, i + w);
      }
      break;
    }
    case GraphKind::Random: {
      name = "random:" + std::to_string(size) + ":" + std::to_string(seed);
      std::mt19937_64 rng(seed);
      // random spanning tree keeps the graph connected, then as many extra edges
      for (int i = 1; i < size; ++i) e.emplace_back(i, static_cast<int>(rng() % static_cast<std::uint64_t>(i)));
      for (int i = 0; i < size && size > 1; ++i) {
        int u = static_cast<int>(rng() % static_cast<std::uint64_t>(size));
        int v = static_cast<int>(rng() % static_cast<std::uint64_t>(size));
        e.emplace_back(u, v);
      }
      break;
    }
  }
  return graph_from_edges(std::move(name), size, std::move(e), 0);
}

/// Textbook queue-based BFS; -1 marks unreachable nodes.
inline std::vector<Word> bfs_oracle(const Graph& g) {
  std::vector<Word> level(static_cast<size_t>(g.n), -1);
  std::deque<int> q{g.source};
  level[static_cast<size_t>(g.source)] = 0;
  while (!q.empty()) {
    int v = q.front();
    q.pop_front();
    for (Word i = g.offsets[static_cast<size_t>(v)]; i < g.offsets[static_cast<size_t>(v) + 1]; ++i) {
      auto w = static_cast<size_t>(g.edges[static_cast<size_t>(i)]);
      if (level[w] < 0) {
        level[w] = level[static_cast<size_t>(v)] + 1;
        q.push_back(static_cast<int>(w));
      }
    }
  }
  return level;
}

// ---------------------------------------------------------------- programs

inline ProgramPtr bundled(std::string_view text) { return std::make_shared<const Program>(assemble(text)); }

/// Cooperative frontier traversal (resizing barriers, transmitted level/in/out).
inline ProgramPtr make_graph_program(const Graph& = {}) { return bundled(kernels::bfs); }
inline ProgramPtr make_graph_program_plain() { return bundled(kernels::bfs_plain); }

struct BfsLayout {
  Word offsets = 0, edges = 0, levels = 0, n0 = 0, n1 = 0;
  int n = 0;
};

struct WorkloadInstance {
  LaunchSpec launch;
  BfsLayout bfs;
  Word log = -1;  // work stealing log base
};

inline WorkloadInstance make_bfs_instance(const Graph& g, int groups, int wgsize, bool cooperative) {
  WorkloadInstance w;
  auto& L = w.bfs;
  L.n = g.n;
  std::vector<Word> mem;
  L.offsets = 0;
  mem.insert(mem.end(), g.offsets.begin(), g.offsets.end());
  L.edges = static_cast<Word>(mem.size());
  mem.insert(mem.end(), g.edges.begin(), g.edges.end());
  L.levels = static_cast<Word>(mem.size());
  mem.resize(mem.size() + static_cast<size_t>(g.n), -1);
  mem[static_cast<size_t>(L.levels + g.source)] = 0;
  L.n0 = static_cast<Word>(mem.size());
  mem.resize(mem.size() + 1 + static_cast<size_t>(g.n), 0);
  mem[static_cast<size_t>(L.n0)] = 1;
  mem[static_cast<size_t>(L.n0 + 1)] = g.source;
  L.n1 = static_cast<Word>(mem.size());
  mem.resize(mem.size() + 1 + static_cast<size_t>(g.n), 0);
  w.launch.program = cooperative ? make_graph_program(g) : make_graph_program_plain();
  w.launch.groups = groups;
  w.launch.wgsize = wgsize;
  w.launch.cooperative = cooperative;
  w.launch.args = {L.offsets, L.edges, L.levels, L.n0, L.n1};
  w.launch.memory = std::move(mem);
  return w;
}

inline std::vector<Word> extract_levels(const std::vector<Word>& memory, const BfsLayout& L) {
  auto b = memory.begin() + L.levels;
  return {b, b + L.n};
}

// ---------------------------------------------------------------- work stealing

inline ProgramPtr make_workstealing_program() { return bundled(kernels::workstealing); }
inline ProgramPtr make_workstealing_program_plain() { return bundled(kernels::workstealing_plain); }

inline constexpr int kMaxTreeDepth = 30;

inline Word encode_task(Word id, int depth) { return id * 32 + depth; }

inline std::uint64_t tree_size(int depth, int branching) {
  std::uint64_t total = 0, level = 1;
  for (int i = 0; i <= depth; ++i) {
    total += level;
    level *= static_cast<std::uint64_t>(branching);
  }
  return total;
}

/// Sequential expansion of the task tree (heap numbering: child j of id is id*b+j+1).
inline std::vector<Word> task_tree_oracle(int depth, int branching) {
  std::vector<Word> out;
  std::deque<std::pair<Word, int>> q{{0, 0}};
  while (!q.empty()) {
    auto [id, d] = q.front();
    q.pop_front();
    out.push_back(encode_task(id, d));
    if (d < depth)
      for (int j = 0; j < branching; ++j) q.emplace_back(id * branching + j + 1, d + 1);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline WorkloadInstance make_workstealing_instance(int depth, int branching, int groups, bool cooperative) {
  if (depth < 0 || depth > kMaxTreeDepth) throw Error(ErrorKind::InvalidConfig, "tree depth outside [0, 30]");
  if (branching < 1) throw Error(ErrorKind::InvalidConfig, "branching must be >= 1");
  std::uint64_t tasks = tree_size(depth, branching);
  if (tasks > 200000) throw Error(ErrorKind::InvalidConfig, "task tree too large for simulation");
  WorkloadInstance w;
  const Word qstride = 3 + static_cast<Word>(tasks);
  const Word queues = 0;
  const Word pending = queues + qstride * groups;
  const Word log = pending + 1;
  std::vector<Word> mem(static_cast<size_t>(log + 1 + static_cast<Word>(tasks)), 0);
  // root task in queue 0
  mem[static_cast<size_t>(queues + 2)] = 1;
  mem[static_cast<size_t>(queues + 3)] = encode_task(0, 0);
  mem[static_cast<size_t>(pending)] = 1;
  w.launch.program = cooperative ? make_workstealing_program() : make_workstealing_program_plain();
  w.launch.groups = groups;
  w.launch.wgsize = 1;
  w.launch.cooperative = cooperative;
  w.launch.args = {queues, groups, qstride, pending, log, branching, depth};
  w.launch.memory = std::move(mem);
  w.log = log;
  return w;
}

/// Processed tasks recorded in the log, sorted.
inline std::vector<Word> extract_processed(const std::vector<Word>& memory, Word log) {
  Word count = memory[static_cast<size_t>(log)];
  std::vector<Word> out(memory.begin() + log + 1, memory.begin() + log + 1 + count);
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- non-cooperative stream

struct WorkloadPreset {
  std::string name;
  double period_ms;
  double duration_ms;
};

inline WorkloadPreset workload_preset(std::string_view name) {
  if (name == "light") return {"light", 70, 3};
  if (name == "medium") return {"medium", 40, 3};
  if (name == "heavy") return {"heavy", 40, 10};
  throw Error(ErrorKind::InvalidConfig, "unknown workload '" + std::string(name) + "'");
}

/// A launch every `period` ticks; `work` ticks of compute at full allocation.
struct NonCoopStream {
  std::string name;
  Tick period = 0;
  Tick work = 0;
  int workgroups = 1;
  int units = 1;  // allocation at which `work` is measured
  Tick phase = 0;

  /// Execution time with `granted` workgroups: inverse scaling, rounded up.
  Tick exec_time(int granted) const {
    if (granted < 1) throw Error(ErrorKind::InvalidConfig, "no workgroups granted");
    return (work * units + granted - 1) / granted;
  }
  Tick launch_time(int i) const { return phase + static_cast<Tick>(i) * period; }
  int launches_before(Tick horizon) const {
    if (horizon <= phase) return 0;
    return static_cast<int>((horizon - phase + period - 1) / period);
  }
};

inline Tick ms_to_ticks(double ms, Tick ticks_per_ms) { return static_cast<Tick>(std::llround(ms * static_cast<double>(ticks_per_ms))); }

inline NonCoopStream make_synthetic_noncoop(const WorkloadPreset& p, int units, int workgroups, Tick ticks_per_ms,
                                            Tick phase = 0) {
  if (workgroups < 1 || workgroups > units) throw Error(ErrorKind::InvalidConfig, "non-cooperative workgroups outside [1, units]");
  NonCoopStream s;
  s.name = p.name;
  s.period = ms_to_ticks(p.period_ms, ticks_per_ms);
  s.work = ms_to_ticks(p.duration_ms, ticks_per_ms);
  s.workgroups = workgroups;
  s.units = units;
  s.phase = phase;
  return s;
}

/// Spin iterations a synthetic thread executes for duration t at a given step cost.
inline Tick synthetic_steps(Tick t, Tick step_cost) { return (t + step_cost - 1) / step_cost; }

/// Non-cooperative workgroup count for a fraction name of N.
inline int fraction_groups(std::string_view f, int N) {
  if (f == "one") return 1;
  if (f == "quarter") return std::max(1, N / 4);
  if (f == "half") return std::max(1, N / 2);
  if (f == "allbutone") return std::max(1, N - 1);
  throw Error(ErrorKind::InvalidConfig, "unknown fraction '" + std::string(f) + "'");
}

// ---------------------------------------------------------------- checker demos

struct DemoKernel {
  ProgramPtr program;
  std::vector<Word> memory;
  int groups = 1;
  int wgsize = 1;
  std::pair<int, int> critical{-1, -1};  // [begin, end) pcs of a mutex critical section
};

inline DemoKernel mutex_demo() {
  DemoKernel d;
  d.program = bundled(kernels::mutex);
  d.memory = {0, 0};
  d.groups = 2;
  const auto& code = d.program->code;
  for (int pc = 0; pc < static_cast<int>(code.size()); ++pc) {
    if (code[static_cast<size_t>(pc)].role == BlockRole::WhileBack && d.critical.first < 0) d.critical.first = pc + 1;
    if (code[static_cast<size_t>(pc)].op == Op::AtomicStore) d.critical.second = pc;
  }
  return d;
}

inline DemoKernel barrier_demo() {
  DemoKernel d;
  d.program = bundled(kernels::barrier);
  d.memory.assign(3, 0);
  d.groups = 3;
  return d;
}

inline DemoKernel resize_demo() {
  DemoKernel d;
  d.program = bundled(kernels::resize);
  d.memory.assign(6, 0);
  d.groups = 3;
  return d;
}

}  // namespace coopk
