#pragma once

// Text graph files (docs/formats.md) and input spec strings such as
// "chain:1000", "random:1000:7", "tree:6:3" or a path to a graph file.

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "coopk/errors.hpp"
#include "coopk/workloads.hpp"

namespace coopk {

inline constexpr std::string_view kGraphMagic = "coopk-graph";

inline std::string write_graph(const Graph& g) {
  std::ostringstream os;
  os << kGraphMagic << " 1\n" << g.n << " " << g.edge_count() << " " << g.source << "\n";
  for (int u = 0; u < g.n; ++u)
    for (Word i = g.offsets[static_cast<size_t>(u)]; i < g.offsets[static_cast<size_t>(u) + 1]; ++i)
      if (g.edges[static_cast<size_t>(i)] > u) os << u << " " << g.edges[static_cast<size_t>(i)] << "\n";
  return os.str();
}

inline Graph read_graph(std::string_view text, std::string name = "file") {
  std::istringstream is{std::string(text)};
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != kGraphMagic || version != 1)
    throw Error(ErrorKind::Parse, "graph file must start with 'coopk-graph 1'");
  long long n = 0, m = 0, source = 0;
  if (!(is >> n >> m >> source) || n < 1 || m < 0) throw Error(ErrorKind::Parse, "bad graph header");
  std::vector<std::pair<int, int>> e;
  for (long long i = 0; i < m; ++i) {
    long long u = 0, v = 0;
    if (!(is >> u >> v)) throw Error(ErrorKind::Parse, "graph file ends after " + std::to_string(i) + " edges");
    e.emplace_back(static_cast<int>(u), static_cast<int>(v));
  }
  return graph_from_edges(std::move(name), static_cast<int>(n), std::move(e), static_cast<int>(source));
}

inline Graph load_graph_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorKind::InvalidConfig, "cannot open graph file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return read_graph(ss.str(), path);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t p = s.find(sep, start);
    out.emplace_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

inline long long parse_number(const std::string& s, const std::string& what) {
  try {
    size_t used = 0;
    long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidConfig, "bad " + what + " '" + s + "'");
  }
}

/// "kind:size[:seed]" or a graph file path.
inline Graph parse_graph_spec(const std::string& spec) {
  auto parts = split(spec, ':');
  static const std::vector<std::string> kinds{"chain", "star", "grid", "random"};
  if (parts.size() >= 2 && std::find(kinds.begin(), kinds.end(), parts[0]) != kinds.end()) {
    if (parts.size() > 3) throw Error(ErrorKind::InvalidConfig, "bad graph spec '" + spec + "'");
    auto size = parse_number(parts[1], "graph size");
    std::uint64_t seed = parts.size() == 3 ? static_cast<std::uint64_t>(parse_number(parts[2], "graph seed")) : 0;
    if (size < 1 || size > 1000000) throw Error(ErrorKind::InvalidConfig, "graph size outside [1, 1000000]");
    return generate_graph(graph_kind_from_string(parts[0]), static_cast<int>(size), seed);
  }
  return load_graph_file(spec);
}

struct TreeSpec {
  int depth = 0;
  int branching = 1;
};

/// "tree:depth:branching"
inline TreeSpec parse_tree_spec(const std::string& spec) {
  auto parts = split(spec, ':');
  if (parts.size() != 3 || parts[0] != "tree") throw Error(ErrorKind::InvalidConfig, "expected tree:DEPTH:BRANCHING, got '" + spec + "'");
  TreeSpec t{static_cast<int>(parse_number(parts[1], "tree depth")), static_cast<int>(parse_number(parts[2], "branching"))};
  if (t.depth < 0 || t.branching < 1) throw Error(ErrorKind::InvalidConfig, "bad tree spec '" + spec + "'");
  return t;
}

}  // namespace coopk
