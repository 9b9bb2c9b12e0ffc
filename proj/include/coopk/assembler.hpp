#pragma once

// Line-oriented kernel assembly. Grammar is documented in docs/kernel_asm.md.

#include <array>
#include <cctype>
#include <charconv>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coopk/program.hpp"

namespace coopk {

namespace detail {

struct Mnemonic {
  std::string_view name;
  Op op;
};

inline constexpr std::array<Mnemonic, 36> kValueOps{{
    {"mov", Op::Mov}, {"add", Op::Add}, {"sub", Op::Sub}, {"mul", Op::Mul},
    {"div", Op::Div}, {"mod", Op::Mod}, {"and", Op::And}, {"or", Op::Or},
    {"xor", Op::Xor}, {"shl", Op::Shl}, {"shr", Op::Shr}, {"min", Op::Min},
    {"max", Op::Max}, {"eq", Op::Eq}, {"ne", Op::Ne}, {"lt", Op::Lt},
    {"le", Op::Le}, {"gt", Op::Gt}, {"ge", Op::Ge}, {"not", Op::Not},
    {"neg", Op::Neg}, {"get_global_id", Op::GlobalId}, {"get_local_id", Op::LocalId},
    {"get_group_id", Op::GroupId}, {"get_local_size", Op::LocalSize},
    {"get_num_groups", Op::NumGroups}, {"get_global_size", Op::GlobalSize},
    {"load_global", Op::LoadGlobal}, {"load_local", Op::LoadLocal},
    {"atomic_cas", Op::AtomicCas}, {"atomic_add", Op::AtomicAdd},
    {"atomic_exch", Op::AtomicExch}, {"atomic_load", Op::AtomicLoad},
    {"query", Op::Query}, {"store_global", Op::StoreGlobal}, {"store_local", Op::StoreLocal},
}};

inline std::string_view mnemonic(Op op) {
  for (const auto& m : kValueOps)
    if (m.op == op) return m.name;
  switch (op) {
    case Op::AtomicStore: return "atomic_store";
    case Op::OfferKill: return "offer_kill";
    case Op::RequestFork: return "request_fork";
    case Op::GlobalBarrier: return "global_barrier";
    case Op::ResizingBarrier: return "resizing_global_barrier";
    case Op::Halt: return "halt";
    case Op::Branch: return "branch";
    case Op::Jump: return "jump";
    default: return "?";
  }
}

inline constexpr std::array<std::pair<std::string_view, Cmp>, 6> kCmps{{
    {"==", Cmp::Eq}, {"!=", Cmp::Ne}, {"<", Cmp::Lt}, {"<=", Cmp::Le}, {">", Cmp::Gt}, {">=", Cmp::Ge},
}};

inline std::string_view cmp_text(Cmp c) {
  for (const auto& [t, v] : kCmps)
    if (v == c) return t;
  return "?";
}

struct Token {
  std::string text;
  int column;
};

inline std::vector<Token> tokenize(std::string_view line) {
  std::vector<Token> out;
  size_t i = 0;
  while (i < line.size()) {
    if (line[i] == '#' || line[i] == ';') break;
    if (std::isspace(static_cast<unsigned char>(line[i]))) {
      ++i;
      continue;
    }
    size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j])) && line[j] != '#' &&
           line[j] != ';')
      ++j;
    out.push_back({std::string(line.substr(i, j - i)), static_cast<int>(i) + 1});
    i = j;
  }
  return out;
}

inline bool is_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  for (char ch : s)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_')) return false;
  return true;
}

inline std::optional<Word> parse_int(std::string_view s) {
  Word v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

class Assembler {
 public:
  Program run(std::string_view text) {
    size_t start = 0;
    int line_no = 0;
    while (start <= text.size()) {
      size_t nl = text.find('\n', start);
      if (nl == std::string_view::npos) nl = text.size();
      ++line_no;
      line_ = line_no;
      parse_line(text.substr(start, nl - start));
      start = nl + 1;
    }
    try {
      return b_.build();
    } catch (const Error& e) {
      throw ParseError(line_no, 1, e.what());
    }
  }

 private:
  [[noreturn]] void fail(int col, const std::string& msg) { throw ParseError(line_, col, msg); }

  Arg arg(const Token& t) {
    if (auto v = parse_int(t.text)) return Arg(static_cast<long long>(*v));
    if (!is_identifier(t.text)) fail(t.column, "bad operand '" + t.text + "'");
    return Arg(t.text);
  }

  int int_of(const Token& t) {
    auto v = parse_int(t.text);
    if (!v) fail(t.column, "expected integer, got '" + t.text + "'");
    return static_cast<int>(*v);
  }

  void expect_count(const std::vector<Token>& toks, size_t n, const Token& at) {
    if (toks.size() != n)
      fail(at.column, "'" + at.text + "' expects " + std::to_string(n - 1) + " operand(s)");
  }

  void condition(const std::vector<Token>& t, bool is_while) {
    Arg a = Arg(0), b = Arg(0);
    Cmp c = Cmp::Ne;
    if (t.size() == 2) {
      a = arg(t[1]);
    } else if (t.size() == 4) {
      a = arg(t[1]);
      bool found = false;
      for (const auto& [txt, v] : kCmps)
        if (t[2].text == txt) {
          c = v;
          found = true;
        }
      if (!found) fail(t[2].column, "unknown comparison '" + t[2].text + "'");
      b = arg(t[3]);
    } else {
      fail(t[0].column, "'" + t[0].text + "' expects 'a' or 'a <cmp> b'");
    }
    if (is_while)
      b_.while_(std::move(a), c, std::move(b));
    else
      b_.if_(std::move(a), c, std::move(b));
  }

  void parse_line(std::string_view raw) {
    auto t = tokenize(raw);
    if (t.empty()) return;
    b_.at_line(line_);
    const std::string& head = t[0].text;
    try {
      if (head[0] == '.') {
        directive(t);
        seen_content_ = true;
        return;
      }
      seen_content_ = true;
      if (t.size() >= 2 && t[1].text == ":=") return assignment(t);
      if (head == "if" || head == "while") return condition(t, head == "while");
      if (head == "else") { expect_count(t, 1, t[0]); b_.else_(); return; }
      if (head == "end") { expect_count(t, 1, t[0]); b_.end(); return; }
      if (head == "offer_kill") { expect_count(t, 1, t[0]); b_.offer_kill(); return; }
      if (head == "request_fork") { expect_count(t, 1, t[0]); b_.request_fork(); return; }
      if (head == "resizing_global_barrier") { expect_count(t, 1, t[0]); b_.resizing_barrier(); return; }
      if (head == "halt") { expect_count(t, 1, t[0]); b_.halt(); return; }
      if (head == "global_barrier") {
        if (t.size() == 1) { b_.global_barrier(); return; }
        expect_count(t, 2, t[0]);
        if (t[1].text.size() < 2 || t[1].text[0] != '@') fail(t[1].column, "expected barrier label '@N'");
        Token lbl{t[1].text.substr(1), t[1].column + 1};
        b_.global_barrier(int_of(lbl));
        return;
      }
      if (head == "store_global" || head == "store_local" || head == "atomic_store") {
        expect_count(t, 3, t[0]);
        Arg a = arg(t[1]), v = arg(t[2]);
        if (head == "store_global") b_.store_global(a, v);
        else if (head == "store_local") b_.store_local(a, v);
        else b_.atomic_store(a, v);
        return;
      }
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      fail(t[0].column, e.what());
    }
    fail(t[0].column, "unknown mnemonic '" + head + "'");
  }

  void assignment(const std::vector<Token>& t) {
    if (!is_identifier(t[0].text)) fail(t[0].column, "bad destination '" + t[0].text + "'");
    if (t.size() < 3) fail(t[1].column, "missing operation after ':='");
    const Token& mn = t[2];
    const Mnemonic* found = nullptr;
    for (const auto& m : kValueOps)
      if (m.name == mn.text) found = &m;
    if (!found || !writes_dst(found->op)) fail(mn.column, "unknown mnemonic '" + mn.text + "'");
    if (found->op == Op::Query) {
      expect_count(t, 3, mn);
      b_.query(t[0].text);
      return;
    }
    size_t n = static_cast<size_t>(arity(found->op));
    if (t.size() != n + 3)
      fail(mn.column, "'" + mn.text + "' expects " + std::to_string(n) + " operand(s)");
    std::vector<Arg> args;
    for (size_t i = 0; i < n; ++i) args.push_back(arg(t[3 + i]));
    b_.op(t[0].text, found->op, std::move(args));
  }

  void directive(const std::vector<Token>& t) {
    const std::string& d = t[0].text;
    if (d == ".kernel") {
      expect_count(t, 2, t[0]);
      if (seen_content_) fail(t[0].column, ".kernel must be the first directive");
      b_ = ProgramBuilder(t[1].text);
    } else if (d == ".param") {
      if (t.size() < 2) fail(t[0].column, ".param expects names");
      for (size_t i = 1; i < t.size(); ++i) {
        if (!is_identifier(t[i].text)) fail(t[i].column, "bad parameter name");
        b_.param(t[i].text);
      }
    } else if (d == ".transmit") {
      if (t.size() < 2) fail(t[0].column, ".transmit expects names");
      for (size_t i = 1; i < t.size(); ++i) {
        if (!is_identifier(t[i].text)) fail(t[i].column, "bad variable name");
        b_.transmit(t[i].text);
      }
    } else if (d == ".groups") {
      expect_count(t, 2, t[0]);
      b_.groups(int_of(t[1]));
    } else if (d == ".wgsize") {
      expect_count(t, 2, t[0]);
      b_.wgsize(int_of(t[1]));
    } else if (d == ".local") {
      expect_count(t, 2, t[0]);
      b_.local_size(int_of(t[1]));
    } else {
      fail(t[0].column, "unknown directive '" + d + "'");
    }
  }

  ProgramBuilder b_;
  bool seen_content_ = false;
  int line_ = 0;
};

inline std::string operand_text(const Program& p, const Operand& o) {
  switch (o.kind) {
    case Operand::Kind::Var: return p.vars[o.value];
    case Operand::Kind::Param: return p.params[o.value];
    case Operand::Kind::Imm: return std::to_string(o.value);
    default: return "";
  }
}

}  // namespace detail

/// Parse kernel assembly text into a Program. Throws ParseError with line/column.
inline Program assemble(std::string_view text) { return detail::Assembler{}.run(text); }

/// Render a Program back to assembly; assemble(print(p)) reproduces p.
inline std::string print(const Program& p) {
  using detail::operand_text;
  std::ostringstream os;
  os << ".kernel " << p.name << "\n";
  if (!p.params.empty()) {
    os << ".param";
    for (const auto& n : p.params) os << ' ' << n;
    os << "\n";
  }
  if (!p.transmit.empty()) {
    os << ".transmit";
    for (int s : p.transmit) os << ' ' << p.vars[s];
    os << "\n";
  }
  os << ".groups " << p.groups << "\n.wgsize " << p.wgsize << "\n";
  if (p.local_size > 0) os << ".local " << p.local_size << "\n";

  // Closing positions of if-blocks without an explicit terminator instruction.
  std::vector<int> closes_at(p.code.size() + 1, 0);
  for (size_t i = 0; i < p.code.size(); ++i) {
    const auto& ins = p.code[i];
    if (ins.role != BlockRole::IfHead) continue;
    int t = ins.target;
    if (t > 0 && p.code[t - 1].role == BlockRole::ElseJump && p.code[t - 1].target >= t)
      closes_at[p.code[t - 1].target] += 1;
    else
      closes_at[t] += 1;
  }

  int depth = 0;
  auto indent = [&](int d) { return std::string(static_cast<size_t>(2 * d), ' '); };
  for (size_t i = 0; i <= p.code.size(); ++i) {
    for (int k = 0; k < closes_at[i]; ++k) os << indent(--depth) << "end\n";
    if (i == p.code.size()) break;
    const auto& ins = p.code[i];
    switch (ins.op) {
      case Op::Branch:
        os << indent(depth) << (ins.role == BlockRole::WhileHead ? "while " : "if ")
           << operand_text(p, ins.a) << ' ' << detail::cmp_text(ins.cmp) << ' '
           << operand_text(p, ins.b) << "\n";
        ++depth;
        break;
      case Op::Jump:
        if (ins.role == BlockRole::ElseJump) {
          os << indent(depth - 1) << "else\n";
        } else {
          os << indent(--depth) << "end\n";
        }
        break;
      case Op::GlobalBarrier:
        os << indent(depth) << "global_barrier @" << ins.barrier_label << "\n";
        break;
      case Op::StoreGlobal:
      case Op::StoreLocal:
      case Op::AtomicStore:
        os << indent(depth) << detail::mnemonic(ins.op) << ' ' << operand_text(p, ins.a) << ' '
           << operand_text(p, ins.b) << "\n";
        break;
      case Op::OfferKill:
      case Op::RequestFork:
      case Op::ResizingBarrier:
      case Op::Halt:
        os << indent(depth) << detail::mnemonic(ins.op) << "\n";
        break;
      default: {
        os << indent(depth) << p.vars[ins.dst] << " := " << detail::mnemonic(ins.op);
        int n = arity(ins.op);
        const Operand* ops[3] = {&ins.a, &ins.b, &ins.c};
        for (int k = 0; k < n; ++k) os << ' ' << operand_text(p, *ops[k]);
        os << "\n";
      }
    }
  }
  return os.str();
}

}  // namespace coopk
