#include <gtest/gtest.h>

#include <climits>
#include <random>

#include "coopk/assembler.hpp"
#include "coopk/semantics.hpp"
#include "coopk/workloads.hpp"

using namespace coopk;

namespace {

KernelState launch(std::string_view text, int N, int d, int M0, std::vector<Word> memory = {}, std::vector<Word> args = {}) {
  LaunchSpec spec;
  spec.program = std::make_shared<const Program>(assemble(text));
  spec.groups = N;
  spec.wgsize = d;
  spec.memory = std::move(memory);
  spec.args = std::move(args);
  return make_initial_state(spec, M0);
}

KernelState launch_desugared(std::string_view text, int N, int d, int M0, std::vector<Word> memory = {}) {
  LaunchSpec spec;
  spec.program = std::make_shared<const Program>(desugar_resizing_barrier(assemble(text)));
  spec.groups = N;
  spec.wgsize = d;
  spec.memory = std::move(memory);
  return make_initial_state(spec, M0);
}

Word var(const KernelState& s, int wg, int tid, const std::string& name) {
  auto slot = s.prog().find_var(name);
  EXPECT_TRUE(slot.has_value()) << name;
  const auto& v = s.group(wg).threads[static_cast<size_t>(tid)].env.values[static_cast<size_t>(*slot)];
  EXPECT_TRUE(v.has_value()) << name;
  return v.value_or(-999);
}

/// Drives a state to quiescence: thread steps first, then kills while the
/// budget lasts, then forks of k, then kill no-ops, then barriers.
KernelState drive(KernelState s, int kills, int k) {
  while (true) {
    auto ts = enabled_transitions(s, TransitionOptions{s.N});
    if (ts.empty()) return s;
    auto pick = [&](auto pred) -> const Transition* {
      for (const auto& t : ts)
        if (pred(t)) return &t;
      return nullptr;
    };
    const Transition* t = pick([](const Transition& x) { return x.rule == Rule::ThreadStep; });
    if (!t && kills > 0) t = pick([](const Transition& x) { return x.rule == Rule::Kill; });
    if (!t) t = pick([&](const Transition& x) { return x.rule == Rule::Fork && x.choice == std::min<Word>(k, s.N - s.M); });
    if (!t) t = pick([](const Transition& x) { return x.rule == Rule::KillNoOp; });
    if (!t) t = pick([](const Transition& x) { return x.rule == Rule::Barrier; });
    if (!t) return s;
    if (t->rule == Rule::Kill) --kills;
    if (t->rule == Rule::Fork) k -= static_cast<int>(t->choice);
    apply_transition_inplace(s, *t);
  }
}

}  // namespace

// ---------------------------------------------------------------- Thread-Step

TEST(ThreadStep, Arithmetic) {
  auto s = launch("x := add 1 2\ny := mov x\n", 1, 1, 1);
  auto t = step_thread(s, 0, 0);
  EXPECT_EQ(var(t, 0, 0, "x"), 3);
  EXPECT_EQ(t.group(0).threads[0].pc, 1);
}

TEST(ThreadStep, NumGroupsReturnsM) {
  auto s = launch("n := get_num_groups\n", 4, 1, 2);
  EXPECT_EQ(var(step_thread(s, 1, 0), 1, 0, "n"), 2);
}

TEST(ThreadStep, IdIntrinsics) {
  auto s = launch("g := get_global_id\nl := get_local_id\nw := get_group_id\nz := get_local_size\nq := get_global_size\n", 3, 2, 3);
  for (int i = 0; i < 5; ++i) s = step_thread(s, 2, 1);
  EXPECT_EQ(var(s, 2, 1, "g"), 5);
  EXPECT_EQ(var(s, 2, 1, "l"), 1);
  EXPECT_EQ(var(s, 2, 1, "w"), 2);
  EXPECT_EQ(var(s, 2, 1, "z"), 2);
  EXPECT_EQ(var(s, 2, 1, "q"), 6);
  EXPECT_TRUE(s.group(2).threads[1].terminated());
}

TEST(ThreadStep, OnlyThatThreadChanges) {
  auto s = launch("x := mov 7\nstore_global 0 x\n", 2, 2, 2, {0});
  auto t = step_thread(s, 1, 0);
  EXPECT_EQ(t.group(0), s.group(0));
  EXPECT_EQ(t.group(1).threads[1], s.group(1).threads[1]);
  EXPECT_EQ(t.shared, s.shared);
}

TEST(ThreadStep, WrapsAt64Bits) {
  auto s = launch("x := add 9223372036854775807 1\ny := mul x 2\nz := neg x\n", 1, 1, 1);
  for (int i = 0; i < 3; ++i) s = step_thread(s, 0, 0);
  EXPECT_EQ(var(s, 0, 0, "x"), LLONG_MIN);
  EXPECT_EQ(var(s, 0, 0, "y"), 0);
  EXPECT_EQ(var(s, 0, 0, "z"), LLONG_MIN);
}

TEST(ThreadStep, RuntimeErrors) {
  EXPECT_THROW(
      {
        try {
          step_thread(launch("x := load_global 3\n", 1, 1, 1, {0}), 0, 0);
        } catch (const Error& e) {
          EXPECT_EQ(e.kind(), ErrorKind::OutOfBoundsAccess);
          throw;
        }
      },
      Error);
  try {
    step_thread(launch("x := div 1 0\n", 1, 1, 1), 0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DivisionByZero);
  }
  try {
    step_thread(launch("x := add y 1\ny := mov 0\n", 1, 1, 1), 0, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UninitialisedRead);
  }
}

TEST(ThreadStep, PrimitivesNeedTheirRule) {
  auto s = launch("offer_kill\n", 2, 1, 2);
  EXPECT_THROW(step_thread(s, 0, 0), Error);
}

TEST(ThreadStep, ForkedThreadReadingUnwrittenVariable) {
  auto s = launch(".transmit t\nt := mov 1\nx := mov 2\nrequest_fork\ny := add x t\n", 2, 1, 1);
  s = step_thread(step_thread(s, 0, 0), 0, 0);
  s = apply_request_fork(s, 0, 1);
  ASSERT_EQ(s.M, 2);
  try {
    step_thread(s, 1, 0);
    FAIL() << "forked thread read x";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UninitialisedRead);
  }
  // The forking workgroup itself still has x.
  EXPECT_EQ(var(step_thread(s, 0, 0), 0, 0, "y"), 3);
}

// ---------------------------------------------------------------- Kill

TEST(OfferKill, TopWorkgroupKilled) {
  auto s = launch("offer_kill\n", 4, 1, 4);
  auto t = apply_offer_kill(s, 3, true);
  EXPECT_EQ(t.M, 3);
  EXPECT_FALSE(t.active(3));
  EXPECT_FALSE(t.invariant_violation());
}

TEST(OfferKill, NonTopIsNoOp) {
  auto s = launch("offer_kill\n", 4, 1, 4);
  auto t = apply_offer_kill(s, 1, true);
  EXPECT_EQ(t.M, 4);
  EXPECT_TRUE(t.group(1).threads[0].terminated());
}

TEST(OfferKill, MasterNeverKilled) {
  auto s = launch("offer_kill\n", 4, 1, 1);
  auto t = apply_offer_kill(s, 0, true);
  EXPECT_EQ(t.M, 1);
  EXPECT_TRUE(t.active(0));
}

TEST(OfferKill, RejectIsNoOp) {
  auto s = launch("offer_kill\nx := mov 1\n", 3, 2, 3);
  auto t = apply_offer_kill(s, 2, false);
  EXPECT_EQ(t.M, 3);
  EXPECT_EQ(t.group(2).threads[0].pc, 1);
  EXPECT_EQ(t.group(2).threads[1].pc, 1);
}

TEST(OfferKill, NonUniformReach) {
  auto s = launch("x := mov 1\noffer_kill\n", 2, 2, 2);
  s = step_thread(s, 1, 0);
  try {
    apply_offer_kill(s, 1, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonUniformReach);
  }
}

// ---------------------------------------------------------------- Fork

TEST(RequestFork, TransmitInitialisesNewThreads) {
  auto s = launch(".transmit level\nlevel := mov 5\nother := mov 9\nrequest_fork\n", 4, 2, 2);
  for (int tid = 0; tid < 2; ++tid) s = step_thread(step_thread(s, 0, tid), 0, tid);
  auto t = apply_request_fork(s, 0, 2);
  EXPECT_EQ(t.M, 4);
  for (int wg = 2; wg < 4; ++wg)
    for (const auto& th : t.group(wg).threads) {
      EXPECT_EQ(th.env.values[static_cast<size_t>(*t.prog().find_var("level"))], 5);
      EXPECT_FALSE(th.env.values[static_cast<size_t>(*t.prog().find_var("other"))].has_value());
      EXPECT_TRUE(th.terminated());  // resumed just after request_fork, the last statement
    }
}

TEST(RequestFork, ZeroIsPcAdvanceOnly) {
  auto s = launch("request_fork\nx := mov 1\n", 4, 1, 2);
  auto t = apply_request_fork(s, 1, 0);
  EXPECT_EQ(t.M, 2);
  EXPECT_EQ(t.group(0), s.group(0));
  EXPECT_EQ(t.group(1).threads[0].pc, 1);
  EXPECT_EQ(t.group(1).threads[0].env, s.group(1).threads[0].env);
}

TEST(RequestFork, BoundExceeded) {
  auto s = launch("request_fork\n", 3, 1, 3);
  try {
    apply_request_fork(s, 0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ForkBoundExceeded);
  }
}

TEST(RequestFork, ParametersReadableByNewThreads) {
  auto s = launch(".param p\nrequest_fork\nx := add p 1\n", 2, 1, 1, {}, {41});
  s = apply_request_fork(s, 0, 1);
  EXPECT_EQ(var(step_thread(s, 1, 0), 1, 0, "x"), 42);
}

TEST(RequestFork, LocalMemoryOfNewGroupIsZero) {
  auto s = launch(".local 2\nstore_local 0 7\noffer_kill\nrequest_fork\n", 2, 1, 2);
  s = step_thread(s, 1, 0);
  EXPECT_EQ(s.shared.local[1][0], 7);
  s = apply_offer_kill(s, 1, true);
  s = step_thread(s, 0, 0);
  s = apply_offer_kill(s, 0, false);
  s = apply_request_fork(s, 0, 1);
  EXPECT_EQ(s.shared.local[1], (std::vector<Word>{0, 0}));
}

// ---------------------------------------------------------------- Barrier

TEST(GlobalBarrier, AllThreadsAdvance) {
  auto s = launch("global_barrier\nx := mov 1\n", 2, 2, 2);
  auto t = apply_global_barrier(s);
  for (int wg = 0; wg < 2; ++wg)
    for (const auto& th : t.group(wg).threads) EXPECT_EQ(th.pc, 1);
  EXPECT_EQ(t.M, 2);
  EXPECT_EQ(t.shared, s.shared);
}

TEST(GlobalBarrier, Composition) {
  auto s = launch("global_barrier\nglobal_barrier\n", 2, 2, 2);
  auto twice = apply_global_barrier(apply_global_barrier(s));
  EXPECT_TRUE(twice.all_terminated());
  EXPECT_EQ(encode(twice), encode(drive(s, 0, 0)));
}

TEST(GlobalBarrier, Divergence) {
  auto s = launch("g := get_group_id\nif g == 0\n  global_barrier\nelse\n  global_barrier\nend\n", 2, 1, 2);
  s = step_thread(step_thread(s, 0, 0), 0, 0);
  s = step_thread(step_thread(s, 1, 0), 1, 0);
  ASSERT_NE(s.group(0).threads[0].pc, s.group(1).threads[0].pc);
  try {
    apply_global_barrier(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BarrierDivergence);
  }
  EXPECT_TRUE(enabled_transitions(s).empty());
}

TEST(GlobalBarrier, EarlyTerminationLeavesNoTransition) {
  auto s = launch("g := get_group_id\nif g == 0\n  global_barrier\nend\n", 2, 1, 2);
  auto t = drive(s, 0, 0);
  EXPECT_FALSE(t.all_terminated());
  EXPECT_TRUE(enabled_transitions(t).empty());
}

// ---------------------------------------------------------------- desugaring

constexpr std::string_view kResizeOnce =
    ".transmit t\n"
    "t := mov 5\n"
    "resizing_global_barrier\n"
    "n := get_num_groups\n"
    "g := get_group_id\n"
    "store_global g n\n";

constexpr std::string_view kPlainOnce =
    ".transmit t\n"
    "t := mov 5\n"
    "global_barrier\n"
    "n := get_num_groups\n"
    "g := get_group_id\n"
    "store_global g n\n";

TEST(Desugar, ShapeOfRewrite) {
  auto p = desugar_resizing_barrier(assemble(kResizeOnce));
  std::vector<Op> ops;
  for (const auto& i : p.code) ops.push_back(i.op);
  std::vector<Op> want{Op::Mov,           Op::GroupId,       Op::Branch,        Op::GlobalBarrier, Op::RequestFork,
                       Op::GlobalBarrier, Op::GlobalBarrier, Op::Jump,          Op::GlobalBarrier, Op::GlobalBarrier,
                       Op::OfferKill,     Op::GlobalBarrier, Op::NumGroups,     Op::GroupId,       Op::StoreGlobal};
  EXPECT_EQ(ops, want);
  EXPECT_EQ(p.code[3].barrier_label, p.code[8].barrier_label);
  EXPECT_EQ(p.code[5].barrier_label, p.code[9].barrier_label);
  EXPECT_EQ(p.code[6].barrier_label, p.code[11].barrier_label);
  EXPECT_NE(p.code[3].barrier_label, p.code[5].barrier_label);
}

TEST(Desugar, NoResizeEqualsPlainBarrier) {
  auto a = drive(launch_desugared(kResizeOnce, 3, 2, 3, {0, 0, 0}), 0, 0);
  auto b = drive(launch(kPlainOnce, 3, 2, 3, {0, 0, 0}), 0, 0);
  EXPECT_TRUE(a.all_terminated());
  EXPECT_EQ(a.M, b.M);
  EXPECT_EQ(a.shared.global, b.shared.global);
  EXPECT_EQ(a.shared.global, (std::vector<Word>{3, 3, 3}));
}

TEST(Desugar, ShrinkThreeToOne) {
  auto s = drive(launch_desugared(kResizeOnce, 3, 1, 3, {0, 0, 0}), 2, 0);
  EXPECT_TRUE(s.all_terminated());
  EXPECT_EQ(s.M, 1);
  EXPECT_EQ(s.shared.global, (std::vector<Word>{1, 0, 0}));
}

TEST(Desugar, GrowTwoToFourTransmitsFromMaster) {
  auto s = launch_desugared(".transmit t\ng := get_group_id\nt := add g 5\nresizing_global_barrier\nh := get_group_id\nstore_global h t\n",
                            4, 1, 2, {0, 0, 0, 0});
  s = drive(s, 0, 2);
  EXPECT_EQ(s.M, 4);
  // workgroup 1 keeps its own t; forked 2 and 3 carry workgroup 0's value.
  EXPECT_EQ(s.shared.global, (std::vector<Word>{5, 6, 5, 5}));
}

// ---------------------------------------------------------------- enabled transitions

TEST(Enabled, TerminatedHasNone) {
  auto s = drive(launch("x := mov 1\n", 2, 2, 2), 0, 0);
  EXPECT_TRUE(s.all_terminated());
  EXPECT_TRUE(enabled_transitions(s).empty());
}

TEST(Enabled, SingleComputeThread) {
  auto s = launch("x := mov 1\n", 1, 1, 1);
  auto ts = enabled_transitions(s);
  ASSERT_EQ(ts.size(), 1u);
  EXPECT_EQ(ts[0], (Transition{Rule::ThreadStep, 0, 0, 0}));
}

TEST(Enabled, KillAndNoOpForTop) {
  auto s = launch("offer_kill\n", 3, 1, 3);
  auto ts = enabled_transitions(s);
  auto has = [&](Transition t) { return std::find(ts.begin(), ts.end(), t) != ts.end(); };
  EXPECT_TRUE(has({Rule::Kill, 2, -1, 0}));
  EXPECT_TRUE(has({Rule::KillNoOp, 2, -1, 0}));
  EXPECT_FALSE(has({Rule::Kill, 1, -1, 0}));
  EXPECT_TRUE(has({Rule::KillNoOp, 1, -1, 0}));
  EXPECT_FALSE(has({Rule::Kill, 0, -1, 0}));
}

TEST(Enabled, ForkChoicesUpToCap) {
  auto s = launch("request_fork\n", 5, 1, 1);
  auto ts = enabled_transitions(s, TransitionOptions{2});
  std::vector<Word> ks;
  for (const auto& t : ts)
    if (t.rule == Rule::Fork) ks.push_back(t.choice);
  EXPECT_EQ(ks, (std::vector<Word>{0, 1, 2}));
  auto all = enabled_transitions(s, TransitionOptions{10});
  EXPECT_EQ(std::count_if(all.begin(), all.end(), [](const Transition& t) { return t.rule == Rule::Fork; }), 5);
}

TEST(Enabled, OccupancyBoundGatesNonResident) {
  LaunchSpec spec;
  spec.program = std::make_shared<const Program>(assemble("x := mov 1\nglobal_barrier\n"));
  spec.groups = 3;
  auto s = make_initial_state(spec, 3, 2);
  s = step_thread(s, 0, 0);
  s = step_thread(s, 1, 0);
  // Units are taken by workgroups 0 and 1, which now wait at the barrier forever.
  EXPECT_TRUE(enabled_transitions(s).empty());
}

// ---------------------------------------------------------------- properties

namespace {

struct Walk {
  std::string name;
  std::string_view text;
  int N, d;
  std::vector<Word> memory;
};

std::vector<Walk> walk_programs() {
  return {
      {"resize", kernels::resize, 3, 1, std::vector<Word>(6, 0)},
      {"resize_d2", kernels::resize, 3, 2, std::vector<Word>(6, 0)},
      {"resize_n4", kernels::resize, 4, 1, std::vector<Word>(7, 0)},
      {"once", kResizeOnce, 4, 2, std::vector<Word>(4, 0)},
      {"fork_kill", ".transmit a\na := mov 3\nrequest_fork\noffer_kill\nrequest_fork\nb := add a 1\noffer_kill\n", 4, 2, {}},
  };
}

}  // namespace

TEST(SemanticsProperty, RandomWalksKeepInvariants) {
  std::mt19937_64 rng(7);
  int walks = 0;
  for (const auto& w : walk_programs()) {
    LaunchSpec spec;
    spec.program = std::make_shared<const Program>(desugar_resizing_barrier(assemble(w.text)));
    spec.groups = w.N;
    spec.wgsize = w.d;
    spec.memory = w.memory;
    for (int trial = 0; trial < 200; ++trial, ++walks) {
      int m0 = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(w.N));
      auto s = make_initial_state(spec, m0);
      for (int step = 0; step < 400; ++step) {
        auto ts = enabled_transitions(s, TransitionOptions{w.N});
        if (ts.empty()) break;
        auto t = ts[rng() % ts.size()];
        auto pre = s;
        auto post = apply_transition(s, t);
        // determinism
        ASSERT_EQ(encode(post), encode(apply_transition(pre, t))) << w.name;
        // bounds and contiguity
        ASSERT_FALSE(post.invariant_violation()) << w.name << ": " << *post.invariant_violation();
        // kill order
        if (post.M < pre.M) {
          ASSERT_EQ(t.rule, Rule::Kill);
          ASSERT_EQ(t.wg, pre.M - 1);
          ASSERT_GT(pre.M, 1);
          for (int i = 0; i < post.M; ++i) ASSERT_EQ(post.group(i), pre.group(i));
        }
        if (t.rule == Rule::Fork) {
          // framing: only the forker's pcs move
          for (int i = 0; i < pre.M; ++i)
            for (int k = 0; k < w.d; ++k) {
              const auto& a = pre.group(i).threads[static_cast<size_t>(k)];
              const auto& b = post.group(i).threads[static_cast<size_t>(k)];
              ASSERT_EQ(a.env, b.env);
              if (i != t.wg) {
                ASSERT_EQ(a.pc, b.pc);
              }
            }
          // transmit completeness: defined variables are exactly the transmit set
          const auto& donor = pre.group(t.wg).threads[0].env;
          for (int i = pre.M; i < post.M; ++i)
            for (const auto& th : post.group(i).threads)
              for (int v = 0; v < static_cast<int>(th.env.values.size()); ++v) {
                if (post.prog().is_transmit(v))
                  ASSERT_EQ(th.env.values[static_cast<size_t>(v)], donor.values[static_cast<size_t>(v)]);
                else
                  ASSERT_FALSE(th.env.values[static_cast<size_t>(v)].has_value());
              }
        }
        s = std::move(post);
      }
    }
  }
  EXPECT_EQ(walks, 1000);
}

TEST(SemanticsProperty, KillOnlyEnabledForTop) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    int N = 2 + static_cast<int>(rng() % 5);
    int M = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(N));
    auto s = launch("offer_kill\n", N, 1 + static_cast<int>(rng() % 3), M);
    for (const auto& t : enabled_transitions(s))
      if (t.rule == Rule::Kill) {
        EXPECT_EQ(t.wg, M - 1);
        EXPECT_GT(M, 1);
      }
    for (int wg = 0; wg < M; ++wg) {
      auto t = apply_offer_kill(s, wg, true);
      EXPECT_EQ(t.M, (wg == M - 1 && M > 1) ? M - 1 : M);
    }
  }
}
