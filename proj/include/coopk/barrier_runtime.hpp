#pragma once

// Master/slave global barrier and the two resizing-barrier protocols.
//
// Workgroup 0 is the master. Arrival flags carry a generation number so a
// flag left from a previous episode never counts toward the current one.
//
// Naive:  slaves offer_kill on entry; the master waits for the remaining
//         slaves, calls request_fork (new workgroups join as slaves), releases.
// Query:  as naive, then the master reads W from the scheduler in the same
//         channel access as the fork, and releases broadcasting W. The top W
//         slots leave the kernel at release and spin on offer_kill until the
//         scheduler claims their compute units. W is frozen for the episode.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "coopk/errors.hpp"
#include "coopk/scheduler.hpp"
#include "coopk/semantics.hpp"

namespace coopk {

enum class BarrierKind { Plain, Naive, Query };

inline std::string_view to_string(BarrierKind k) {
  switch (k) {
    case BarrierKind::Plain: return "plain";
    case BarrierKind::Naive: return "naive";
    case BarrierKind::Query: return "query";
  }
  return "?";
}

inline BarrierKind barrier_kind_from_string(std::string_view s) {
  if (s == "plain") return BarrierKind::Plain;
  if (s == "naive") return BarrierKind::Naive;
  if (s == "query") return BarrierKind::Query;
  throw Error(ErrorKind::InvalidConfig, "unknown barrier '" + std::string(s) + "'");
}

struct BarrierCosts {
  Tick primitive = 4;  // one scheduler-channel access
  Tick barrier = 16;   // master release broadcast
  Tick spin() const { return std::max<Tick>(primitive, 1); }
};

struct BarrierEpisode {
  int index = 0;
  BarrierKind kind = BarrierKind::Plain;
  int m_before = 0;
  int m_after = 0;
  int forks = 0;
  int kills = 0;
  int query = 0;  // W
  Tick start = 0;
  Tick decision = 0;
  Tick release = 0;
  Tick end = 0;
};

/// Services the runtime needs from its host (simulator or offline driver).
class BarrierPort {
 public:
  virtual ~BarrierPort() = default;
  virtual int active_groups() const = 0;
  /// Offer of the eligible slot; true when the scheduler took its unit at `at`.
  virtual bool offer_kill(int slot, Tick at) = 0;
  /// Removes the top `count` slots from the kernel state. Returns the units
  /// they still hold, highest slot first.
  virtual std::vector<int> remove_top(int count) = 0;
  /// request_fork on behalf of the master; returns k.
  virtual int fork(Tick at) = 0;
  virtual int query(Tick at) = 0;
  /// Resumes `slot` at `at`; `advance` moves it past the barrier statement.
  virtual void release(int slot, Tick at, bool advance) = 0;
  /// Claim attempt by a spinning, already-retired unit.
  virtual bool surrender(int unit, Tick at) = 0;
  virtual void schedule_spin(Tick at) = 0;
};

class BarrierRuntime {
 public:
  BarrierRuntime(BarrierKind kind, BarrierCosts costs, int slots)
      : kind_(kind), costs_(costs), arrived_gen_(static_cast<size_t>(slots), 0), arrived_at_(static_cast<size_t>(slots), 0) {}

  BarrierKind kind() const { return kind_; }
  bool open() const { return open_; }
  int key() const { return key_; }
  bool spinning() const { return !zombies_.empty(); }
  const std::vector<int>& zombies() const { return zombies_; }
  const std::vector<BarrierEpisode>& episodes() const { return episodes_; }
  std::uint64_t generation() const { return gen_; }

  /// Workgroup `slot` reaches the barrier identified by `key` at `now`.
  void arrive(BarrierPort& port, int slot, Tick now, int key) {
    if (!open_) {
      open_ = true;
      key_ = key;
      leaving_ = 0;
      cur_ = BarrierEpisode{};
      cur_.index = static_cast<int>(episodes_.size());
      cur_.kind = kind_;
      cur_.m_before = port.active_groups();
      cur_.start = now;
    } else if (key != key_) {
      throw Error(ErrorKind::BarrierDivergence, "workgroup " + std::to_string(slot) + " reached a different barrier");
    }
    Tick t = now;
    if (kind_ != BarrierKind::Plain && slot != 0) {
      t = now + costs_.primitive;
      int m_eff = port.active_groups() - leaving_;
      if (slot == m_eff - 1 && m_eff > 1 && port.offer_kill(slot, t)) {
        ++leaving_;
        ++cur_.kills;
      }
    }
    arrived_gen_[static_cast<size_t>(slot)] = gen_;
    arrived_at_[static_cast<size_t>(slot)] = t;
    maybe_complete(port);
  }

  /// One spin round: every retired unit, highest slot first, offers itself.
  void spin(BarrierPort& port, Tick now) {
    auto& ep = episodes_[static_cast<size_t>(spin_episode_)];
    std::vector<int> left;
    for (int u : zombies_) {
      if (port.surrender(u, now)) {
        ++ep.kills;
      } else {
        left.push_back(u);
      }
    }
    bool progress = left.size() < zombies_.size();
    zombies_ = std::move(left);
    if (zombies_.empty()) {
      ep.end = now;
      return;
    }
    if (!progress && port.query(now) == 0)
      throw Error(ErrorKind::Deadlock, "scheduler never claims " + std::to_string(zombies_.size()) +
                                           " workgroups promised by query");
    port.schedule_spin(now + costs_.spin());
  }

 private:
  void maybe_complete(BarrierPort& port) {
    int m = port.active_groups();
    Tick T = 0;
    for (int s = 0; s < m; ++s) {
      if (arrived_gen_[static_cast<size_t>(s)] != gen_) return;
      T = std::max(T, arrived_at_[static_cast<size_t>(s)]);
    }
    complete(port, T);
  }

  void complete(BarrierPort& port, Tick T) {
    if (leaving_ > 0) port.remove_top(leaving_);
    int survivors = port.active_groups();
    cur_.decision = T;
    Tick R = T + costs_.barrier;
    int k = 0, W = 0;
    if (kind_ != BarrierKind::Plain) {
      if (!zombies_.empty())
        throw Error(ErrorKind::Deadlock, "previous episode still owes " + std::to_string(zombies_.size()) + " workgroups");
      k = port.fork(T);
      if (kind_ == BarrierKind::Query) W = std::clamp(port.query(T), 0, port.active_groups() - 1);
      R += costs_.primitive;
    }
    cur_.forks = k;
    cur_.query = W;
    cur_.release = R;
    cur_.end = R;
    int m = port.active_groups();
    if (W > 0) {
      zombies_ = port.remove_top(W);
      spin_episode_ = cur_.index;
      cur_.end = kNever;
      port.schedule_spin(R + costs_.spin());
    }
    cur_.m_after = m - W;
    ++gen_;
    open_ = false;
    episodes_.push_back(cur_);
    for (int s = 0; s < m - W; ++s) port.release(s, R, s < survivors);
    if (W > 0 && zombies_.empty()) episodes_.back().end = R;
  }

  BarrierKind kind_;
  BarrierCosts costs_;
  std::vector<std::uint64_t> arrived_gen_;
  std::vector<Tick> arrived_at_;
  std::uint64_t gen_ = 1;
  bool open_ = false;
  int key_ = -1;
  int leaving_ = 0;
  BarrierEpisode cur_;
  std::vector<BarrierEpisode> episodes_;
  std::vector<int> zombies_;
  int spin_episode_ = -1;
};

struct OfflineBarrierResult {
  KernelState state;
  BarrierEpisode episode;
  std::vector<int> killed_slots;
};

namespace detail {

// Drives one barrier episode on a kernel state whose active workgroups all
// wait at a resizing barrier; slot i arrives at tick order position.
class OfflinePort final : public BarrierPort {
 public:
  OfflinePort(KernelState& s, SchedulerContext& sched, int kernel) : s_(s), sched_(sched), kernel_(kernel) {
    for (int u = 0; u < sched.units(); ++u)
      if (sched.owner(u) == kernel) unit_of_.push_back(u);
    unit_of_.resize(static_cast<size_t>(s.N), -1);
  }
  int active_groups() const override { return s_.M; }
  bool offer_kill(int slot, Tick at) override {
    int u = unit_of_[static_cast<size_t>(slot)];
    if (u < 0 || !sched_.on_offer_kill(kernel_, u, at)) return false;
    unit_of_[static_cast<size_t>(slot)] = -1;
    killed.push_back(slot);
    return true;
  }
  std::vector<int> remove_top(int count) override {
    std::vector<int> held;
    for (int i = 0; i < count; ++i) {
      int top = s_.M - 1;
      if (unit_of_[static_cast<size_t>(top)] >= 0) {
        held.push_back(unit_of_[static_cast<size_t>(top)]);
        zombie_slot.push_back(top);
      }
      unit_of_[static_cast<size_t>(top)] = -1;
      kill_top(s_);
    }
    return held;
  }
  int fork(Tick at) override {
    auto units = sched_.on_request_fork(kernel_, s_.M, s_.N, at);
    int k = static_cast<int>(units.size());
    int pc = s_.group(0).threads[0].pc;
    auto created = fork_groups(s_, 0, k, pc + 1);
    for (size_t i = 0; i < created.size(); ++i) unit_of_[static_cast<size_t>(created[i])] = units[i];
    return k;
  }
  int query(Tick) override { return sched_.query(kernel_); }
  void release(int slot, Tick, bool advance) override {
    if (advance) advance_group(s_, slot);
  }
  bool surrender(int unit, Tick at) override {
    if (!sched_.on_offer_kill(kernel_, unit, at)) return false;
    claimed_units.push_back(unit);
    return true;
  }
  void schedule_spin(Tick at) override { spin_at = at; }

  std::vector<int> killed;
  std::vector<int> zombie_slot;
  std::vector<int> claimed_units;
  std::optional<Tick> spin_at;

 private:
  KernelState& s_;
  SchedulerContext& sched_;
  int kernel_;
  std::vector<int> unit_of_;
};

inline OfflineBarrierResult run_offline_barrier(BarrierKind kind, KernelState state, SchedulerContext& sched,
                                                int kernel, const std::vector<int>& arrival_order,
                                                BarrierCosts costs) {
  for (int i = 0; i < state.M; ++i)
    if (!at_uniform(state, i, Op::ResizingBarrier))
      throw Error(ErrorKind::NotEnabled, "workgroup " + std::to_string(i) + " is not at a resizing barrier");
  if (static_cast<int>(arrival_order.size()) != state.M)
    throw Error(ErrorKind::InvalidConfig, "arrival order must list every active workgroup once");
  int key = state.group(0).threads[0].pc;
  BarrierRuntime rt(kind, costs, state.N);
  OfflinePort port(state, sched, kernel);
  Tick t = 0;
  for (int slot : arrival_order) {
    if (slot >= state.M) continue;  // already removed
    rt.arrive(port, slot, t, key);
    t += 1;
  }
  while (port.spin_at) {
    Tick at = *port.spin_at;
    port.spin_at.reset();
    rt.spin(port, at);
  }
  OfflineBarrierResult r{std::move(state), rt.episodes().empty() ? BarrierEpisode{} : rt.episodes().back(), port.killed};
  r.killed_slots.insert(r.killed_slots.end(), port.zombie_slot.begin(), port.zombie_slot.end());
  return r;
}

}  // namespace detail

/// Naive resizing barrier over a state where every active workgroup waits at
/// a resizing barrier; `arrival_order` lists slots in arrival order.
inline OfflineBarrierResult barrier_naive_resize(KernelState state, SchedulerContext& sched, int kernel,
                                                 const std::vector<int>& arrival_order, BarrierCosts costs = {}) {
  return detail::run_offline_barrier(BarrierKind::Naive, std::move(state), sched, kernel, arrival_order, costs);
}

inline OfflineBarrierResult barrier_query_resize(KernelState state, SchedulerContext& sched, int kernel,
                                                 const std::vector<int>& arrival_order, BarrierCosts costs = {}) {
  return detail::run_offline_barrier(BarrierKind::Query, std::move(state), sched, kernel, arrival_order, costs);
}

}  // namespace coopk
