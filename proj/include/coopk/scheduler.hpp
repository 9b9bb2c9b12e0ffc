#pragma once

// Cooperative scheduler: compute-unit ownership, per-kernel resource channel
// (demand_kills / grant_forks), launch protocol and gather-time bookkeeping.
// Time is an opaque virtual tick count supplied by the caller.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "coopk/errors.hpp"

namespace coopk {

using Tick = std::int64_t;
inline constexpr Tick kNever = std::numeric_limits<Tick>::max();

struct ResourceMessage {
  int demand_kills = 0;
  int grant_forks = 0;
};

/// A timed change to a cooperative kernel's channel (ScriptedTrace policy).
struct ScriptedEvent {
  Tick at = 0;
  int demand = 0;  // workgroups to claim, posted as a new demand request
  int grant = 0;   // workgroups to offer at the next request_fork
};

struct Policy {
  enum class Kind { NeverResize, ScriptedTrace, TargetOccupancy };
  Kind kind = Kind::NeverResize;
  std::vector<ScriptedEvent> script;

  static Policy never_resize() { return {}; }
  static Policy target_occupancy() { return {Kind::TargetOccupancy, {}}; }
  static Policy scripted(std::vector<ScriptedEvent> events) {
    Policy p{Kind::ScriptedTrace, std::move(events)};
    p.check();
    return p;
  }

  void check() const {
    for (size_t i = 1; i < script.size(); ++i)
      if (script[i].at <= script[i - 1].at)
        throw Error(ErrorKind::InvalidConfig, "scripted trace times must be strictly increasing");
    for (const auto& e : script)
      if (e.demand < 0 || e.grant < 0 || e.at < 0) throw Error(ErrorKind::InvalidConfig, "negative scripted event");
  }
};

inline std::string_view to_string(Policy::Kind k) {
  switch (k) {
    case Policy::Kind::NeverResize: return "never";
    case Policy::Kind::ScriptedTrace: return "scripted";
    case Policy::Kind::TargetOccupancy: return "target";
  }
  return "?";
}

inline Policy::Kind policy_kind_from_string(std::string_view s) {
  if (s == "never") return Policy::Kind::NeverResize;
  if (s == "scripted") return Policy::Kind::ScriptedTrace;
  if (s == "target") return Policy::Kind::TargetOccupancy;
  throw Error(ErrorKind::InvalidConfig, "unknown policy '" + std::string(s) + "'");
}

/// One outstanding request for workgroups from the cooperative kernel.
struct DemandRecord {
  int id = 0;
  int kernel = -1;      // cooperative kernel asked to surrender
  int requester = -1;   // launch request id, -1 for scripted demands
  Tick posted = 0;
  int count = 0;
  std::vector<Tick> surrenders;
  bool satisfied() const { return static_cast<int>(surrenders.size()) >= count; }
  Tick satisfied_at() const { return count == 0 ? posted : surrenders.back(); }
};

struct LaunchRequest {
  std::string name;
  bool cooperative = false;
  int workgroups = 1;  // N
};

struct LaunchDecision {
  enum class Status { Started, Queued };
  Status status = Status::Started;
  int request = -1;  // id for gather/launch bookkeeping
  int kernel = -1;
  std::vector<int> units;            // granted units when Started
  std::optional<int> demand;         // demand record posted on behalf of this launch
};

struct TraceEvent {
  Tick at = 0;
  std::string kind;
  int kernel = -1;
  int value = 0;
  int request = -1;
};

class SchedulerContext {
 public:
  static constexpr int kAvailable = -1;

  SchedulerContext(int units, Policy policy) : policy_(std::move(policy)), unit_owner_(static_cast<size_t>(units), kAvailable) {
    if (units < 1) throw Error(ErrorKind::InvalidConfig, "units must be >= 1");
    policy_.check();
  }

  int units() const { return static_cast<int>(unit_owner_.size()); }
  const Policy& policy() const { return policy_; }

  int available() const {
    return static_cast<int>(std::count(unit_owner_.begin(), unit_owner_.end(), kAvailable));
  }
  int running() const { return units() - available(); }
  int owner(int unit) const { return unit_owner_.at(static_cast<size_t>(unit)); }
  int held_by(int kernel) const {
    return static_cast<int>(std::count(unit_owner_.begin(), unit_owner_.end(), kernel));
  }

  /// Launch protocol. Cooperative kernels start with min(N, available) > 0
  /// workgroups; non-cooperative ones wait (FIFO) for N units, posting a
  /// demand to the running cooperative kernel unless the policy never resizes.
  LaunchDecision launch(const LaunchRequest& req, Tick now) {
    if (req.workgroups < 1) throw Error(ErrorKind::InvalidConfig, "launch needs at least one workgroup");
    LaunchDecision d;
    d.request = static_cast<int>(requests_.size());
    d.kernel = static_cast<int>(kernels_.size());
    kernels_.push_back({req.name, req.cooperative, req.workgroups, {}, true});
    requests_.push_back({d.kernel, now, std::nullopt, {}});

    if (req.cooperative) {
      int n = std::min(req.workgroups, available());
      if (n == 0) throw Error(ErrorKind::RejectedNoCapacity, "no free compute unit for cooperative kernel");
      d.units = acquire(d.kernel, n);
      requests_.back().units = d.units;
      requests_.back().started = now;
      log(now, "launch", d.kernel, n, d.request);
      return d;
    }

    if (req.workgroups > units())
      throw Error(ErrorKind::RejectedNoCapacity, "kernel requests " + std::to_string(req.workgroups) +
                                                     " workgroups but only " + std::to_string(units()) + " exist");
    if (queue_.empty() && available() >= req.workgroups) {
      d.units = acquire(d.kernel, req.workgroups);
      requests_.back().units = d.units;
      requests_.back().started = now;
      log(now, "launch", d.kernel, req.workgroups, d.request);
      return d;
    }

    d.status = LaunchDecision::Status::Queued;
    queue_.push_back(d.request);
    log(now, "queue", d.kernel, req.workgroups, d.request);
    int coop = cooperative_kernel();
    if (coop >= 0 && policy_.kind == Policy::Kind::TargetOccupancy) {
      int missing = req.workgroups - available() - outstanding_demand(coop);
      if (missing > 0) {
        channel(coop).grant_forks = 0;
        d.demand = post_demand(coop, missing, now, d.request);
      }
    }
    return d;
  }

  /// Starts queued launches that now fit. Returns their request ids.
  std::vector<int> poll(Tick now) {
    std::vector<int> started;
    while (!queue_.empty()) {
      int r = queue_.front();
      auto& k = kernels_[static_cast<size_t>(requests_[static_cast<size_t>(r)].kernel)];
      if (available() < k.workgroups) break;
      queue_.pop_front();
      requests_[static_cast<size_t>(r)].units = acquire(requests_[static_cast<size_t>(r)].kernel, k.workgroups);
      requests_[static_cast<size_t>(r)].started = now;
      log(now, "launch", requests_[static_cast<size_t>(r)].kernel, k.workgroups, r);
      started.push_back(r);
    }
    return started;
  }

  const std::vector<int>& units_of(int request) const { return requests_.at(static_cast<size_t>(request)).units; }
  int kernel_of(int request) const { return requests_.at(static_cast<size_t>(request)).kernel; }
  std::optional<Tick> start_time(int request) const { return requests_.at(static_cast<size_t>(request)).started; }
  Tick request_time(int request) const { return requests_.at(static_cast<size_t>(request)).requested; }
  bool queued() const { return !queue_.empty(); }

  /// Applies scripted channel updates due at or before `now`.
  void apply_script(int coop, Tick now) {
    while (script_pos_ < policy_.script.size() && policy_.script[script_pos_].at <= now) {
      const auto& e = policy_.script[script_pos_++];
      if (e.demand > 0) post_demand(coop, e.demand, e.at, -1);
      if (e.grant > 0) {
        channel(coop).grant_forks += e.grant;
        log(e.at, "grant", coop, e.grant, -1);
      }
    }
  }
  Tick next_script_time() const {
    return script_pos_ < policy_.script.size() ? policy_.script[script_pos_].at : kNever;
  }

  /// Kernel finished or a non-cooperative instance completed: frees its units.
  void finish(int kernel, Tick now) {
    int freed = release_all(kernel);
    kernels_.at(static_cast<size_t>(kernel)).alive = false;
    log(now, "finish", kernel, freed, -1);
    int coop = cooperative_kernel();
    if (coop >= 0 && policy_.kind == Policy::Kind::TargetOccupancy && outstanding_demand(coop) == 0 && queue_.empty()) {
      int spare = available();
      if (spare > 0) {
        channel(coop).grant_forks = spare;
        log(now, "grant", coop, spare, -1);
      }
    }
  }

  /// Decision at an offer_kill by the kernel's eligible slot. On accept the
  /// unit is surrendered and attributed to the oldest unsatisfied demand.
  bool on_offer_kill(int kernel, int unit, Tick now) {
    auto& ch = channel(kernel);
    if (ch.demand_kills <= 0) return false;
    if (owner(unit) != kernel) throw Error(ErrorKind::InvalidConfig, "unit not held by kernel");
    ch.demand_kills -= 1;
    unit_owner_[static_cast<size_t>(unit)] = kAvailable;
    for (auto& dmd : demands_)
      if (dmd.kernel == kernel && !dmd.satisfied()) {
        dmd.surrenders.push_back(now);
        break;
      }
    log(now, "accept_kill", kernel, unit, -1);
    return true;
  }

  /// Units handed to the kernel at request_fork: k = min(grant, N-M, available).
  std::vector<int> on_request_fork(int kernel, int M, int N, Tick now) {
    auto& ch = channel(kernel);
    int k = std::min({ch.grant_forks, N - M, available()});
    if (k <= 0) return {};
    ch.grant_forks -= k;
    log(now, "fork", kernel, k, -1);
    return acquire(kernel, k);
  }

  /// W: workgroups the scheduler still needs from the kernel.
  int query(int kernel) const { return channel(kernel).demand_kills; }

  const ResourceMessage& channel(int kernel) const { return kernels_.at(static_cast<size_t>(kernel)).channel; }
  ResourceMessage& channel(int kernel) { return kernels_.at(static_cast<size_t>(kernel)).channel; }

  const DemandRecord& demand(int id) const { return demands_.at(static_cast<size_t>(id)); }
  const std::vector<DemandRecord>& demands() const { return demands_; }

  Tick gather_time(int demand_id) const {
    const auto& d = demand(demand_id);
    if (!d.satisfied())
      throw Error(ErrorKind::NotYetSatisfied, "demand " + std::to_string(demand_id) + " has " +
                                                  std::to_string(d.surrenders.size()) + " of " +
                                                  std::to_string(d.count) + " workgroups");
    return d.satisfied_at() - d.posted;
  }

  /// Posts a demand of `count` kills, clamped so demand_kills <= M-1.
  int post_demand(int kernel, int count, Tick now, int requester) {
    auto& ch = channel(kernel);
    int room = std::max(0, held_by(kernel) - 1 - ch.demand_kills);
    int c = std::min(count, room);
    ch.demand_kills += c;
    demands_.push_back({static_cast<int>(demands_.size()), kernel, requester, now, c, {}});
    log(now, "demand", kernel, c, requester);
    return demands_.back().id;
  }

  int cooperative_kernel() const {
    for (size_t i = 0; i < kernels_.size(); ++i)
      if (kernels_[i].cooperative && kernels_[i].alive) return static_cast<int>(i);
    return -1;
  }

  const std::vector<TraceEvent>& trace() const { return trace_; }

  std::string trace_jsonl() const {
    std::string out;
    for (const auto& e : trace_) {
      nlohmann::ordered_json j;
      j["t"] = e.at;
      j["event"] = e.kind;
      j["kernel"] = e.kernel;
      j["value"] = e.value;
      if (e.request >= 0) j["request"] = e.request;
      out += j.dump() + "\n";
    }
    return out;
  }

  void log(Tick at, std::string kind, int kernel, int value, int request) {
    trace_.push_back({at, std::move(kind), kernel, value, request});
  }

 private:
  struct KernelEntry {
    std::string name;
    bool cooperative;
    int workgroups;
    ResourceMessage channel;
    bool alive;
  };
  struct RequestEntry {
    int kernel;
    Tick requested;
    std::optional<Tick> started;
    std::vector<int> units;
  };

  int outstanding_demand(int kernel) const { return channel(kernel).demand_kills; }

  std::vector<int> acquire(int kernel, int n) {
    std::vector<int> got;
    for (size_t u = 0; u < unit_owner_.size() && static_cast<int>(got.size()) < n; ++u)
      if (unit_owner_[u] == kAvailable) {
        unit_owner_[u] = kernel;
        got.push_back(static_cast<int>(u));
      }
    return got;
  }

  int release_all(int kernel) {
    int n = 0;
    for (auto& o : unit_owner_)
      if (o == kernel) {
        o = kAvailable;
        ++n;
      }
    return n;
  }

  Policy policy_;
  std::vector<int> unit_owner_;
  std::vector<KernelEntry> kernels_;
  std::vector<RequestEntry> requests_;
  std::deque<int> queue_;
  std::vector<DemandRecord> demands_;
  std::vector<TraceEvent> trace_;
  size_t script_pos_ = 0;
};

}  // namespace coopk
