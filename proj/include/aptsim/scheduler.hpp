// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "aptsim/domain.hpp"

namespace aptsim {

// ---------------------------------------------------------------------------
// Runtime tracking

struct RequestRuntime {
  RequestId id = 0;
  Seconds arrival = 0;
  Seconds pending = 0;
  /// Full KV requirement including the token produced by the next iteration.
  MemoryUnits max_memory = 0;
  bool slo_violated = false;
  /// Running on hidden cache: it can keep decoding as hidden or be evicted.
  bool hidden_locked = false;
};

/// Pending time is measured from arrival until the first token, and from the
/// latest emitted token afterwards.
inline RequestRuntime track_runtime(const RequestState& s, Seconds now, const SloSpec& slo) {
  RequestRuntime rt;
  rt.id = s.spec.id;
  rt.arrival = s.spec.arrival();
  rt.pending = std::max(0.0, now - s.pending_since());
  const Tokens next_len = (s.phase == Phase::Running ? s.cached_tokens : s.effective_prompt_len) + 1;
  rt.max_memory = token_memory_units(next_len, CacheType::KV);
  rt.slo_violated = s.last_token_time ? rt.pending > slo.p99_tbt_slo : rt.pending > slo.ttft_slo;
  rt.hidden_locked = s.phase == Phase::Running && s.cache_type == CacheType::Hidden;
  return rt;
}

// ---------------------------------------------------------------------------
// Quantification model

/// g = p - beta * (|W| + |R|) * rho * m
inline double schedule_value(Seconds pending, MemoryUnits m, bool beta, std::size_t queue_total, Seconds rho) {
  if (pending < 0 || m < 0 || rho < 0) throw ContractError("schedule_value: negative input");
  return pending - (beta ? static_cast<double>(queue_total) * rho * m : 0.0);
}

struct NearZeroFallback {
  double epsilon = 1e-6;
};
struct DecayFallback {
  double gamma = 0.4;
};
using FallbackMode = std::variant<NearZeroFallback, DecayFallback>;

inline void validate(const FallbackMode& mode) {
  if (auto* nz = std::get_if<NearZeroFallback>(&mode); nz && !(nz->epsilon > 0)) {
    throw ValidationError("near-zero fallback epsilon must be > 0");
  }
  if (auto* d = std::get_if<DecayFallback>(&mode); d && !(d->gamma > 0 && d->gamma <= 1)) {
    throw ValidationError("decay fallback gamma must be in (0, 1]");
  }
}

/// Demotes the value of a request that already missed its SLO.
inline double apply_slo_fallback(double g, bool slo_violated, const FallbackMode& mode) {
  if (!slo_violated) return g;
  if (auto* nz = std::get_if<NearZeroFallback>(&mode)) return nz->epsilon;
  return std::get<DecayFallback>(mode).gamma * g;
}

// ---------------------------------------------------------------------------
// Iteration type and memory budget

enum class IterationChoice { Prefill, Decode, Idle };

/// The queue with the larger cumulative pending time wins; ties go to decode.
inline IterationChoice decide_iteration_type(std::span<const Seconds> waiting_pending,
                                             std::span<const Seconds> running_pending) {
  if (waiting_pending.empty() && running_pending.empty()) return IterationChoice::Idle;
  if (running_pending.empty()) return IterationChoice::Prefill;
  if (waiting_pending.empty()) return IterationChoice::Decode;
  const double w = std::accumulate(waiting_pending.begin(), waiting_pending.end(), 0.0);
  const double r = std::accumulate(running_pending.begin(), running_pending.end(), 0.0);
  return w > r ? IterationChoice::Prefill : IterationChoice::Decode;
}

/// Prefill iterations only get what the running queue leaves over; decode
/// iterations reschedule the whole pool. Clamped at zero.
inline MemoryUnits memory_budget(IterationChoice type, MemoryUnits pool_capacity,
                                 std::span<const MemoryUnits> running_usage) {
  if (type != IterationChoice::Prefill) return pool_capacity;
  const double held = std::accumulate(running_usage.begin(), running_usage.end(), 0.0);
  return std::max(0.0, pool_capacity - held);
}

// ---------------------------------------------------------------------------
// Scheduling problem

/// One candidate request of the scheduling problem, with its pending time
/// already passed through the SLO fallback.
struct ScheduleItem {
  RequestId id = 0;
  Seconds arrival = 0;
  Seconds pending = 0;
  MemoryUnits max_memory = 0;
  bool hidden_locked = false;
};

struct SchedulingProblem {
  std::vector<ScheduleItem> items;
  /// |W| + |R|, the number of requests that perceive a slowdown.
  std::size_t queue_total = 0;
  Seconds rho = 0;
  MemoryUnits budget = 0;
  bool hybrid_allowed = true;

  double value(const ScheduleItem& it, bool hidden) const {
    return schedule_value(it.pending, it.max_memory, hidden, queue_total, rho);
  }
};

inline SchedulingProblem make_problem(std::span<const RequestRuntime> candidates, std::size_t queue_total,
                                      Seconds rho, MemoryUnits budget, bool hybrid_allowed,
                                      const FallbackMode& fallback) {
  SchedulingProblem p;
  p.queue_total = queue_total;
  p.rho = rho;
  p.budget = budget;
  p.hybrid_allowed = hybrid_allowed;
  p.items.reserve(candidates.size());
  for (const auto& c : candidates) {
    p.items.push_back({c.id, c.arrival, apply_slo_fallback(c.pending, c.slo_violated, fallback), c.max_memory,
                       hybrid_allowed && c.hidden_locked});
  }
  return p;
}

enum class Stage { Hidden, Upgrade, DirectKV };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Hidden: return "hidden";
    case Stage::Upgrade: return "upgrade";
    case Stage::DirectKV: return "direct_kv";
  }
  return "?";
}

/// A marginal scheduling move: `delta_m` more memory for request `request`
/// buys `theta` value per memory unit.
struct CandidateSchedule {
  double theta = 0;
  RequestId request = 0;
  MemoryUnits delta_m = 0;
  MemoryUnits m_max = 0;
  Stage stage = Stage::DirectKV;
  /// Index of the request in SchedulingProblem::items.
  std::size_t item = 0;
};

/// True when hidden admission pays off against direct KV admission: p/m >= 2 N rho.
inline bool hidden_worthwhile(Seconds p, MemoryUnits m, std::size_t queue_total, Seconds rho) {
  return p / m >= 2.0 * static_cast<double>(queue_total) * rho;
}

inline std::vector<CandidateSchedule> marginal_gains(Seconds p, MemoryUnits m, std::size_t queue_total, Seconds rho,
                                                     bool hybrid_allowed, RequestId id = 0, std::size_t item = 0) {
  if (!(m > 0)) throw ContractError("marginal_gains: m must be > 0");
  const double penalty_rate = 2.0 * static_cast<double>(queue_total) * rho;
  if (hybrid_allowed && hidden_worthwhile(p, m, queue_total, rho)) {
    return {{2.0 * p / m - penalty_rate, id, m / 2, m, Stage::Hidden, item},
            {penalty_rate, id, m / 2, m, Stage::Upgrade, item}};
  }
  return {{p / m, id, m, m, Stage::DirectKV, item}};
}

/// Candidate set in item order, stages in (hidden, upgrade) order per request.
/// A hidden-locked item contributes its hidden stage only.
inline std::vector<CandidateSchedule> build_candidates(const SchedulingProblem& problem) {
  std::vector<CandidateSchedule> out;
  out.reserve(problem.items.size() * 2);
  for (std::size_t i = 0; i < problem.items.size(); ++i) {
    const auto& it = problem.items[i];
    if (it.hidden_locked) {
      const double penalty_rate = 2.0 * static_cast<double>(problem.queue_total) * problem.rho;
      out.push_back({2.0 * it.pending / it.max_memory - penalty_rate, it.id, it.max_memory / 2, it.max_memory,
                     Stage::Hidden, i});
      continue;
    }
    auto stages = marginal_gains(it.pending, it.max_memory, problem.queue_total, problem.rho,
                                 problem.hybrid_allowed, it.id, i);
    out.insert(out.end(), stages.begin(), stages.end());
  }
  return out;
}

struct Decision {
  RequestId id = 0;
  bool alpha = false;
  bool beta = false;
  double value = 0;
};

struct ScheduleOutcome {
  /// One entry per problem item, in item order.
  std::vector<Decision> decisions;
  double objective = 0;
  MemoryUnits memory_used = 0;

  std::size_t selected() const {
    return static_cast<std::size_t>(
        std::count_if(decisions.begin(), decisions.end(), [](const Decision& d) { return d.alpha; }));
  }
};

inline constexpr double kMemoryTolerance = 1e-9;

/// Recomputes objective and memory from the (alpha, beta) decisions.
inline void finalize(ScheduleOutcome& out, const SchedulingProblem& problem) {
  out.objective = 0;
  out.memory_used = 0;
  for (std::size_t i = 0; i < out.decisions.size(); ++i) {
    auto& d = out.decisions[i];
    const auto& it = problem.items[i];
    d.id = it.id;
    if (!d.alpha) {
      d.beta = false;
      d.value = 0;
      continue;
    }
    d.value = problem.value(it, d.beta);
    out.objective += d.value;
    out.memory_used += d.beta ? it.max_memory / 2 : it.max_memory;
  }
}

inline ScheduleOutcome empty_outcome(const SchedulingProblem& problem) {
  ScheduleOutcome out;
  out.decisions.resize(problem.items.size());
  finalize(out, problem);
  return out;
}

inline bool is_feasible(const ScheduleOutcome& out, const SchedulingProblem& problem) {
  MemoryUnits used = 0;
  for (std::size_t i = 0; i < out.decisions.size(); ++i) {
    const auto& d = out.decisions[i];
    if (d.beta && !d.alpha) return false;
    if (d.alpha && !d.beta && problem.items[i].hidden_locked) return false;
    if (d.alpha) used += (1.0 - (d.beta ? 0.5 : 0.0)) * problem.items[i].max_memory;
  }
  return used <= problem.budget + kMemoryTolerance;
}

/// Greedy order: theta descending, then smaller delta_m, lower request id, stage order.
inline bool greedy_before(const CandidateSchedule& a, const CandidateSchedule& b) {
  if (a.theta != b.theta) return a.theta > b.theta;
  if (a.delta_m != b.delta_m) return a.delta_m < b.delta_m;
  if (a.request != b.request) return a.request < b.request;
  return a.stage < b.stage;
}

inline void sort_candidates(std::vector<CandidateSchedule>& ups) { std::sort(ups.begin(), ups.end(), greedy_before); }

/// Density greedy over the marginal stages, compared against the best
/// single-request assignment; the larger objective wins.
inline ScheduleOutcome greedy_schedule(std::vector<CandidateSchedule> candidates, const SchedulingProblem& problem) {
  ScheduleOutcome greedy = empty_outcome(problem);
  if (problem.items.empty() || problem.budget <= 0) return greedy;

  sort_candidates(candidates);
  MemoryUnits remaining = problem.budget;
  for (const auto& c : candidates) {
    if (c.theta < 0 || c.delta_m > remaining + kMemoryTolerance) continue;
    auto& d = greedy.decisions[c.item];
    switch (c.stage) {
      case Stage::Hidden:
        d.alpha = true;
        d.beta = true;
        break;
      case Stage::Upgrade:
        if (!(d.alpha && d.beta)) continue;
        d.beta = false;
        break;
      case Stage::DirectKV:
        d.alpha = true;
        d.beta = false;
        break;
    }
    remaining -= c.delta_m;
  }
  finalize(greedy, problem);

  // Best single request on its own, in whichever cache type fits and pays more.
  ScheduleOutcome single = empty_outcome(problem);
  std::optional<std::pair<std::size_t, bool>> best;
  double best_value = 0;
  for (std::size_t i = 0; i < problem.items.size(); ++i) {
    const auto& it = problem.items[i];
    for (bool hidden : {false, true}) {
      if (hidden && !problem.hybrid_allowed) continue;
      if (!hidden && it.hidden_locked) continue;
      const MemoryUnits need = hidden ? it.max_memory / 2 : it.max_memory;
      if (need > problem.budget + kMemoryTolerance) continue;
      const double v = problem.value(it, hidden);
      if (!best || v > best_value) {
        best = {i, hidden};
        best_value = v;
      }
    }
  }
  if (best) {
    single.decisions[best->first].alpha = true;
    single.decisions[best->first].beta = best->second;
    finalize(single, problem);
  }
  return single.objective > greedy.objective ? single : greedy;
}

inline ScheduleOutcome greedy_schedule(const SchedulingProblem& problem) {
  return greedy_schedule(build_candidates(problem), problem);
}

inline constexpr std::size_t kBruteForceLimit = 20;

/// Exhaustive search over {skip, hidden, KV} per request. Among maximizers the
/// lexicographically smallest assignment (skip < hidden < KV) is returned.
inline ScheduleOutcome brute_force_schedule(const SchedulingProblem& problem) {
  const std::size_t n = problem.items.size();
  if (n > kBruteForceLimit) {
    throw ContractError("brute_force_schedule: at most " + std::to_string(kBruteForceLimit) + " candidates");
  }
  std::vector<int> choice(n, 0);
  std::vector<int> best_choice(n, 0);
  double best_value = 0;
  bool have_best = false;
  const double tie_eps = 1e-12;

  auto recurse = [&](auto&& self, std::size_t i, MemoryUnits used, double value) -> void {
    if (i == n) {
      if (!have_best || value > best_value + tie_eps) {
        have_best = true;
        best_value = value;
        best_choice = choice;
      }
      return;
    }
    const auto& it = problem.items[i];
    for (int c = 0; c < 3; ++c) {
      if (c == 1 && !problem.hybrid_allowed) continue;
      if (c == 2 && it.hidden_locked) continue;
      const MemoryUnits need = c == 0 ? 0 : (c == 1 ? it.max_memory / 2 : it.max_memory);
      if (used + need > problem.budget + kMemoryTolerance) continue;
      choice[i] = c;
      const double v = c == 0 ? 0 : problem.value(it, c == 1);
      self(self, i + 1, used + need, value + v);
    }
    choice[i] = 0;
  };
  recurse(recurse, 0, 0.0, 0.0);

  ScheduleOutcome out = empty_outcome(problem);
  for (std::size_t i = 0; i < n; ++i) {
    out.decisions[i].alpha = best_choice[i] != 0;
    out.decisions[i].beta = best_choice[i] == 1;
  }
  finalize(out, problem);
  return out;
}

/// Admits in arrival order with KV cache and stops at the first request that
/// does not fit (head-of-line blocking).
inline ScheduleOutcome fcfs_schedule(const SchedulingProblem& problem) {
  ScheduleOutcome out = empty_outcome(problem);
  std::vector<std::size_t> order(problem.items.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = problem.items[a];
    const auto& y = problem.items[b];
    return x.arrival != y.arrival ? x.arrival < y.arrival : x.id < y.id;
  });
  MemoryUnits remaining = problem.budget;
  for (std::size_t i : order) {
    const MemoryUnits m = problem.items[i].max_memory;
    if (m > remaining + kMemoryTolerance) break;
    out.decisions[i].alpha = true;
    remaining -= m;
  }
  finalize(out, problem);
  return out;
}

/// Uniform shuffle, then admit every request that still fits with KV cache.
inline ScheduleOutcome random_schedule(const SchedulingProblem& problem, std::uint64_t seed) {
  ScheduleOutcome out = empty_outcome(problem);
  std::vector<std::size_t> order(problem.items.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  MemoryUnits remaining = problem.budget;
  for (std::size_t i : order) {
    const MemoryUnits m = problem.items[i].max_memory;
    if (m > remaining + kMemoryTolerance) continue;
    out.decisions[i].alpha = true;
    remaining -= m;
  }
  finalize(out, problem);
  return out;
}

}  // namespace aptsim
