// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "aptsim/config.hpp"
#include "aptsim/cost_model.hpp"
#include "aptsim/domain.hpp"
#include "aptsim/memory_pool.hpp"
#include "aptsim/scheduler.hpp"
#include "aptsim/workload.hpp"

namespace aptsim {

class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

enum class LogKind { Idle, Prefill, Decode };

inline std::string_view to_string(LogKind k) {
  switch (k) {
    case LogKind::Idle: return "idle";
    case LogKind::Prefill: return "prefill";
    case LogKind::Decode: return "decode";
  }
  return "?";
}

struct IterationLog {
  std::int64_t iteration = 0;
  LogKind kind = LogKind::Idle;
  Seconds start = 0;
  Seconds latency = 0;
  std::size_t candidates = 0;
  MemoryUnits budget = 0;
  /// Requests executed this iteration with their (alpha, beta, value).
  std::vector<Decision> batch;
  std::int64_t tokens_emitted = 0;
  std::vector<RequestId> preempted;
  std::vector<RequestId> switched;
  /// Selected requests removed by the block-granularity recheck.
  std::vector<RequestId> dropped;
  std::vector<RequestId> finished;
  std::int64_t free_blocks = 0;
};

inline nlohmann::json to_json(const IterationLog& log) {
  nlohmann::json batch = nlohmann::json::array();
  for (const auto& d : log.batch) {
    batch.push_back({{"id", d.id}, {"alpha", d.alpha ? 1 : 0}, {"beta", d.beta ? 1 : 0}, {"g", d.value}});
  }
  return {{"e", log.iteration},
          {"type", to_string(log.kind)},
          {"start", log.start},
          {"latency", log.latency},
          {"candidates", log.candidates},
          {"budget", log.budget},
          {"batch", std::move(batch)},
          {"tokens", log.tokens_emitted},
          {"preempted", log.preempted},
          {"switched", log.switched},
          {"dropped", log.dropped},
          {"finished", log.finished},
          {"free_blocks", log.free_blocks}};
}

struct RequestRecord {
  RequestSpec spec;
  std::optional<Seconds> first_token_time;
  std::vector<Seconds> token_emit_times;
  std::int64_t preemptions = 0;
  std::int64_t switches = 0;
  bool finished = false;
};

struct SimResult {
  std::vector<RequestRecord> requests;
  std::vector<IterationLog> iterations;
  Seconds makespan = 0;
  bool saw_hidden = false;
};

/// Discrete-event loop over iteration-level batches. One instance runs one
/// simulation; it is not thread-safe.
class Simulator {
 public:
  Simulator(Workload workload, SimConfig config)
      : config_(std::move(config)), pool_(config_.total_blocks, config_.block_size), rng_(config_.rng_seed) {
    validate(config_);
    if (workload.empty()) throw ValidationError("cannot simulate an empty workload");
    if (!workload.has_arrivals()) throw ValidationError("workload has requests without arrival times");
    validate(workload);
    sort_by_arrival(workload);
    for (const auto& r : workload.requests) {
      const Tokens total = r.prompt_len + r.output_len;
      if (total > config_.context_limit) {
        throw ValidationError("request " + std::to_string(r.id) + " exceeds context limit (" +
                              std::to_string(total) + " > " + std::to_string(config_.context_limit) + ")");
      }
      if (blocks_needed(total, CacheType::KV, config_.block_size) > config_.total_blocks) {
        throw ValidationError("request " + std::to_string(r.id) + " cannot fit in the pool even alone");
      }
      index_.emplace(r.id, states_.size());
      states_.emplace_back(r);
    }
  }

  Seconds clock() const { return clock_; }
  const BlockPool& pool() const { return pool_; }
  const std::deque<RequestId>& waiting() const { return waiting_; }
  const std::vector<RequestId>& running() const { return running_; }
  const RequestState& state(RequestId id) const { return states_.at(index_.at(id)); }
  std::int64_t iterations() const { return iteration_; }
  std::size_t finished_count() const { return finished_; }

  bool done() const { return finished_ == states_.size(); }

  IterationLog step() {
    if (done()) throw ContractError("step: simulation already finished");
    IterationLog log;
    log.iteration = iteration_++;
    admit_arrivals();
    if (waiting_.empty() && running_.empty()) {
      clock_ = std::max(clock_, states_[next_arrival_].spec.arrival());
      admit_arrivals();
      log.start = clock_;
      log.free_blocks = pool_.free_blocks();
      return log;
    }
    log.start = clock_;

    std::vector<Seconds> wp;
    std::vector<Seconds> rp;
    for (RequestId id : waiting_) wp.push_back(std::max(0.0, clock_ - state(id).pending_since()));
    for (RequestId id : running_) rp.push_back(std::max(0.0, clock_ - state(id).pending_since()));
    const IterationChoice choice = decide_iteration_type(wp, rp);

    std::vector<RequestId> executed;
    BatchDescriptor batch;
    // An empty pass falls through to the other iteration type; a decode that
    // only switched or evicted frees memory for one more prefill attempt.
    if (choice == IterationChoice::Prefill) {
      executed = run_prefill(log, batch);
      if (executed.empty() && !running_.empty()) executed = run_decode(log, batch);
      if (executed.empty() && !waiting_.empty()) executed = run_prefill(log, batch);
    } else {
      executed = run_decode(log, batch);
      if (executed.empty() && !waiting_.empty()) executed = run_prefill(log, batch);
    }
    if (executed.empty()) {
      throw InternalError("iteration " + std::to_string(log.iteration) + " could not schedule any request");
    }

    log.latency = iteration_latency(batch, config_.cost);
    if (!(log.latency > 0)) throw InternalError("non-positive iteration latency");
    clock_ += log.latency;

    for (RequestId id : executed) {
      auto& s = mutable_state(id);
      s.tokens_generated += 1;
      s.token_emit_times.push_back(clock_);
      s.last_token_time = clock_;
      if (!s.first_token_time) s.first_token_time = clock_;
      ++log.tokens_emitted;
      if (s.tokens_generated == s.spec.output_len) {
        pool_.free(id);
        s.phase = Phase::Finished;
        s.cache_type = CacheType::None;
        s.cached_tokens = 0;
        running_.erase(std::find(running_.begin(), running_.end(), id));
        log.finished.push_back(id);
        ++finished_;
      }
    }
    log.free_blocks = pool_.free_blocks();
    if (config_.check_invariants) verify();
    return log;
  }

  /// Cache freed, request back to the tail of the waiting queue; the next
  /// prefill recomputes prompt plus everything generated so far.
  void preempt(RequestId id) {
    auto it = std::find(running_.begin(), running_.end(), id);
    if (it == running_.end()) throw ContractError("preempt: request " + std::to_string(id) + " is not running");
    running_.erase(it);
    auto& s = mutable_state(id);
    pool_.free(id);
    s.effective_prompt_len = s.spec.prompt_len + s.tokens_generated;
    s.cached_tokens = 0;
    s.cache_type = CacheType::None;
    s.phase = Phase::Waiting;
    s.preemptions += 1;
    waiting_.push_back(id);
  }

  void handle_cache_switch(RequestId id, CacheType new_type) {
    const auto& s = state(id);
    if (s.phase != Phase::Running) throw ContractError("handle_cache_switch: request is not running");
    if (s.cache_type == new_type) throw ContractError("handle_cache_switch: cache type unchanged");
    preempt(id);
    auto& ms = mutable_state(id);
    ms.preemptions -= 1;
    ms.switches += 1;
    ms.switch_directive = new_type;
  }

  SimResult run() {
    SimResult result;
    while (!done()) {
      if (iteration_ >= config_.max_iterations) {
        throw InternalError("simulation exceeded " + std::to_string(config_.max_iterations) + " iterations (" +
                            std::to_string(finished_) + "/" + std::to_string(states_.size()) +
                            " finished, clock " + std::to_string(clock_) + ")");
      }
      auto log = step();
      for (const auto& d : log.batch) result.saw_hidden = result.saw_hidden || d.beta;
      result.iterations.push_back(std::move(log));
    }
    result.makespan = clock_;
    result.requests.reserve(states_.size());
    for (const auto& s : states_) {
      result.requests.push_back(
          {s.spec, s.first_token_time, s.token_emit_times, s.preemptions, s.switches, s.finished()});
    }
    return result;
  }

  /// Throws InternalError on the first broken queue or pool invariant.
  void verify() const {
    if (auto err = pool_.check_invariants()) throw InternalError("pool: " + *err);
    std::size_t arrived = next_arrival_;
    if (arrived != waiting_.size() + running_.size() + finished_) throw InternalError("request conservation violated");
    for (RequestId id : waiting_) {
      const auto& s = state(id);
      if (s.phase != Phase::Waiting || pool_.contains(id) || s.cache_type != CacheType::None) {
        throw InternalError("waiting request " + std::to_string(id) + " in bad state");
      }
    }
    std::int64_t held = 0;
    for (RequestId id : running_) {
      const auto& s = state(id);
      if (s.phase != Phase::Running || !pool_.contains(id)) {
        throw InternalError("running request " + std::to_string(id) + " in bad state");
      }
      const auto& m = pool_.map(id);
      if (m.type != s.cache_type || m.total_tokens != s.cached_tokens) {
        throw InternalError("running request " + std::to_string(id) + " cache map out of sync");
      }
      if (s.cached_tokens != s.spec.prompt_len + s.tokens_generated) {
        throw InternalError("running request " + std::to_string(id) + " cached length mismatch");
      }
      held += blocks_needed(s.cached_tokens, s.cache_type, config_.block_size);
    }
    if (held != pool_.used_blocks()) throw InternalError("blocks held by running queue != used blocks");
    for (const auto& s : states_) {
      if (static_cast<Tokens>(s.token_emit_times.size()) != s.tokens_generated) {
        throw InternalError("emit history length mismatch");
      }
      for (std::size_t i = 1; i < s.token_emit_times.size(); ++i) {
        if (!(s.token_emit_times[i] > s.token_emit_times[i - 1])) throw InternalError("emit times not increasing");
      }
    }
  }

 private:
  RequestState& mutable_state(RequestId id) { return states_.at(index_.at(id)); }

  void admit_arrivals() {
    while (next_arrival_ < states_.size() && states_[next_arrival_].spec.arrival() <= clock_) {
      waiting_.push_back(states_[next_arrival_].spec.id);
      ++next_arrival_;
    }
  }

  bool hybrid() const { return config_.cache_mode == CacheMode::HybridEnabled; }

  std::size_t queue_total() const { return waiting_.size() + running_.size(); }

  SchedulingProblem make(const std::vector<RequestId>& ids, MemoryUnits budget) const {
    std::vector<RequestRuntime> rts;
    rts.reserve(ids.size());
    for (RequestId id : ids) {
      auto rt = track_runtime(state(id), clock_, config_.slo);
      // Skipping a request costs it at least one more iteration of waiting,
      // so the per-iteration overhead is counted as pending already.
      rt.pending += config_.cost.c0;
      // Memory is granted in whole blocks; size requests the same way so the
      // solver sees what the pool will actually charge.
      const auto b = static_cast<double>(config_.block_size);
      rt.max_memory = 2.0 * b * std::ceil(rt.max_memory / (2.0 * b));
      rts.push_back(rt);
    }
    return make_problem(rts, queue_total(), config_.cost.rho, budget, hybrid(), config_.fallback);
  }

  ScheduleOutcome solve(const SchedulingProblem& problem) {
    ScheduleOutcome out;
    switch (config_.policy) {
      case SchedulerPolicy::Adaptive: out = greedy_schedule(problem); break;
      case SchedulerPolicy::FCFS: out = fcfs_schedule(problem); break;
      case SchedulerPolicy::Random: out = random_schedule(problem, rng_()); break;
    }
    if (!is_feasible(out, problem)) throw InternalError("scheduler returned an infeasible outcome");
    return out;
  }

  /// Order in which selected requests are given up when block rounding
  /// overflows the pool: lowest priority first.
  std::vector<std::size_t> drop_order(const SchedulingProblem& problem, const ScheduleOutcome& out) const {
    std::vector<std::size_t> sel;
    for (std::size_t i = 0; i < out.decisions.size(); ++i) {
      if (out.decisions[i].alpha) sel.push_back(i);
    }
    auto priority = [&](std::size_t i) {
      const auto& it = problem.items[i];
      if (config_.policy == SchedulerPolicy::FCFS) return -it.arrival;
      auto stages = marginal_gains(it.pending, it.max_memory, problem.queue_total, problem.rho,
                                   problem.hybrid_allowed);
      return stages.front().theta;
    };
    std::stable_sort(sel.begin(), sel.end(), [&](std::size_t a, std::size_t b) {
      const double pa = priority(a);
      const double pb = priority(b);
      if (pa != pb) return pa < pb;
      return problem.items[a].id > problem.items[b].id;
    });
    return sel;
  }

  std::vector<RequestId> run_prefill(IterationLog& log, BatchDescriptor& batch) {
    std::vector<RequestId> candidates(waiting_.begin(), waiting_.end());
    std::vector<MemoryUnits> held;
    for (RequestId id : running_) {
      held.push_back(static_cast<double>(pool_.map(id).block_count() * config_.block_size));
    }
    const MemoryUnits budget = memory_budget(IterationChoice::Prefill, config_.pool_units(), held);
    const auto problem = make(candidates, budget);
    auto outcome = solve(problem);

    auto need = [&](std::size_t i) {
      const auto& s = state(problem.items[i].id);
      return blocks_needed(s.effective_prompt_len + 1, outcome.decisions[i].beta ? CacheType::Hidden : CacheType::KV,
                           config_.block_size);
    };
    std::int64_t total = 0;
    for (std::size_t i = 0; i < outcome.decisions.size(); ++i) {
      if (outcome.decisions[i].alpha) total += need(i);
    }
    for (std::size_t i : drop_order(problem, outcome)) {
      if (total <= pool_.free_blocks()) break;
      total -= need(i);
      outcome.decisions[i].alpha = false;
      outcome.decisions[i].beta = false;
      log.dropped.push_back(problem.items[i].id);
    }
    finalize(outcome, problem);

    std::vector<RequestId> executed;
    batch = BatchDescriptor{IterationKind::Prefill, 0, 0, 0, 0};
    for (std::size_t i = 0; i < outcome.decisions.size(); ++i) {
      const auto& d = outcome.decisions[i];
      if (!d.alpha) continue;
      auto& s = mutable_state(d.id);
      const CacheType type = d.beta ? CacheType::Hidden : CacheType::KV;
      const Tokens tokens = s.effective_prompt_len + 1;
      pool_.allocate(d.id, type, tokens);
      s.phase = Phase::Running;
      s.cache_type = type;
      s.cached_tokens = tokens;
      s.switch_directive = CacheType::None;
      batch.prefill_tokens += s.effective_prompt_len;
      batch.context_tokens += tokens;
      if (type == CacheType::Hidden) batch.hidden_units += token_memory_units(tokens, CacheType::Hidden);
      executed.push_back(d.id);
      log.batch.push_back(d);
    }
    if (executed.empty()) return executed;
    waiting_.erase(std::remove_if(waiting_.begin(), waiting_.end(),
                                  [&](RequestId id) { return state(id).phase == Phase::Running; }),
                   waiting_.end());
    running_.insert(running_.end(), executed.begin(), executed.end());
    log.kind = LogKind::Prefill;
    log.candidates = problem.items.size();
    log.budget = budget;
    return executed;
  }

  std::vector<RequestId> run_decode(IterationLog& log, BatchDescriptor& batch) {
    const std::vector<RequestId> candidates = running_;
    const MemoryUnits budget = memory_budget(IterationChoice::Decode, config_.pool_units(), {});
    const auto problem = make(candidates, budget);
    auto outcome = solve(problem);

    // Type changes and evictions first, so their blocks are free for the survivors.
    for (std::size_t i = 0; i < outcome.decisions.size(); ++i) {
      const auto& d = outcome.decisions[i];
      const auto& s = state(d.id);
      if (!d.alpha) {
        preempt(d.id);
        log.preempted.push_back(d.id);
      } else {
        const CacheType want = d.beta ? CacheType::Hidden : CacheType::KV;
        if (want != s.cache_type) {
          handle_cache_switch(d.id, want);
          log.switched.push_back(d.id);
        }
      }
    }
    auto survives = [&](std::size_t i) { return state(problem.items[i].id).phase == Phase::Running; };
    std::int64_t total = 0;
    for (std::size_t i = 0; i < outcome.decisions.size(); ++i) {
      if (survives(i)) total += pool_.extension_blocks(problem.items[i].id, 1);
    }
    for (std::size_t i : drop_order(problem, outcome)) {
      if (total <= pool_.free_blocks()) break;
      if (!survives(i)) continue;
      const RequestId id = problem.items[i].id;
      total -= pool_.extension_blocks(id, 1);
      // Eviction returns this request's blocks too.
      preempt(id);
      outcome.decisions[i].alpha = false;
      outcome.decisions[i].beta = false;
      log.dropped.push_back(id);
    }

    std::vector<RequestId> executed;
    batch = BatchDescriptor{IterationKind::Decode, 0, 0, 0, 0};
    for (std::size_t i = 0; i < outcome.decisions.size(); ++i) {
      if (!survives(i)) continue;
      const RequestId id = problem.items[i].id;
      pool_.extend(id, 1);
      auto& s = mutable_state(id);
      s.cached_tokens += 1;
      batch.decode_requests += 1;
      batch.context_tokens += s.cached_tokens;
      if (s.cache_type == CacheType::Hidden) batch.hidden_units += token_memory_units(s.cached_tokens, CacheType::Hidden);
      executed.push_back(id);
      auto d = outcome.decisions[i];
      d.value = problem.value(problem.items[i], d.beta);
      log.batch.push_back(d);
    }
    log.kind = LogKind::Decode;
    log.candidates = problem.items.size();
    log.budget = budget;
    return executed;
  }

  SimConfig config_;
  BlockPool pool_;
  std::mt19937_64 rng_;
  std::vector<RequestState> states_;
  std::unordered_map<RequestId, std::size_t> index_;
  std::size_t next_arrival_ = 0;
  std::deque<RequestId> waiting_;
  std::vector<RequestId> running_;
  std::size_t finished_ = 0;
  Seconds clock_ = 0;
  std::int64_t iteration_ = 0;
};

inline SimResult run(const Workload& workload, const SimConfig& config) {
  return Simulator(workload, config).run();
}

}  // namespace aptsim
