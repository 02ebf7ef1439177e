// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: prints one PASS/FAIL line per criterion and exits nonzero
// when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "aptsim/aptsim.hpp"
#include "enumerate.hpp"
#include "ks.hpp"

namespace {

using namespace aptsim;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Greedy objective at least half of the exhaustive optimum, always feasible.
Verdict greedy_ratio() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pdist(0, 10);
  std::uniform_real_distribution<double> rhodist(0, 0.1);
  const int instances = 2000;
  int infeasible = 0;
  int below = 0;
  double worst = 1.0;
  for (int k = 0; k < instances; ++k) {
    const std::size_t n = 1 + rng() % 10;
    std::vector<testing::PlainItem> plain;
    std::vector<RequestRuntime> rts;
    double sum_m = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = pdist(rng);
      const double m = 2.0 * static_cast<double>(1 + rng() % 10);
      plain.push_back({p, m});
      rts.push_back({static_cast<RequestId>(i), 0.0, p, m, false, false});
      sum_m += m;
    }
    const std::size_t queue = n + rng() % (51 - n);
    const double rho = rhodist(rng);
    const double budget = std::uniform_real_distribution<double>(0, sum_m)(rng);
    const auto problem = make_problem(rts, queue, rho, budget, true, NearZeroFallback{});
    const auto greedy = greedy_schedule(problem);
    const auto opt = testing::enumerate_all(plain, static_cast<double>(queue), rho, budget, true);

    double used = 0;
    double value = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& d = greedy.decisions[i];
      if (d.beta && !d.alpha) ++infeasible;
      if (!d.alpha) continue;
      used += d.beta ? plain[i].m / 2 : plain[i].m;
      value += plain[i].p - (d.beta ? static_cast<double>(queue) * rho * plain[i].m : 0.0);
    }
    if (used > budget + 1e-9) ++infeasible;
    if (value < 0.5 * opt.best - 1e-9) ++below;
    if (opt.best > 0) worst = std::min(worst, value / opt.best);
  }
  const double elapsed = seconds_since(t0);
  return {infeasible == 0 && below == 0 && elapsed < 60.0,
          fmt("%d instances, worst ratio %.4f, %d below 0.5, %d infeasible, %.2f s", instances, worst, below,
              infeasible, elapsed)};
}

// 2. The three-request worked instance.
Verdict worked_instance() {
  const std::vector<RequestRuntime> rts{{1, 0.0, 10, 4, false, false},
                                        {2, 0.0, 6, 2, false, false},
                                        {3, 0.0, 8, 4, false, false}};
  const auto problem = make_problem(rts, 3, 0.25, 6, true, NearZeroFallback{});
  const auto greedy = greedy_schedule(problem);
  const auto oracle = brute_force_schedule(problem);
  const auto plain = testing::enumerate_all({{10, 4}, {6, 2}, {8, 4}}, 3, 0.25, 6, true);
  auto shape = [](const ScheduleOutcome& o) {
    std::string s;
    for (const auto& d : o.decisions) s += !d.alpha ? 'S' : (d.beta ? 'H' : 'K');
    return s;
  };
  const bool ok = std::abs(greedy.objective - 18) < 1e-12 && std::abs(oracle.objective - 18) < 1e-12 &&
                  std::abs(plain.best - 18) < 1e-12 && shape(greedy) == "HKH" && shape(oracle) == "HKH" &&
                  plain.assignment == std::vector<int>{1, 2, 1} && std::abs(greedy.memory_used - 6) < 1e-12;
  return {ok, fmt("greedy %.6g [%s], oracle %.6g [%s], enumeration %.6g", greedy.objective, shape(greedy).c_str(),
                  oracle.objective, shape(oracle).c_str(), plain.best)};
}

// Structural check that does not go through the pool's own validator.
std::string audit_pool(const BlockPool& pool) {
  std::set<BlockId> seen;
  std::int64_t held = 0;
  for (const auto& [id, m] : pool.maps()) {
    for (const auto& list : m.lists) {
      for (const auto& slot : list) {
        if (slot.block < 0 || slot.block >= pool.total_blocks()) return "block id out of range";
        if (!seen.insert(slot.block).second) return "block aliased";
        if (slot.filled < 0 || slot.filled > pool.block_size()) return "bad fill";
      }
    }
    held += m.block_count();
    const auto& k = m.list(VectorKind::K);
    const auto& v = m.list(VectorKind::V);
    const auto& h = m.list(VectorKind::H);
    if (m.type == CacheType::KV) {
      if (!h.empty() || k.size() != v.size()) return "K/V asymmetry";
      for (std::size_t i = 0; i < k.size(); ++i) {
        if (k[i].filled != v[i].filled) return "K/V fill asymmetry";
      }
    } else if (!k.empty() || !v.empty()) {
      return "hidden map holds K/V blocks";
    }
    if (m.block_count() != blocks_needed(m.total_tokens, m.type, pool.block_size())) return "block count mismatch";
  }
  if (held + pool.free_blocks() != pool.total_blocks()) return "conservation violated";
  return {};
}

// 3. Pool fuzzing plus the block-layout fixture.
Verdict pool_fuzz() {
  BlockPool fixture(64, 4);
  const auto kv = fixture.allocate(1, CacheType::KV, 11).block_count();
  const auto hidden = fixture.allocate(2, CacheType::Hidden, 14).block_count();

  std::mt19937_64 rng(99);
  const int sequences = 10000;
  std::string failure;
  std::int64_t ops = 0;
  for (int seq = 0; seq < sequences && failure.empty(); ++seq) {
    BlockPool pool(1 + static_cast<std::int64_t>(rng() % 48), 1 + static_cast<Tokens>(rng() % 6));
    for (int op = 0; op < 40 && failure.empty(); ++op, ++ops) {
      const RequestId id = static_cast<RequestId>(rng() % 8);
      const bool has = pool.contains(id);
      const auto before = pool.free_blocks();
      try {
        switch (rng() % 4) {
          case 0:
            if (!has) pool.allocate(id, rng() % 2 ? CacheType::KV : CacheType::Hidden, static_cast<Tokens>(rng() % 30));
            break;
          case 1:
            if (has) pool.extend(id, static_cast<Tokens>(rng() % 5));
            break;
          case 2:
            pool.free(id);
            break;
          default:
            if (has) {
              const auto m = pool.map(id);
              pool.free(id);
              pool.allocate(id, m.type == CacheType::KV ? CacheType::Hidden : CacheType::KV, m.total_tokens + 1);
            }
        }
      } catch (const OutOfMemory&) {
        // A failed switch has already released the old map; other ops must be no-ops.
        if (pool.free_blocks() != before && pool.contains(id)) failure = "OOM changed the pool";
      }
      if (failure.empty()) failure = audit_pool(pool);
      if (failure.empty()) {
        if (auto err = pool.check_invariants()) failure = *err;
      }
    }
  }
  const bool ok = failure.empty() && kv == 6 && hidden == 4;
  return {ok, fmt("%d sequences / %lld ops%s%s; fixture KV(11 tok)=%lld blocks, hidden(14 tok)=%lld blocks", sequences,
                  static_cast<long long>(ops), failure.empty() ? "" : ", first failure: ", failure.c_str(),
                  static_cast<long long>(kv), static_cast<long long>(hidden))};
}

// Shared workload family for the trend criteria: KV-only memory is the
// bottleneck and hidden cache is cheap.
SimConfig trend_config() {
  SimConfig c;
  c.total_blocks = 768;
  c.block_size = 16;
  c.cost = {0.02, 1e-4, 2e-3, 1e-6, 1e-7};
  c.slo = slo_presets().at("sharegpt-13b");
  c.context_limit = 2048;
  return c;
}

WorkloadSpec trend_workload(double rate) {
  WorkloadSpec w;
  w.num_requests = 400;
  w.arrivals = PoissonArrivals{rate};
  w.input.kind = UniformLength{32, 512};
  w.output.kind = UniformLength{16, 256};
  return w;
}

const std::vector<std::uint64_t> kSeeds{0, 1, 2, 3, 4};

struct Cell {
  std::vector<double> joint;  // per seed
  double mean() const { return std::accumulate(joint.begin(), joint.end(), 0.0) / static_cast<double>(joint.size()); }
};

std::map<std::pair<SchedulerPolicy, CacheMode>, Cell> grid(double rate, const std::vector<SchedulerPolicy>& policies,
                                                            const std::vector<CacheMode>& caches) {
  std::vector<Workload> workloads;
  for (auto s : kSeeds) workloads.push_back(generate_workload(trend_workload(rate), s));
  const auto rows = run_compare(trend_config(), workloads, kSeeds, policies, caches);
  std::map<std::pair<SchedulerPolicy, CacheMode>, Cell> out;
  for (const auto& r : rows) {
    if (!r.errors.empty()) throw std::runtime_error(r.errors.front());
    out[{r.policy, r.cache}].joint = r.per_seed_joint;
  }
  return out;
}

// 4. Hybrid cache beats KV-only under memory pressure.
Verdict hybrid_vs_kv() {
  const auto t0 = Clock::now();
  const double rate = 4.0;
  auto g = grid(rate, {SchedulerPolicy::Adaptive}, {CacheMode::HybridEnabled, CacheMode::KVOnly});
  const auto& h = g[{SchedulerPolicy::Adaptive, CacheMode::HybridEnabled}];
  const auto& k = g[{SchedulerPolicy::Adaptive, CacheMode::KVOnly}];
  int wins = 0;
  std::string per;
  for (std::size_t i = 0; i < kSeeds.size(); ++i) {
    wins += h.joint[i] > k.joint[i];
    per += fmt(" %.2f/%.2f", h.joint[i], k.joint[i]);
  }
  const double elapsed = seconds_since(t0);
  return {h.mean() >= k.mean() && wins >= 4 && elapsed < 300,
          fmt("rate %.1f: hybrid %.2f%% vs kv %.2f%%, strictly better in %d/5 seeds (%s ), %.1f s", rate, h.mean(),
              k.mean(), wins, per.c_str(), elapsed)};
}

// 5. Adaptive beats FCFS; random beats FCFS at the highest rate.
Verdict adaptive_vs_fcfs() {
  const auto t0 = Clock::now();
  const std::vector<double> rates{4.0, 8.0, 16.0};
  double sum_a = 0;
  double sum_f = 0;
  std::string per;
  bool top_ok = false;
  for (double rate : rates) {
    auto g = grid(rate, {SchedulerPolicy::Adaptive, SchedulerPolicy::FCFS, SchedulerPolicy::Random},
                  {CacheMode::HybridEnabled});
    const double a = g[{SchedulerPolicy::Adaptive, CacheMode::HybridEnabled}].mean();
    const double f = g[{SchedulerPolicy::FCFS, CacheMode::HybridEnabled}].mean();
    const double r = g[{SchedulerPolicy::Random, CacheMode::HybridEnabled}].mean();
    sum_a += a;
    sum_f += f;
    per += fmt(" r=%.0f: A %.2f F %.2f R %.2f;", rate, a, f, r);
    if (rate == rates.back()) top_ok = a > f && r >= f;
  }
  const bool ok = sum_a >= sum_f && top_ok;
  return {ok, fmt("%s %.1f s", per.c_str(), seconds_since(t0))};
}

// 6. Scheduler time for 800 and 1600 candidates.
Verdict scalability() {
  auto make_instance = [](std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<RequestRuntime> rts;
    double sum_m = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = 2.0 * static_cast<double>(1 + rng() % 1024);
      rts.push_back({static_cast<RequestId>(i), 0.0, std::uniform_real_distribution<double>(0, 10)(rng), m, false,
                     false});
      sum_m += m;
    }
    return make_problem(rts, n, 1e-5, sum_m / 3, true, NearZeroFallback{});
  };
  // Per-call time from batches of calls; the fastest batch filters out
  // scheduler noise from the machine.
  auto per_call_ms = [](const SchedulingProblem& p) {
    const int batch = 50;
    double best = 1e300;
    for (int rep = 0; rep < 15; ++rep) {
      const auto t0 = Clock::now();
      std::size_t sink = 0;
      for (int k = 0; k < batch; ++k) sink += greedy_schedule(p).selected();
      best = std::min(best, seconds_since(t0) * 1e3 / batch);
      if (sink == 0 && !p.items.empty()) std::abort();
    }
    return best;
  };
  const auto p800 = make_instance(800, 1);
  const auto p1600 = make_instance(1600, 2);
  per_call_ms(p1600);  // warm-up
  const double t800 = per_call_ms(p800);
  const double t1600 = per_call_ms(p1600);
  const double ratio = t1600 / std::max(t800, 1e-6);
  return {ratio <= 2.5 && t1600 <= 100.0,
          fmt("greedy per call, 800 candidates: %.3f ms, 1600: %.3f ms, ratio %.2f", t800, t1600, ratio)};
}

std::string run_outputs(const Workload& w, const SimConfig& cfg) {
  const auto result = run(w, cfg);
  const auto metrics = compute_metrics(result, cfg.slo);
  std::ostringstream out;
  write_metrics_csv(out, metrics);
  write_iteration_log(out, result.iterations);
  out << sim_result_json(result).dump() << summary_json(result, metrics, cfg.slo).dump();
  return out.str();
}

std::string sweep_outputs(unsigned threads) {
  SweepOptions opts;
  opts.rates = {2.0, 6.0};
  opts.seeds = {0, 1, 2};
  opts.thresholds = {90, 50};
  opts.threads = threads;
  auto spec = trend_workload(1.0);
  spec.num_requests = 120;
  const auto sweep = run_sweep(trend_config(), spec, opts);
  std::ostringstream out;
  out << sweep_json(sweep).dump();
  for (std::size_t i = 0; i < sweep.ttft_samples.size(); ++i) {
    write_cdf_csv(out, empirical_cdf(sweep.ttft_samples[i]));
    write_cdf_csv(out, empirical_cdf(sweep.tbt_samples[i]));
  }
  return out.str();
}

// 7. Identical inputs give byte-identical outputs.
Verdict determinism() {
  const auto w = generate_workload(trend_workload(6.0), 11);
  bool ok = true;
  for (auto policy : {SchedulerPolicy::Adaptive, SchedulerPolicy::FCFS, SchedulerPolicy::Random}) {
    auto cfg = trend_config();
    cfg.policy = policy;
    cfg.rng_seed = 5;
    ok = ok && run_outputs(w, cfg) == run_outputs(w, cfg);
  }
  const auto a = sweep_outputs(1);
  const auto b = sweep_outputs(4);
  const auto c = sweep_outputs(0);
  ok = ok && a == b && b == c;
  return {ok, fmt("run outputs for 3 policies and sweep outputs over 1/4/auto threads (%zu bytes) compared", a.size())};
}

// 8. Reductions with rho = 0 / KV-only, and Gamma(cv=1) vs Poisson.
Verdict equivalences() {
  // Without hidden cache the adaptive solver is a density knapsack with a
  // best-single guard; compare against a direct implementation.
  std::mt19937_64 rng(8);
  int mismatches = 0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t n = 1 + rng() % 30;
    std::vector<RequestRuntime> rts;
    double sum_m = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double m = 2.0 * static_cast<double>(1 + rng() % 20);
      rts.push_back({static_cast<RequestId>(i), 0.0, std::uniform_real_distribution<double>(0, 10)(rng), m, false,
                     false});
      sum_m += m;
    }
    const double budget = std::uniform_real_distribution<double>(0, sum_m)(rng);
    const auto outcome = greedy_schedule(make_problem(rts, n, 0.0, budget, false, NearZeroFallback{}));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double da = rts[a].pending / rts[a].max_memory;
      const double db = rts[b].pending / rts[b].max_memory;
      if (da != db) return da > db;
      if (rts[a].max_memory != rts[b].max_memory) return rts[a].max_memory < rts[b].max_memory;
      return a < b;
    });
    std::vector<bool> take(n, false);
    double left = budget;
    double value = 0;
    for (std::size_t i : order) {
      if (rts[i].max_memory <= left + 1e-9) {
        take[i] = true;
        left -= rts[i].max_memory;
        value += rts[i].pending;
      }
    }
    std::optional<std::size_t> single;
    for (std::size_t i = 0; i < n; ++i) {
      if (rts[i].max_memory <= budget + 1e-9 && (!single || rts[i].pending > rts[*single].pending)) single = i;
    }
    if (single && rts[*single].pending > value) {
      take.assign(n, false);
      take[*single] = true;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (outcome.decisions[i].alpha != take[i] || outcome.decisions[i].beta) {
        ++mismatches;
        break;
      }
    }
  }

  // KV-only simulations ignore rho; without memory pressure hybrid with rho=0
  // never keeps a request on hidden cache and matches KV-only exactly.
  const auto w = generate_workload(trend_workload(6.0), 3);
  auto cfg = trend_config();
  cfg.cache_mode = CacheMode::KVOnly;
  cfg.cost.rho = 0;
  const auto kv0 = run_outputs(w, cfg);
  cfg.cost.rho = 1e-3;
  const bool rho_inert = kv0 == run_outputs(w, cfg);
  cfg.total_blocks = 1 << 16;
  cfg.cost.rho = 0;
  const auto kv_big = run_outputs(w, cfg);
  cfg.cache_mode = CacheMode::HybridEnabled;
  const bool hybrid_same = kv_big == run_outputs(w, cfg);

  auto gaps = [](const std::vector<Seconds>& t) {
    std::vector<double> g{t.front()};
    for (std::size_t i = 1; i < t.size(); ++i) g.push_back(t[i] - t[i - 1]);
    return g;
  };
  const std::size_t n = 100000;
  const auto ga = gaps(synthesize_arrivals(n, GammaArrivals{2.0, 1.0}, 21));
  const auto po = gaps(synthesize_arrivals(n, PoissonArrivals{2.0}, 22));
  const double d = testing::ks_statistic(ga, po);
  const double crit = testing::ks_critical_001(n, n);

  const bool ok = mismatches == 0 && rho_inert && hybrid_same && d < crit;
  return {ok, fmt("density-knapsack mismatches %d/1000; KV-only rho-invariant: %s; hybrid==KV without pressure: %s; "
                  "KS D=%.5f (crit %.5f)",
                  mismatches, rho_inert ? "yes" : "no", hybrid_same ? "yes" : "no", d, crit)};
}

// 9. Hand-built emission traces.
Verdict metrics_oracle() {
  SimResult r;
  auto add = [&](RequestId id, std::vector<Seconds> emits) {
    RequestRecord q;
    q.spec = {id, 0.0, 4, static_cast<Tokens>(emits.size())};
    q.first_token_time = emits.front();
    q.token_emit_times = std::move(emits);
    q.finished = true;
    r.requests.push_back(q);
  };
  add(0, {0.8});
  add(1, {1.0, 1.2, 1.5, 3.0});
  add(2, {1.2, 1.3, 1.4});
  const auto m = compute_metrics(r, SloSpec{1.0, 1.0});
  const double eps = 1e-12;
  const bool ok = std::abs(m[0].ttft - 0.8) < eps && m[0].p99_tbt == 0 && m[0].slo_met &&
                  std::abs(m[1].ttft - 1.0) < eps && std::abs(m[1].p99_tbt - 1.5) < eps && m[1].ttft_met &&
                  !m[1].slo_met && std::abs(m[2].ttft - 1.2) < eps && std::abs(m[2].p99_tbt - 0.1) < eps &&
                  m[2].tbt_met && !m[2].slo_met && std::abs(slo_attainment(m) - 100.0 / 3.0) < eps;
  return {ok, fmt("ttft %.3g/%.3g/%.3g, p99 %.3g/%.3g/%.3g, attainment %.4f%%", m[0].ttft, m[1].ttft, m[2].ttft,
                  m[0].p99_tbt, m[1].p99_tbt, m[2].p99_tbt, slo_attainment(m))};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"1 greedy-vs-oracle ratio", greedy_ratio},
      {"2 worked instance exactness", worked_instance},
      {"3 pool fuzzing and layout fixture", pool_fuzz},
      {"4 hybrid vs kv-only trend", hybrid_vs_kv},
      {"5 adaptive vs fcfs trend", adaptive_vs_fcfs},
      {"6 scheduler scalability", scalability},
      {"7 determinism", determinism},
      {"8 ablation equivalences", equivalences},
      {"9 metrics oracle", metrics_oracle},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s  criterion %s: %s\n", v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
