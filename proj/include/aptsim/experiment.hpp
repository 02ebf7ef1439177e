// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "aptsim/config.hpp"
#include "aptsim/metrics.hpp"
#include "aptsim/sim_engine.hpp"
#include "aptsim/workload.hpp"

namespace aptsim {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots by the caller.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

/// Outcome of one simulation inside a sweep or comparison grid.
struct RunSummary {
  std::optional<std::string> error;
  Attainment attainment;
  std::vector<double> ttft;
  std::vector<double> tbt;
  std::int64_t iterations = 0;
  std::int64_t preemptions = 0;
  std::int64_t switches = 0;
};

inline RunSummary summarize_run(const Workload& workload, const SimConfig& config, bool keep_samples) {
  RunSummary s;
  try {
    auto result = run(workload, config);
    auto metrics = compute_metrics(result, config.slo);
    s.attainment = attainment_breakdown(metrics);
    s.iterations = static_cast<std::int64_t>(result.iterations.size());
    for (const auto& r : result.requests) {
      s.preemptions += r.preemptions;
      s.switches += r.switches;
    }
    if (keep_samples) {
      for (const auto& m : metrics) {
        s.ttft.push_back(m.ttft);
        s.tbt.insert(s.tbt.end(), m.tbt_series.begin(), m.tbt_series.end());
      }
    }
  } catch (const std::exception& e) {
    s.error = e.what();
  }
  return s;
}

struct SweepOptions {
  std::vector<double> rates;
  std::vector<std::uint64_t> seeds{0};
  std::vector<double> thresholds{90.0};
  unsigned threads = 0;
  bool keep_samples = true;
};

struct SweepOutput {
  SweepResult result;
  /// Pooled over seeds, one entry per rate.
  std::vector<std::vector<double>> ttft_samples;
  std::vector<std::vector<double>> tbt_samples;
  /// (rate, seed, message) for every failed simulation.
  std::vector<std::tuple<double, std::uint64_t, std::string>> failures;
};

inline SweepOutput run_sweep(const SimConfig& base, const WorkloadSpec& workload, const SweepOptions& opts) {
  if (opts.rates.empty()) throw ConfigError("sweep: no rates given");
  if (opts.seeds.empty()) throw ConfigError("sweep: no seeds given");
  if (!std::is_sorted(opts.rates.begin(), opts.rates.end()) ||
      std::adjacent_find(opts.rates.begin(), opts.rates.end()) != opts.rates.end()) {
    throw ConfigError("sweep: rates must be strictly increasing");
  }
  const std::size_t ns = opts.seeds.size();
  std::vector<RunSummary> runs(opts.rates.size() * ns);
  parallel_for(runs.size(), opts.threads, [&](std::size_t k) {
    const double rate = opts.rates[k / ns];
    const std::uint64_t seed = opts.seeds[k % ns];
    WorkloadSpec spec = workload;
    spec.arrivals = with_rate(spec.arrivals, rate);
    SimConfig cfg = base;
    cfg.rng_seed = seed;
    runs[k] = summarize_run(generate_workload(spec, seed), cfg, opts.keep_samples);
  });

  SweepOutput out;
  for (std::size_t r = 0; r < opts.rates.size(); ++r) {
    SweepPoint p;
    p.rate = opts.rates[r];
    std::vector<double> ttft;
    std::vector<double> tbt;
    std::size_t ok = 0;
    for (std::size_t s = 0; s < ns; ++s) {
      const auto& run = runs[r * ns + s];
      if (run.error) {
        out.failures.emplace_back(p.rate, opts.seeds[s], *run.error);
        continue;
      }
      ++ok;
      p.per_seed_joint.push_back(run.attainment.joint);
      p.attainment.joint += run.attainment.joint;
      p.attainment.ttft_only += run.attainment.ttft_only;
      p.attainment.tbt_only += run.attainment.tbt_only;
      ttft.insert(ttft.end(), run.ttft.begin(), run.ttft.end());
      tbt.insert(tbt.end(), run.tbt.begin(), run.tbt.end());
    }
    if (ok > 0) {
      p.attainment.joint /= static_cast<double>(ok);
      p.attainment.ttft_only /= static_cast<double>(ok);
      p.attainment.tbt_only /= static_cast<double>(ok);
    }
    out.result.points.push_back(std::move(p));
    out.ttft_samples.push_back(std::move(ttft));
    out.tbt_samples.push_back(std::move(tbt));
  }
  for (double th : opts.thresholds) out.result.effective_throughput.emplace_back(th, effective_throughput(out.result, th));
  return out;
}

struct CompareRow {
  SchedulerPolicy policy = SchedulerPolicy::Adaptive;
  CacheMode cache = CacheMode::HybridEnabled;
  Attainment attainment;  // mean over seeds
  std::vector<double> per_seed_joint;
  std::int64_t preemptions = 0;
  std::int64_t switches = 0;
  std::vector<std::string> errors;
};

/// Policy x cache-mode ablation grid over the same workloads.
inline std::vector<CompareRow> run_compare(const SimConfig& base, const std::vector<Workload>& workloads,
                                           const std::vector<std::uint64_t>& seeds,
                                           const std::vector<SchedulerPolicy>& policies,
                                           const std::vector<CacheMode>& caches, unsigned threads = 0) {
  if (workloads.size() != seeds.size()) throw ContractError("run_compare: one workload per seed expected");
  const std::size_t cells = policies.size() * caches.size();
  const std::size_t ns = seeds.size();
  std::vector<RunSummary> runs(cells * ns);
  parallel_for(runs.size(), threads, [&](std::size_t k) {
    const std::size_t cell = k / ns;
    SimConfig cfg = base;
    cfg.policy = policies[cell / caches.size()];
    cfg.cache_mode = caches[cell % caches.size()];
    cfg.rng_seed = seeds[k % ns];
    runs[k] = summarize_run(workloads[k % ns], cfg, false);
  });
  std::vector<CompareRow> rows;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    CompareRow row;
    row.policy = policies[cell / caches.size()];
    row.cache = caches[cell % caches.size()];
    std::size_t ok = 0;
    for (std::size_t s = 0; s < ns; ++s) {
      const auto& r = runs[cell * ns + s];
      if (r.error) {
        row.errors.push_back(*r.error);
        continue;
      }
      ++ok;
      row.per_seed_joint.push_back(r.attainment.joint);
      row.attainment.joint += r.attainment.joint;
      row.attainment.ttft_only += r.attainment.ttft_only;
      row.attainment.tbt_only += r.attainment.tbt_only;
      row.preemptions += r.preemptions;
      row.switches += r.switches;
    }
    if (ok > 0) {
      row.attainment.joint /= static_cast<double>(ok);
      row.attainment.ttft_only /= static_cast<double>(ok);
      row.attainment.tbt_only /= static_cast<double>(ok);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace aptsim
