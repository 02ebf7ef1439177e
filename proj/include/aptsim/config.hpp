// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "aptsim/cost_model.hpp"
#include "aptsim/domain.hpp"
#include "aptsim/scheduler.hpp"
#include "aptsim/workload.hpp"

namespace aptsim {

enum class SchedulerPolicy { Adaptive, FCFS, Random };
enum class CacheMode { HybridEnabled, KVOnly };

inline std::string_view to_string(SchedulerPolicy p) {
  switch (p) {
    case SchedulerPolicy::Adaptive: return "adaptive";
    case SchedulerPolicy::FCFS: return "fcfs";
    case SchedulerPolicy::Random: return "random";
  }
  return "?";
}

inline std::string_view to_string(CacheMode m) { return m == CacheMode::HybridEnabled ? "hybrid" : "kv"; }

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline SchedulerPolicy parse_policy(std::string_view s) {
  if (s == "adaptive") return SchedulerPolicy::Adaptive;
  if (s == "fcfs") return SchedulerPolicy::FCFS;
  if (s == "random") return SchedulerPolicy::Random;
  throw ConfigError("unknown scheduler policy '" + std::string(s) + "'");
}

inline CacheMode parse_cache_mode(std::string_view s) {
  if (s == "hybrid") return CacheMode::HybridEnabled;
  if (s == "kv") return CacheMode::KVOnly;
  throw ConfigError("unknown cache mode '" + std::string(s) + "'");
}

/// Named TTFT / P99 TBT targets in seconds.
inline const std::map<std::string, SloSpec>& slo_presets() {
  static const std::map<std::string, SloSpec> presets{
      {"sharegpt-13b", {1.0, 1.0}},
      {"humaneval-13b", {0.5, 0.5}},
      {"longbench-13b", {4.0, 1.0}},
  };
  return presets;
}

struct SimConfig {
  std::int64_t total_blocks = 4096;
  Tokens block_size = 16;
  CostCoefficients cost;
  SchedulerPolicy policy = SchedulerPolicy::Adaptive;
  CacheMode cache_mode = CacheMode::HybridEnabled;
  SloSpec slo;
  FallbackMode fallback = NearZeroFallback{};
  Tokens context_limit = 4096;
  std::uint64_t rng_seed = 0;
  std::int64_t max_iterations = 10'000'000;
  /// Full pool and queue invariant scan after every step (slow; for tests).
  bool check_invariants = false;

  MemoryUnits pool_units() const { return static_cast<double>(total_blocks * block_size); }
};

inline void validate(const SimConfig& c) {
  if (c.total_blocks < 1) throw ValidationError("total_blocks must be >= 1");
  if (c.block_size < 1) throw ValidationError("block_size must be >= 1");
  if (c.context_limit < 2) throw ValidationError("context_limit must be >= 2");
  if (c.max_iterations < 1) throw ValidationError("max_iterations must be >= 1");
  validate(c.cost);
  validate(c.slo);
  validate(c.fallback);
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {
inline const nlohmann::json* find(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (const auto* v = find(j, key)) {
    try {
      out = v->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
  }
}
}  // namespace detail

inline LengthDistribution parse_length_distribution(const nlohmann::json& j, Tokens context_limit,
                                                    const std::filesystem::path& base_dir) {
  LengthDistribution d;
  d.clamp_hi = context_limit;
  std::string kind = "fixed";
  detail::read(j, "dist", kind);
  if (kind == "fixed") {
    FixedLength f;
    detail::read(j, "n", f.n);
    d.kind = f;
  } else if (kind == "uniform") {
    UniformLength u;
    detail::read(j, "lo", u.lo);
    detail::read(j, "hi", u.hi);
    if (u.lo > u.hi) throw ConfigError("uniform length: lo > hi");
    d.kind = u;
  } else if (kind == "lognormal") {
    LogNormalLength l;
    detail::read(j, "mu", l.mu);
    detail::read(j, "sigma", l.sigma);
    if (const auto* med = detail::find(j, "median")) l.mu = std::log(med->get<double>());
    if (!(l.sigma > 0)) throw ConfigError("lognormal length: sigma must be > 0");
    d.kind = l;
  } else if (kind == "empirical") {
    std::string file;
    detail::read(j, "file", file);
    if (file.empty()) throw ConfigError("empirical length: 'file' is required");
    std::filesystem::path p(file);
    if (p.is_relative()) p = base_dir / p;
    d.kind = load_empirical_lengths(p);
  } else {
    throw ConfigError("unknown length distribution '" + kind + "'");
  }
  detail::read(j, "min", d.clamp_lo);
  detail::read(j, "max", d.clamp_hi);
  d.clamp_lo = std::max<Tokens>(d.clamp_lo, 1);
  d.clamp_hi = std::min(d.clamp_hi, context_limit);
  if (d.clamp_lo > d.clamp_hi) throw ConfigError("length clamp: min > max");
  return d;
}

inline ArrivalProcess parse_arrival_process(const nlohmann::json& j) {
  std::string kind = "poisson";
  detail::read(j, "process", kind);
  double rate = 1.0;
  detail::read(j, "rate", rate);
  if (!(rate > 0)) throw ConfigError("arrival rate must be > 0");
  if (kind == "poisson") return PoissonArrivals{rate};
  if (kind == "gamma") {
    double cv = 1.0;
    detail::read(j, "cv", cv);
    if (!(cv > 0)) throw ConfigError("arrival cv must be > 0");
    return GammaArrivals{rate, cv};
  }
  throw ConfigError("unknown arrival process '" + kind + "'");
}

struct ExperimentConfig {
  SimConfig sim;
  std::optional<WorkloadSpec> workload;
};

inline ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = ".") {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig out;
  SimConfig& c = out.sim;
  if (const auto* pool = detail::find(j, "pool")) {
    detail::read(*pool, "total_blocks", c.total_blocks);
    detail::read(*pool, "block_size", c.block_size);
  }
  if (const auto* cm = detail::find(j, "cost_model")) {
    detail::read(*cm, "c0", c.cost.c0);
    detail::read(*cm, "c_prefill", c.cost.c_prefill);
    detail::read(*cm, "c_decode", c.cost.c_decode);
    detail::read(*cm, "c_ctx", c.cost.c_ctx);
    detail::read(*cm, "rho", c.cost.rho);
  }
  if (const auto* s = detail::find(j, "scheduler")) {
    std::string policy = "adaptive";
    std::string cache = "hybrid";
    detail::read(*s, "policy", policy);
    detail::read(*s, "cache_mode", cache);
    c.policy = parse_policy(policy);
    c.cache_mode = parse_cache_mode(cache);
    if (const auto* fb = detail::find(*s, "fallback")) {
      std::string mode = "near_zero";
      detail::read(*fb, "mode", mode);
      if (mode == "near_zero") {
        NearZeroFallback nz;
        detail::read(*fb, "epsilon", nz.epsilon);
        c.fallback = nz;
      } else if (mode == "decay") {
        DecayFallback d;
        detail::read(*fb, "gamma", d.gamma);
        c.fallback = d;
      } else {
        throw ConfigError("unknown fallback mode '" + mode + "'");
      }
    }
  }
  if (const auto* slo = detail::find(j, "slo")) {
    if (const auto* preset = detail::find(*slo, "preset")) {
      const auto name = preset->get<std::string>();
      auto it = slo_presets().find(name);
      if (it == slo_presets().end()) throw ConfigError("unknown SLO preset '" + name + "'");
      c.slo = it->second;
    }
    detail::read(*slo, "ttft", c.slo.ttft_slo);
    detail::read(*slo, "p99_tbt", c.slo.p99_tbt_slo);
  }
  detail::read(j, "context_limit", c.context_limit);
  detail::read(j, "seed", c.rng_seed);
  detail::read(j, "max_iterations", c.max_iterations);
  try {
    validate(c);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }

  if (const auto* wl = detail::find(j, "workload")) {
    WorkloadSpec w;
    detail::read(*wl, "num_requests", w.num_requests);
    if (w.num_requests < 1) throw ConfigError("workload.num_requests must be >= 1");
    if (const auto* a = detail::find(*wl, "arrival")) w.arrivals = parse_arrival_process(*a);
    if (const auto* in = detail::find(*wl, "input")) w.input = parse_length_distribution(*in, c.context_limit, base_dir);
    if (const auto* o = detail::find(*wl, "output")) w.output = parse_length_distribution(*o, c.context_limit, base_dir);
    detail::read(*wl, "hold_request_set", w.hold_request_set);
    out.workload = w;
  }
  return out;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

}  // namespace aptsim
