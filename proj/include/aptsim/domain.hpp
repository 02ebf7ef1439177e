// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace aptsim {

using RequestId = std::int64_t;
using Seconds = double;
using Tokens = std::int64_t;
/// One unit is one cached vector (K, V or hidden) for one token position,
/// summed over all layers.
using MemoryUnits = double;

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CacheType { None, KV, Hidden };

inline std::string_view to_string(CacheType t) {
  switch (t) {
    case CacheType::None: return "none";
    case CacheType::KV: return "kv";
    case CacheType::Hidden: return "hidden";
  }
  return "?";
}

enum class Phase { Waiting, Running, Finished };

struct RequestSpec {
  RequestId id = 0;
  /// Absent until arrivals are synthesized for a trace that did not carry them.
  std::optional<Seconds> arrival_time;
  Tokens prompt_len = 1;
  Tokens output_len = 1;

  Seconds arrival() const {
    if (!arrival_time) {
      throw ContractError("request " + std::to_string(id) + " has no arrival time");
    }
    return *arrival_time;
  }
};

inline void validate(const RequestSpec& spec) {
  if (spec.prompt_len < 1 || spec.output_len < 1) {
    throw ValidationError("request " + std::to_string(spec.id) +
                          ": prompt_len and output_len must be >= 1");
  }
  if (spec.arrival_time && *spec.arrival_time < 0) {
    throw ValidationError("request " + std::to_string(spec.id) + ": negative arrival_time");
  }
}

struct RequestState {
  RequestSpec spec;
  Phase phase = Phase::Waiting;
  CacheType cache_type = CacheType::None;
  Tokens tokens_generated = 0;
  /// prompt_len, or prompt_len + tokens_generated after a preemption or cache switch.
  Tokens effective_prompt_len = 0;
  /// Tokens currently resident in cache (0 while waiting).
  Tokens cached_tokens = 0;
  std::optional<Seconds> first_token_time;
  std::optional<Seconds> last_token_time;
  std::vector<Seconds> token_emit_times;
  /// Type requested by the last cache switch; informational, the next schedule decides.
  CacheType switch_directive = CacheType::None;
  std::int64_t preemptions = 0;
  std::int64_t switches = 0;

  explicit RequestState(RequestSpec s)
      : spec(std::move(s)), effective_prompt_len(spec.prompt_len) {}

  bool finished() const { return phase == Phase::Finished; }

  /// Baseline the pending time is measured from.
  Seconds pending_since() const {
    return last_token_time ? *last_token_time : spec.arrival();
  }
};

struct SloSpec {
  Seconds ttft_slo = 1.0;
  Seconds p99_tbt_slo = 1.0;
};

inline void validate(const SloSpec& slo) {
  if (!(slo.ttft_slo > 0) || !(slo.p99_tbt_slo > 0)) {
    throw ValidationError("SLO targets must be > 0");
  }
}

/// Memory units held by `seq_len` tokens: one K and one V vector per token
/// for KV cache, one hidden vector for hidden cache.
inline MemoryUnits token_memory_units(Tokens seq_len, CacheType cache_type) {
  if (seq_len < 0) throw ContractError("token_memory_units: negative seq_len");
  switch (cache_type) {
    case CacheType::KV: return 2.0 * static_cast<double>(seq_len);
    case CacheType::Hidden: return static_cast<double>(seq_len);
    case CacheType::None: break;
  }
  throw ContractError("token_memory_units: cache type None has no footprint");
}

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

/// K and V blocks are counted separately, so KV needs twice the hidden block count.
inline std::int64_t blocks_needed(Tokens seq_len, CacheType cache_type, Tokens block_size) {
  if (block_size < 1) throw ContractError("blocks_needed: block_size must be >= 1");
  if (seq_len < 0) throw ContractError("blocks_needed: negative seq_len");
  const std::int64_t per_kind = ceil_div(seq_len, block_size);
  switch (cache_type) {
    case CacheType::KV: return 2 * per_kind;
    case CacheType::Hidden: return per_kind;
    case CacheType::None: break;
  }
  throw ContractError("blocks_needed: cache type None has no footprint");
}

}  // namespace aptsim
