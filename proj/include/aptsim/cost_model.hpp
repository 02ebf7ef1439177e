// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <utility>

#include "aptsim/domain.hpp"

namespace aptsim {

/// Linearized stand-in for model execution time. Every coefficient is in
/// seconds per counted quantity.
struct CostCoefficients {
  Seconds c0 = 0.02;          // per iteration
  Seconds c_prefill = 1e-4;   // per prefilled token
  Seconds c_decode = 0.002;   // per decoding request
  Seconds c_ctx = 1e-6;       // per cached context token attended
  Seconds rho = 1e-5;         // per hidden memory unit re-projected
};

inline void validate(const CostCoefficients& c) {
  if (c.c0 < 0 || c.c_prefill < 0 || c.c_decode < 0 || c.c_ctx < 0 || c.rho < 0) {
    throw ValidationError("cost coefficients must be >= 0");
  }
}

enum class IterationKind { Prefill, Decode };

inline std::string_view to_string(IterationKind k) {
  return k == IterationKind::Prefill ? "prefill" : "decode";
}

struct BatchDescriptor {
  IterationKind kind = IterationKind::Decode;
  Tokens prefill_tokens = 0;
  std::int64_t decode_requests = 0;
  Tokens context_tokens = 0;
  MemoryUnits hidden_units = 0;
};

/// Extra re-projection time for hidden cache: t = rho * m.
inline Seconds hidden_extra_cost(MemoryUnits m, Seconds rho) {
  if (m < 0) throw ContractError("hidden_extra_cost: negative memory");
  return rho * m;
}

inline Seconds iteration_latency(const BatchDescriptor& b, const CostCoefficients& c) {
  if (b.prefill_tokens < 0 || b.decode_requests < 0 || b.context_tokens < 0 || b.hidden_units < 0) {
    throw ContractError("iteration_latency: negative descriptor field");
  }
  if (b.kind == IterationKind::Prefill && b.decode_requests != 0) {
    throw ContractError("iteration_latency: prefill batch with decode requests");
  }
  if (b.kind == IterationKind::Decode && b.prefill_tokens != 0) {
    throw ContractError("iteration_latency: decode batch with prefill tokens");
  }
  return c.c0 + c.c_prefill * static_cast<double>(b.prefill_tokens) +
         c.c_decode * static_cast<double>(b.decode_requests) +
         c.c_ctx * static_cast<double>(b.context_tokens) + hidden_extra_cost(b.hidden_units, c.rho);
}

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Least-squares slope through the origin over (memory units, measured extra seconds).
inline Seconds calibrate_rho(std::span<const std::pair<MemoryUnits, Seconds>> samples) {
  if (samples.size() < 2) throw CalibrationError("calibrate_rho: need at least 2 samples");
  double sum_mt = 0;
  double sum_mm = 0;
  bool all_equal = true;
  for (const auto& [m, t] : samples) {
    if (m < 0) throw CalibrationError("calibrate_rho: negative memory sample");
    sum_mt += m * t;
    sum_mm += m * m;
    if (m != samples.front().first) all_equal = false;
  }
  if (all_equal || sum_mm == 0) {
    throw CalibrationError("calibrate_rho: samples must span at least two distinct memory sizes");
  }
  return sum_mt / sum_mm;
}

}  // namespace aptsim
