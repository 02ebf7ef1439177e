// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "aptsim/domain.hpp"
#include "aptsim/sim_engine.hpp"

namespace aptsim {

struct RequestMetrics {
  RequestId id = 0;
  Seconds arrival = 0;
  Seconds ttft = 0;
  /// Gaps between consecutive token emissions; the arrival-to-first-token
  /// interval is not part of it.
  std::vector<Seconds> tbt_series;
  Seconds p99_tbt = 0;
  bool ttft_met = false;
  bool tbt_met = false;
  bool slo_met = false;
};

/// Nearest-rank percentile: the ceil(q/100 * n)-th smallest sample; 0 for no samples.
inline double percentile_nearest_rank(std::vector<double> samples, double q) {
  if (samples.empty()) return 0.0;
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, samples.size());
  return samples[rank - 1];
}

inline RequestMetrics compute_request_metrics(const RequestRecord& r, const SloSpec& slo) {
  if (!r.finished || !r.first_token_time ||
      static_cast<Tokens>(r.token_emit_times.size()) != r.spec.output_len) {
    throw ContractError("compute_metrics: request " + std::to_string(r.spec.id) + " did not finish");
  }
  RequestMetrics m;
  m.id = r.spec.id;
  m.arrival = r.spec.arrival();
  m.ttft = *r.first_token_time - m.arrival;
  m.tbt_series.reserve(r.token_emit_times.size());
  for (std::size_t i = 1; i < r.token_emit_times.size(); ++i) {
    m.tbt_series.push_back(r.token_emit_times[i] - r.token_emit_times[i - 1]);
  }
  m.p99_tbt = percentile_nearest_rank(m.tbt_series, 99.0);
  m.ttft_met = m.ttft <= slo.ttft_slo;
  m.tbt_met = m.p99_tbt <= slo.p99_tbt_slo;
  m.slo_met = m.ttft_met && m.tbt_met;
  return m;
}

inline std::vector<RequestMetrics> compute_metrics(const SimResult& result, const SloSpec& slo) {
  std::vector<RequestMetrics> out;
  out.reserve(result.requests.size());
  for (const auto& r : result.requests) out.push_back(compute_request_metrics(r, slo));
  return out;
}

struct Attainment {
  double joint = 0;
  double ttft_only = 0;
  double tbt_only = 0;
};

/// Percentage of requests meeting both SLOs.
inline double slo_attainment(std::span<const RequestMetrics> metrics) {
  if (metrics.empty()) throw ContractError("slo_attainment: no requests");
  const auto met = std::count_if(metrics.begin(), metrics.end(), [](const auto& m) { return m.slo_met; });
  return 100.0 * static_cast<double>(met) / static_cast<double>(metrics.size());
}

inline Attainment attainment_breakdown(std::span<const RequestMetrics> metrics) {
  if (metrics.empty()) throw ContractError("attainment_breakdown: no requests");
  const double n = static_cast<double>(metrics.size());
  Attainment a;
  a.joint = slo_attainment(metrics);
  a.ttft_only = 100.0 * static_cast<double>(std::count_if(metrics.begin(), metrics.end(),
                                                          [](const auto& m) { return m.ttft_met; })) / n;
  a.tbt_only = 100.0 * static_cast<double>(std::count_if(metrics.begin(), metrics.end(),
                                                         [](const auto& m) { return m.tbt_met; })) / n;
  return a;
}

struct SweepPoint {
  double rate = 0;
  /// Means over seeds, in percent.
  Attainment attainment;
  std::vector<double> per_seed_joint;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<std::pair<double, double>> effective_throughput;  // (threshold, rate)
};

/// Largest tested rate whose joint attainment reaches `threshold`; 0 if none does.
inline double effective_throughput(const SweepResult& sweep, double threshold) {
  if (sweep.points.empty()) throw ContractError("effective_throughput: empty sweep");
  double best = 0;
  for (const auto& p : sweep.points) {
    if (p.attainment.joint >= threshold) best = std::max(best, p.rate);
  }
  return best;
}

struct CdfPoint {
  double value = 0;
  double cumulative_fraction = 0;
};

/// Empirical CDF; above `max_points` samples it is reduced to an evenly spaced
/// nearest-rank quantile grid.
inline std::vector<CdfPoint> empirical_cdf(std::vector<double> samples, std::size_t max_points = 2000) {
  std::vector<CdfPoint> out;
  if (samples.empty()) return out;
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  if (n <= max_points) {
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back({samples[i], static_cast<double>(i + 1) / static_cast<double>(n)});
    }
    return out;
  }
  out.reserve(max_points);
  for (std::size_t k = 1; k <= max_points; ++k) {
    const double f = static_cast<double>(k) / static_cast<double>(max_points);
    auto rank = static_cast<std::size_t>(std::ceil(f * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    out.push_back({samples[rank - 1], f});
  }
  return out;
}

}  // namespace aptsim
