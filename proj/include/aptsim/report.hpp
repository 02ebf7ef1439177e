// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <charconv>
#include <ostream>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "aptsim/experiment.hpp"
#include "aptsim/metrics.hpp"
#include "aptsim/sim_engine.hpp"

namespace aptsim {

inline constexpr int kSchemaVersion = 1;

/// Shortest representation that round-trips.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [p, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), p);
}

// id,arrival,ttft,p99_tbt,slo_met
inline void write_metrics_csv(std::ostream& out, std::span<const RequestMetrics> metrics) {
  out << "id,arrival,ttft,p99_tbt,slo_met\n";
  for (const auto& m : metrics) {
    out << m.id << ',' << format_double(m.arrival) << ',' << format_double(m.ttft) << ','
        << format_double(m.p99_tbt) << ',' << (m.slo_met ? 1 : 0) << '\n';
  }
}

// value,cumulative_fraction
inline void write_cdf_csv(std::ostream& out, std::span<const CdfPoint> cdf) {
  out << "value,cumulative_fraction\n";
  for (const auto& p : cdf) out << format_double(p.value) << ',' << format_double(p.cumulative_fraction) << '\n';
}

/// One JSON object per line.
inline void write_iteration_log(std::ostream& out, std::span<const IterationLog> logs) {
  for (const auto& l : logs) out << to_json(l).dump() << '\n';
}

inline nlohmann::json attainment_json(const Attainment& a) {
  return {{"joint", a.joint}, {"ttft_only", a.ttft_only}, {"tbt_only", a.tbt_only}};
}

inline nlohmann::json sim_result_json(const SimResult& r) {
  nlohmann::json reqs = nlohmann::json::array();
  for (const auto& q : r.requests) {
    reqs.push_back({{"id", q.spec.id},
                    {"arrival", q.spec.arrival()},
                    {"prompt_len", q.spec.prompt_len},
                    {"output_len", q.spec.output_len},
                    {"first_token_time", q.first_token_time ? nlohmann::json(*q.first_token_time) : nlohmann::json()},
                    {"token_emit_times", q.token_emit_times},
                    {"preemptions", q.preemptions},
                    {"switches", q.switches},
                    {"finished", q.finished}});
  }
  return {{"schema_version", kSchemaVersion},
          {"makespan", r.makespan},
          {"iterations", r.iterations.size()},
          {"requests", std::move(reqs)}};
}

inline nlohmann::json summary_json(const SimResult& r, std::span<const RequestMetrics> metrics, const SloSpec& slo) {
  const auto a = attainment_breakdown(metrics);
  std::int64_t preemptions = 0;
  std::int64_t switches = 0;
  for (const auto& q : r.requests) {
    preemptions += q.preemptions;
    switches += q.switches;
  }
  std::vector<double> ttft;
  std::vector<double> p99;
  for (const auto& m : metrics) {
    ttft.push_back(m.ttft);
    p99.push_back(m.p99_tbt);
  }
  return {{"schema_version", kSchemaVersion},
          {"requests", metrics.size()},
          {"slo", {{"ttft", slo.ttft_slo}, {"p99_tbt", slo.p99_tbt_slo}}},
          {"attainment", attainment_json(a)},
          {"ttft_p50", percentile_nearest_rank(ttft, 50)},
          {"ttft_p99", percentile_nearest_rank(ttft, 99)},
          {"p99_tbt_p50", percentile_nearest_rank(p99, 50)},
          {"makespan", r.makespan},
          {"iterations", r.iterations.size()},
          {"preemptions", preemptions},
          {"switches", switches}};
}

inline nlohmann::json sweep_json(const SweepOutput& s) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : s.result.points) {
    points.push_back({{"rate", p.rate}, {"attainment", attainment_json(p.attainment)}, {"per_seed", p.per_seed_joint}});
  }
  nlohmann::json eff = nlohmann::json::array();
  for (const auto& [th, rate] : s.result.effective_throughput) eff.push_back({{"threshold", th}, {"rate", rate}});
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& [rate, seed, msg] : s.failures) failures.push_back({{"rate", rate}, {"seed", seed}, {"error", msg}});
  return {{"schema_version", kSchemaVersion},
          {"points", std::move(points)},
          {"effective_throughput", std::move(eff)},
          {"failures", std::move(failures)}};
}

// policy,cache,attainment,ttft_attainment,tbt_attainment,preemptions,switches,errors
inline void write_compare_csv(std::ostream& out, std::span<const CompareRow> rows) {
  out << "policy,cache,attainment,ttft_attainment,tbt_attainment,preemptions,switches,errors\n";
  for (const auto& r : rows) {
    out << to_string(r.policy) << ',' << to_string(r.cache) << ',' << format_double(r.attainment.joint) << ','
        << format_double(r.attainment.ttft_only) << ',' << format_double(r.attainment.tbt_only) << ','
        << r.preemptions << ',' << r.switches << ',' << r.errors.size() << '\n';
  }
}

}  // namespace aptsim
