// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aptsim/aptsim.hpp"

namespace fs = std::filesystem;
using namespace aptsim;

namespace {

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

std::string rate_tag(double rate) { return format_double(rate); }

int cmd_run(const std::string& config_path, const std::string& trace_path, const fs::path& out_dir) {
  const auto cfg = load_config(config_path);
  Workload w = load_trace(trace_path);
  if (w.empty()) throw ValidationError("trace " + trace_path + " holds no requests");
  if (!w.has_arrivals()) {
    if (!cfg.workload) {
      throw ConfigError("trace lacks arrival times and the config has no workload.arrival to synthesize them");
    }
    assign_arrivals(w, cfg.workload->arrivals, cfg.sim.rng_seed);
  }
  const auto result = run(w, cfg.sim);
  const auto metrics = compute_metrics(result, cfg.sim.slo);

  fs::create_directories(out_dir);
  {
    auto out = open_out(out_dir / "metrics.csv");
    write_metrics_csv(out, metrics);
  }
  {
    auto out = open_out(out_dir / "iterations.ndjson");
    write_iteration_log(out, result.iterations);
  }
  {
    auto out = open_out(out_dir / "result.json");
    out << sim_result_json(result).dump() << '\n';
  }
  const auto summary = summary_json(result, metrics, cfg.sim.slo);
  {
    auto out = open_out(out_dir / "summary.json");
    out << summary.dump(2) << '\n';
  }
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::vector<double>& rates, const std::vector<std::uint64_t>& seeds,
              const std::vector<double>& thresholds, const fs::path& out_dir, unsigned threads) {
  const auto cfg = load_config(config_path);
  if (!cfg.workload) throw ConfigError("sweep needs a 'workload' section in the config");
  SweepOptions opts;
  opts.rates = rates;
  opts.seeds = seeds;
  opts.thresholds = thresholds;
  opts.threads = threads;
  const auto sweep = run_sweep(cfg.sim, *cfg.workload, opts);

  fs::create_directories(out_dir);
  {
    auto out = open_out(out_dir / "sweep.json");
    out << sweep_json(sweep).dump(2) << '\n';
  }
  for (std::size_t i = 0; i < sweep.result.points.size(); ++i) {
    const auto tag = rate_tag(sweep.result.points[i].rate);
    auto ttft = open_out(out_dir / ("cdf_ttft_rate" + tag + ".csv"));
    write_cdf_csv(ttft, empirical_cdf(sweep.ttft_samples[i]));
    auto tbt = open_out(out_dir / ("cdf_tbt_rate" + tag + ".csv"));
    write_cdf_csv(tbt, empirical_cdf(sweep.tbt_samples[i]));
  }
  std::cout << "rate,attainment,ttft_attainment,tbt_attainment\n";
  for (const auto& p : sweep.result.points) {
    std::cout << format_double(p.rate) << ',' << format_double(p.attainment.joint) << ','
              << format_double(p.attainment.ttft_only) << ',' << format_double(p.attainment.tbt_only) << '\n';
  }
  for (const auto& [th, rate] : sweep.result.effective_throughput) {
    std::cout << "effective_throughput@" << format_double(th) << "% = " << format_double(rate) << " req/s\n";
  }
  for (const auto& [rate, seed, msg] : sweep.failures) {
    std::cerr << "point rate=" << format_double(rate) << " seed=" << seed << " failed: " << msg << '\n';
  }
  return sweep.failures.empty() ? 0 : 3;
}

// Samples CSV: header `memory_units,extra_seconds`.
int cmd_calibrate(const std::string& samples_path) {
  std::ifstream in(samples_path);
  if (!in) throw ParseError("cannot open samples " + samples_path);
  std::vector<std::pair<MemoryUnits, Seconds>> samples;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line == "memory_units,extra_seconds") continue;
    const auto comma = line.find(',');
    double m = 0;
    double t = 0;
    if (comma == std::string::npos || !detail::parse_number(line.substr(0, comma), m) ||
        !detail::parse_number(line.substr(comma + 1), t)) {
      throw ParseError(samples_path + ":" + std::to_string(lineno) + ": expected 'memory_units,extra_seconds'");
    }
    samples.emplace_back(m, t);
  }
  std::cout << format_double(calibrate_rho(samples)) << '\n';
  return 0;
}

int cmd_compare(const std::string& config_path, const std::vector<std::string>& policy_names,
                const std::vector<std::string>& cache_names, const std::string& trace_path,
                const std::vector<std::uint64_t>& seeds, const fs::path& out_dir, unsigned threads) {
  const auto cfg = load_config(config_path);
  std::vector<SchedulerPolicy> policies;
  for (const auto& p : policy_names) policies.push_back(parse_policy(p));
  std::vector<CacheMode> caches;
  for (const auto& c : cache_names) caches.push_back(parse_cache_mode(c));

  std::vector<Workload> workloads;
  for (auto seed : seeds) {
    if (!trace_path.empty()) {
      Workload w = load_trace(trace_path);
      if (!w.has_arrivals()) {
        if (!cfg.workload) throw ConfigError("trace lacks arrival times and the config has no workload section");
        assign_arrivals(w, cfg.workload->arrivals, seed);
      }
      workloads.push_back(std::move(w));
    } else {
      if (!cfg.workload) throw ConfigError("compare needs --trace or a 'workload' section in the config");
      workloads.push_back(generate_workload(*cfg.workload, seed));
    }
  }
  const auto rows = run_compare(cfg.sim, workloads, seeds, policies, caches, threads);
  std::ostringstream csv;
  write_compare_csv(csv, rows);
  std::cout << csv.str();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    auto out = open_out(out_dir / "compare.csv");
    out << csv.str();
  }
  bool failed = false;
  for (const auto& r : rows) {
    for (const auto& e : r.errors) {
      std::cerr << to_string(r.policy) << '/' << to_string(r.cache) << ": " << e << '\n';
      failed = true;
    }
  }
  return failed ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"aptsim: hybrid-cache LLM serving scheduler simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string trace_path;
  std::string out_dir = "out";
  unsigned threads = 0;

  auto* run_cmd = app.add_subcommand("run", "Simulate one trace and write metrics, iteration log and summary");
  run_cmd->add_option("--config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--trace", trace_path, "Trace CSV (id,arrival_time,prompt_len,output_len)")
      ->required()
      ->check(CLI::ExistingFile);
  run_cmd->add_option("--out", out_dir, "Output directory")->required();

  std::vector<double> rates;
  std::vector<std::uint64_t> seeds{0};
  std::vector<double> thresholds{90.0};
  auto* sweep_cmd = app.add_subcommand("sweep", "Request-rate sweep with SLO attainment and effective throughput");
  sweep_cmd->add_option("--config", config_path, "JSON config with a workload section")
      ->required()
      ->check(CLI::ExistingFile);
  sweep_cmd->add_option("--rates", rates, "Comma-separated request rates (req/s)")->required()->delimiter(',');
  sweep_cmd->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');
  sweep_cmd->add_option("--threshold", thresholds, "Comma-separated attainment thresholds (%)")->delimiter(',');
  sweep_cmd->add_option("--out", out_dir, "Output directory");
  sweep_cmd->add_option("--threads", threads, "Worker threads (0 = hardware concurrency)");

  std::string samples_path;
  auto* cal_cmd = app.add_subcommand("calibrate", "Fit rho from (memory_units, extra_seconds) samples");
  cal_cmd->add_option("--samples", samples_path, "Samples CSV")->required()->check(CLI::ExistingFile);

  std::vector<std::string> policies{"adaptive", "fcfs", "random"};
  std::vector<std::string> caches{"hybrid", "kv"};
  std::string compare_out;
  auto* cmp_cmd = app.add_subcommand("compare", "Policy x cache-mode ablation grid");
  cmp_cmd->add_option("--config", config_path, "JSON config")->required()->check(CLI::ExistingFile);
  cmp_cmd->add_option("--policies", policies, "adaptive,fcfs,random")->delimiter(',');
  cmp_cmd->add_option("--cache", caches, "hybrid,kv")->delimiter(',');
  cmp_cmd->add_option("--trace", trace_path, "Trace CSV instead of the config workload")->check(CLI::ExistingFile);
  cmp_cmd->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');
  cmp_cmd->add_option("--out", compare_out, "Also write compare.csv here");
  cmp_cmd->add_option("--threads", threads, "Worker threads (0 = hardware concurrency)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return cmd_run(config_path, trace_path, out_dir);
    if (*sweep_cmd) return cmd_sweep(config_path, rates, seeds, thresholds, out_dir, threads);
    if (*cal_cmd) return cmd_calibrate(samples_path);
    if (*cmp_cmd) return cmd_compare(config_path, policies, caches, trace_path, seeds, compare_out, threads);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
