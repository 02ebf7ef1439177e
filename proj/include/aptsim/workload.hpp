// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include "aptsim/domain.hpp"

namespace aptsim {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Length distributions

struct FixedLength {
  Tokens n = 1;
};
struct UniformLength {
  Tokens lo = 1;
  Tokens hi = 1;
};
struct LogNormalLength {
  double mu = 0;
  double sigma = 1;
};
struct EmpiricalLength {
  std::vector<Tokens> values;
};

struct LengthDistribution {
  std::variant<FixedLength, UniformLength, LogNormalLength, EmpiricalLength> kind = FixedLength{};
  Tokens clamp_lo = 1;
  Tokens clamp_hi = 1 << 20;

  template <class Rng>
  Tokens sample(Rng& rng) const {
    Tokens v = std::visit(
        [&](const auto& d) -> Tokens {
          using D = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<D, FixedLength>) {
            return d.n;
          } else if constexpr (std::is_same_v<D, UniformLength>) {
            return std::uniform_int_distribution<Tokens>(d.lo, d.hi)(rng);
          } else if constexpr (std::is_same_v<D, LogNormalLength>) {
            return static_cast<Tokens>(std::llround(std::lognormal_distribution<double>(d.mu, d.sigma)(rng)));
          } else {
            if (d.values.empty()) throw ValidationError("empirical length distribution is empty");
            std::uniform_int_distribution<std::size_t> pick(0, d.values.size() - 1);
            return d.values[pick(rng)];
          }
        },
        kind);
    return std::clamp(v, clamp_lo, clamp_hi);
  }
};

/// One length per line; blank lines and '#' comments ignored.
inline EmpiricalLength load_empirical_lengths(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open length file " + path.string());
  EmpiricalLength out;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    Tokens v = 0;
    auto [p, ec] = std::from_chars(line.data(), line.data() + line.size(), v);
    if (ec != std::errc() || p != line.data() + line.size()) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": not an integer length");
    }
    if (v < 1) throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": length must be >= 1");
    out.values.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Arrival processes

struct PoissonArrivals {
  double rate = 1.0;
};
/// Gamma-distributed gaps with shape 1/cv^2 and scale cv^2/rate: mean 1/rate,
/// coefficient of variation cv.
struct GammaArrivals {
  double rate = 1.0;
  double cv = 1.0;
};
using ArrivalProcess = std::variant<PoissonArrivals, GammaArrivals>;

inline double arrival_rate(const ArrivalProcess& p) {
  return std::visit([](const auto& a) { return a.rate; }, p);
}

inline ArrivalProcess with_rate(ArrivalProcess p, double rate) {
  std::visit([&](auto& a) { a.rate = rate; }, p);
  return p;
}

inline std::vector<Seconds> synthesize_arrivals(std::size_t n, const ArrivalProcess& process,
                                                std::uint64_t seed) {
  if (n < 1) throw ContractError("synthesize_arrivals: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<Seconds> out;
  out.reserve(n);
  auto draw_all = [&](auto&& gap) {
    Seconds t = 0;
    while (out.size() < n) {
      // Very bursty gamma draws gaps below the clock's resolution (or exactly
      // 0); advance by one ulp instead of rejecting, which would bias the CV.
      t = std::max(t + gap(), std::nextafter(t, std::numeric_limits<Seconds>::infinity()));
      out.push_back(t);
    }
  };
  std::visit(
      [&](const auto& a) {
        using A = std::decay_t<decltype(a)>;
        if (!(a.rate > 0)) throw ValidationError("arrival rate must be > 0");
        if constexpr (std::is_same_v<A, PoissonArrivals>) {
          std::exponential_distribution<double> d(a.rate);
          draw_all([&] { return d(rng); });
        } else {
          if (!(a.cv > 0)) throw ValidationError("arrival cv must be > 0");
          const double shape = 1.0 / (a.cv * a.cv);
          const double scale = a.cv * a.cv / a.rate;
          std::gamma_distribution<double> d(shape, scale);
          draw_all([&] { return d(rng); });
        }
      },
      process);
  return out;
}

inline std::vector<std::pair<Tokens, Tokens>> sample_lengths(std::size_t n, const LengthDistribution& input,
                                                             const LengthDistribution& output,
                                                             std::uint64_t seed) {
  if (n < 1) throw ContractError("sample_lengths: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<std::pair<Tokens, Tokens>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tokens p = input.sample(rng);
    const Tokens o = output.sample(rng);
    out.emplace_back(p, o);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Workloads

struct Workload {
  std::vector<RequestSpec> requests;

  bool empty() const { return requests.empty(); }
  std::size_t size() const { return requests.size(); }
  bool has_arrivals() const {
    return std::all_of(requests.begin(), requests.end(), [](const auto& r) { return r.arrival_time.has_value(); });
  }
};

inline void validate(const Workload& w) {
  std::unordered_set<RequestId> ids;
  for (const auto& r : w.requests) {
    validate(r);
    if (!ids.insert(r.id).second) throw ValidationError("duplicate request id " + std::to_string(r.id));
  }
}

/// Stable sort by arrival; ties keep input order.
inline void sort_by_arrival(Workload& w) {
  std::stable_sort(w.requests.begin(), w.requests.end(),
                   [](const RequestSpec& a, const RequestSpec& b) { return a.arrival() < b.arrival(); });
}

/// Fills in arrival times for every request that lacks one, in row order.
inline void assign_arrivals(Workload& w, const ArrivalProcess& process, std::uint64_t seed) {
  std::size_t missing = 0;
  for (const auto& r : w.requests) missing += !r.arrival_time.has_value();
  if (missing == 0) return;
  auto times = synthesize_arrivals(missing, process, seed);
  std::size_t k = 0;
  for (auto& r : w.requests) {
    if (!r.arrival_time) r.arrival_time = times[k++];
  }
  sort_by_arrival(w);
}

struct WorkloadSpec {
  std::size_t num_requests = 1000;
  ArrivalProcess arrivals = PoissonArrivals{1.0};
  LengthDistribution input;
  LengthDistribution output;
  /// When false the request lengths are redrawn for every arrival process
  /// (rate, cv); when true the same request set is reused across them.
  bool hold_request_set = true;
};

namespace detail {
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}
}  // namespace detail

inline Workload generate_workload(const WorkloadSpec& spec, std::uint64_t seed) {
  std::uint64_t length_salt = 1;
  if (!spec.hold_request_set) {
    length_salt = std::visit(
        [](const auto& a) {
          using A = std::decay_t<decltype(a)>;
          double cv = 1.0;
          if constexpr (std::is_same_v<A, GammaArrivals>) cv = a.cv;
          return std::hash<double>{}(a.rate) ^ (std::hash<double>{}(cv) << 1) ^ 0x9e3779b97f4a7c15ULL;
        },
        spec.arrivals);
  }
  auto lengths = sample_lengths(spec.num_requests, spec.input, spec.output, detail::mix_seed(seed, length_salt));
  auto times = synthesize_arrivals(spec.num_requests, spec.arrivals, detail::mix_seed(seed, 2));
  Workload w;
  w.requests.reserve(spec.num_requests);
  for (std::size_t i = 0; i < spec.num_requests; ++i) {
    w.requests.push_back({static_cast<RequestId>(i), times[i], lengths[i].first, lengths[i].second});
  }
  return w;
}

// ---------------------------------------------------------------------------
// Trace CSV: header `id,arrival_time,prompt_len,output_len`, arrival_time may be empty.

inline constexpr std::string_view kTraceHeader = "id,arrival_time,prompt_len,output_len";

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}
}  // namespace detail

inline Workload parse_trace(std::istream& in, const std::string& name = "<trace>") {
  Workload w;
  std::string line;
  int lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (line != kTraceHeader) {
        throw ParseError(name + ":" + std::to_string(lineno) + ": expected header '" + std::string(kTraceHeader) + "'");
      }
      continue;
    }
    auto fields = detail::split_csv(line);
    auto fail = [&](const std::string& why) {
      throw ParseError(name + ":" + std::to_string(lineno) + ": " + why);
    };
    if (fields.size() != 4) fail("expected 4 fields, got " + std::to_string(fields.size()));
    RequestSpec r;
    if (!detail::parse_number(fields[0], r.id)) fail("bad id '" + fields[0] + "'");
    if (!fields[1].empty()) {
      double t = 0;
      if (!detail::parse_number(fields[1], t) || !std::isfinite(t)) fail("bad arrival_time '" + fields[1] + "'");
      r.arrival_time = t;
    }
    if (!detail::parse_number(fields[2], r.prompt_len)) fail("bad prompt_len '" + fields[2] + "'");
    if (!detail::parse_number(fields[3], r.output_len)) fail("bad output_len '" + fields[3] + "'");
    try {
      validate(r);
    } catch (const ValidationError& e) {
      throw ValidationError(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
    w.requests.push_back(r);
  }
  validate(w);
  if (w.has_arrivals()) sort_by_arrival(w);
  return w;
}

inline Workload load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trace " + path.string());
  return parse_trace(in, path.string());
}

inline void write_trace(std::ostream& out, const Workload& w) {
  out << kTraceHeader << '\n';
  out.precision(17);
  for (const auto& r : w.requests) {
    out << r.id << ',';
    if (r.arrival_time) out << *r.arrival_time;
    out << ',' << r.prompt_len << ',' << r.output_len << '\n';
  }
}

}  // namespace aptsim
