// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

namespace aptsim::testing {

struct PlainItem {
  double p;
  double m;
};

struct Enumerated {
  double best = 0;
  /// 0 skip, 1 hidden, 2 KV per item, for the first maximizer found.
  std::vector<int> assignment;
};

/// Walks all 3^n assignments with a base-3 counter; values are recomputed from
/// scratch for each one.
inline Enumerated enumerate_all(const std::vector<PlainItem>& items, double n_queue, double rho, double budget,
                                bool hybrid = true) {
  const std::size_t n = items.size();
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= 3;
  Enumerated out;
  out.assignment.assign(n, 0);
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<int> a(n);
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<int>(c % 3);
      c /= 3;
    }
    double mem = 0;
    double val = 0;
    bool ok = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (a[i] == 1 && !hybrid) ok = false;
      if (a[i] == 1) {
        mem += items[i].m / 2;
        val += items[i].p - n_queue * rho * items[i].m;
      } else if (a[i] == 2) {
        mem += items[i].m;
        val += items[i].p;
      }
    }
    if (!ok || mem > budget + 1e-9) continue;
    if (val > out.best + 1e-12) {
      out.best = val;
      out.assignment = a;
    }
  }
  return out;
}

}  // namespace aptsim::testing
