// Copyright liplab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace liplab {

// Worker cap: LIPLAB_THREADS env var, defaulting to the machine cores.
inline std::size_t thread_budget() {
  static const std::size_t budget = [] {
    if (const char* env = std::getenv("LIPLAB_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<std::size_t>(hw ? hw : 1);
  }();
  return budget;
}

// Partitions [0,n) into contiguous chunks, one worker per chunk. Results
// stay deterministic as long as workers write disjoint outputs; any
// reduction over chunk results must happen in fixed chunk order.
inline void parallel_for(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& body) {
  if (n == 0) return;
  const std::size_t workers = std::min(thread_budget(), n);
  if (workers <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace liplab
