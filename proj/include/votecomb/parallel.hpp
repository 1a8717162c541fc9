// Copyright (c) 2026 The votecomb Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace votecomb {

/// Worker cap: VOTECOMB_THREADS if set, else hardware concurrency.
inline int max_threads() {
  if (const char* env = std::getenv("VOTECOMB_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(worker_id, begin, end) over a contiguous partition of [0, n).
/// Partitioning depends only on (n, threads), so any per-worker accumulation
/// reduced in worker order is deterministic for a fixed thread count.
inline void parallel_chunks(std::size_t n,
                            const std::function<void(int, std::size_t, std::size_t)>& fn,
                            int threads = -1) {
  if (threads <= 0) threads = max_threads();
  int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(threads), n));
  if (workers <= 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  std::size_t chunk = (n + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
  for (int w = 0; w < workers; ++w) {
    std::size_t begin = static_cast<std::size_t>(w) * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, w, begin, end] { fn(w, begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace votecomb
