#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace normkit {

// Worker count: NORMKIT_THREADS if set and positive, else the hardware count.
inline int thread_count() {
  if (const char* env = std::getenv("NORMKIT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n). Tasks must write disjoint outputs; each task's
// own arithmetic is sequential, so results do not depend on the thread count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn, std::int64_t min_per_thread = 1) {
  const std::int64_t workers =
      std::min<std::int64_t>(thread_count(), n / std::max<std::int64_t>(1, min_per_thread));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (std::int64_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::int64_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace normkit
