#pragma once

#include <cstdint>
#include <thread>
#include <vector>

#include "earconv/runtime.hpp"

namespace earconv {

// Runs fn(begin, end) over contiguous slices of [0, n). Each index is
// handled by exactly one slice, so writes to disjoint rows never race and
// per-element reduction order does not depend on the thread count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  if (n <= 0) {
    return;
  }
  const int workers =
      static_cast<int>(std::min<std::int64_t>(thread_count(), n));
  if (workers <= 1) {
    fn(std::int64_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int t = 1; t < workers; ++t) {
    const std::int64_t b = t * chunk;
    const std::int64_t e = std::min<std::int64_t>(n, b + chunk);
    if (b >= e) {
      break;
    }
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::int64_t{0}, std::min<std::int64_t>(n, chunk));
  for (auto& th : pool) {
    th.join();
  }
}

}  // namespace earconv
