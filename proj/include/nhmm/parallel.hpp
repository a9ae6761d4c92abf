#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace nhmm {

inline std::size_t default_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Runs fn(i) for i in [0, n). Each index must write only to its own output
// slot; combined with per-index child seeds this makes results independent of
// the thread count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t n_threads, Fn&& fn) {
  if (n == 0) return;
  if (n_threads <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  n_threads = std::min(n_threads, n);
  std::vector<std::thread> workers;
  workers.reserve(n_threads);
  for (std::size_t w = 0; w < n_threads; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += n_threads) fn(i);
    });
  }
  for (auto& t : workers) t.join();
}

}  // namespace nhmm
