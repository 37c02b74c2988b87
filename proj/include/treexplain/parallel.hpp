#pragma once

// Deterministic fork-join helper. Work items write into preallocated slots
// indexed by item, so results never depend on the worker count; callers
// reduce serially afterwards.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace treexplain {

// Applies fn(i) for i in [0, n). jobs <= 1 runs inline on the calling thread.
// The first exception thrown by any worker is rethrown after all join.
inline void parallel_for(std::size_t n, unsigned jobs,
                         const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  if (jobs <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  unsigned workers = std::min<std::size_t>(jobs, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        // Strided assignment keeps the item -> worker map independent of
        // timing while spreading uneven work.
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace treexplain
