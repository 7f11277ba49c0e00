#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace qbipw {

// Runs fn(i) for i in [0, count) on up to n_threads workers. Results must be
// written to preallocated per-index slots by the caller; the work assignment
// is an atomic counter, so output is identical for any worker count as long
// as fn(i) depends only on i. The first exception thrown by any worker is
// rethrown on the calling thread after all workers finish.
inline void parallel_for(std::size_t count, int n_threads,
                         const std::function<void(std::size_t)>& fn) {
  if (n_threads < 1) n_threads = 1;
  if (count == 0) return;
  if (n_threads == 1 || count == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  const std::size_t n = std::min<std::size_t>(n_threads, count);
  pool.reserve(n);
  for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace qbipw
