#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace siap {

/// Process-wide cap on worker threads (the CLI's --threads). 1 = serial.
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{1};
  return cap;
}

inline bool& inside_parallel_region() {
  thread_local bool inside = false;
  return inside;
}

/// Runs body(i) for i in [0, count). Each index must write only to its own
/// output slot; callers reduce the slots in index order afterwards, which
/// keeps results independent of the thread count.
template <typename Body>
void parallel_for(std::size_t count, Body&& body) {
  const auto workers = static_cast<std::size_t>(std::max(1, thread_cap().load()));
  // Nested regions run serially on the calling worker.
  if (workers <= 1 || count <= 1 || inside_parallel_region()) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    inside_parallel_region() = true;
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n_threads = std::min(workers, count);
  pool.reserve(n_threads);
  for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace siap
