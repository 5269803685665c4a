#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace crescendo {

/// Worker count: CRESCENDO_THREADS if set and positive, else the hardware
/// concurrency. Read once per process.
std::size_t thread_count();

/// Forces the worker count, ignoring the hardware and CRESCENDO_THREADS.
/// 0 restores the default.
void set_thread_count(std::size_t count);

/// Runs body(i) for every i in [0, n). Iterations are split into contiguous
/// chunks; body must only write state owned by index i, so the result does
/// not depend on the worker count.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = n * w / workers;
      const std::size_t end = n * (w + 1) / workers;
      pool.emplace_back([&, begin, end] {
        try {
          for (std::size_t i = begin; i < end; ++i) body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace crescendo
