#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace otr {

// Process-wide worker count used by parallel_for. Defaults to the hardware
// concurrency; the CLI sets it from --threads.
void set_thread_count(unsigned count);
unsigned thread_count();

namespace detail {
bool& in_parallel_region();
}

// Runs body(i) for i in [0, count). Work items are claimed dynamically, so
// body must write its result by index; nested calls run serially. The first
// exception thrown by any item is rethrown after all workers join.
template <typename Body>
void parallel_for(std::size_t count, Body&& body) {
  const unsigned workers = std::min<std::size_t>(thread_count(), count);
  if (workers <= 1 || detail::in_parallel_region()) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    detail::in_parallel_region() = true;
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    }
    detail::in_parallel_region() = false;
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace otr
