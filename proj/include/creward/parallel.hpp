#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace creward {

/// Runs fn(i) for i in [0, count) on at most `workers` threads. Results must
/// be written to per-index slots by the callee; the first exception thrown by
/// any task is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

/// Enforces a minimum spacing between successive acquisitions across threads.
class RateLimiter {
 public:
  explicit RateLimiter(std::chrono::microseconds min_interval) : interval_(min_interval) {}

  void acquire() {
    if (interval_.count() <= 0) return;
    std::chrono::steady_clock::time_point slot;
    {
      std::lock_guard lock(mutex_);
      const auto now = std::chrono::steady_clock::now();
      slot = std::max(now, next_);
      next_ = slot + interval_;
    }
    std::this_thread::sleep_until(slot);
  }

 private:
  std::chrono::microseconds interval_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point next_{};
};

}  // namespace creward
