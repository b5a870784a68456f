#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace npdose {

inline unsigned
default_jobs()
{
  return std::max(1u, std::thread::hardware_concurrency());
}

//! Calls fn(i) for every i in [0, count) on up to `jobs` threads. Each index
//! is handled exactly once; callers write results into per-index slots so the
//! output does not depend on scheduling. The first exception is rethrown.
template <typename Fn>
void
parallel_for(std::size_t count, unsigned jobs, Fn&& fn)
{
  jobs = std::max(1u, jobs);
  if (jobs == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i)
      fn(i);
    return;
  }

  std::atomic<std::size_t> next{ 0 };
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count)
        return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error)
          error = std::current_exception();
        next.store(count);
        return;
      }
    }
  };

  const auto n_threads =
    static_cast<unsigned>(std::min<std::size_t>(jobs, count));
  std::vector<std::thread> pool;
  pool.reserve(n_threads - 1);
  for (unsigned k = 1; k < n_threads; ++k)
    pool.emplace_back(worker);
  worker();
  for (auto& th : pool)
    th.join();
  if (error)
    std::rethrow_exception(error);
}

} // namespace npdose
