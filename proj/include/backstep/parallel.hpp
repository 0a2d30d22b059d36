#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace backstep {

inline int resolve_workers(int workers) {
  if (workers > 0) return workers;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Splits [0, count) into contiguous chunks; fn(begin, end, worker).
template <class Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  workers = std::min<int>(resolve_workers(workers), static_cast<int>(std::max<std::size_t>(count, 1)));
  if (workers <= 1) {
    fn(std::size_t{0}, count, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex mu;
  const std::size_t chunk = (count + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::size_t b = std::min(count, w * chunk), e = std::min(count, b + chunk);
    pool.emplace_back([&, b, e, w] {
      try {
        fn(b, e, w);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace backstep
