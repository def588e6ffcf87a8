#pragma once

// Slot-parallel loop: every index writes only its own outputs, so results
// are identical for any thread count.

#include <atomic>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace microdrive {

inline void parallel_for(int n, int n_threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (n_threads <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err = nullptr;
  std::mutex err_mu;
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int k = std::min(n_threads, n);
  pool.reserve(k);
  for (int i = 0; i < k; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace microdrive
