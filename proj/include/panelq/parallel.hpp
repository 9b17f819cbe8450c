#pragma once

#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace panelq {

// Runs body(i) for i in [0, n). Each body call must write only its own output
// slot; callers reduce the slots sequentially afterwards, so results are
// byte-identical for every thread count.
template <class F>
void parallel_for(long n, int threads, F&& body) {
  if (threads <= 1 || n <= 1) {
    for (long i = 0; i < n; ++i) body(i);
    return;
  }
  const int k = static_cast<int>(std::min<long>(threads, n));
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(k);
  for (int w = 0; w < k; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (long i = w; i < n; i += k) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace panelq
