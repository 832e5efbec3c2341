#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace emc {

/// Worker count from EMCONSIST_THREADS (default 1). Results never depend on it: callers give
/// each task its own output slot and reduce in task order.
inline int worker_threads() {
  if (const char* env = std::getenv("EMCONSIST_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
    if (std::string(env) == "auto") return std::max(1u, std::thread::hardware_concurrency());
  }
  return 1;
}

/// Runs fn(i) for i in [0, n), tasks dealt round-robin to `threads` workers.
template <class Fn>
void parallel_for(int n, Fn&& fn, int threads = worker_threads()) {
  threads = std::clamp(threads, 1, std::max(1, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      try {
        for (int i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace emc
