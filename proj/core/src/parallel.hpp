#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace markovgen {

inline int worker_count(int count, int threads) { return std::clamp(threads, 1, std::max(count, 1)); }

// Runs fn(0..count-1) over worker_count(count, threads) workers with a
// static strided split: index i always runs on worker i % workers. Each
// index is handled exactly once; callers write results into per-index slots
// and reduce them in index order afterwards. The first exception thrown by
// any worker is rethrown on the calling thread.
template <typename Fn>
void parallel_for(int count, int threads, Fn&& fn) {
  const int workers = worker_count(count, threads);
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < count; i += workers) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace markovgen
