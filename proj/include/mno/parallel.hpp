#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace mno {

// Worker cap from MNO_THREADS; defaults to 1 so runs are single-threaded
// unless explicitly widened.
inline int worker_threads() {
  const char* env = std::getenv("MNO_THREADS");
  if (!env) return 1;
  int n = std::atoi(env);
  if (n < 1) return 1;
  unsigned hw = std::thread::hardware_concurrency();
  if (hw > 0 && n > static_cast<int>(hw)) n = static_cast<int>(hw);
  return n;
}

// Static range split. Each index is processed exactly once; work items must
// write to disjoint outputs and derive their own RNG streams, so the result
// is identical at any thread count.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn) {
  int workers = worker_threads();
  if (workers <= 1 || n < 2) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int64_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mno
