#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace audience {

/// Number of workers to use: 0 resolves to hardware concurrency.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs fn(begin, end) over fixed-size chunks of [0, n). Chunk boundaries
/// depend only on (n, grain), never on thread scheduling, so any output
/// written per index is identical for every thread count. Workers pull
/// chunks from an atomic counter. Exceptions are captured and rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int threads, std::size_t grain, Fn&& fn) {
  if (n == 0) return;
  threads = resolve_threads(threads);
  if (grain == 0) grain = 1;
  const std::size_t chunks = (n + grain - 1) / grain;
  if (threads <= 1 || chunks <= 1) {
    fn(static_cast<std::size_t>(0), n);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto worker = [&] {
    for (;;) {
      const std::size_t chunk = next.fetch_add(1);
      if (chunk >= chunks || failed.load(std::memory_order_relaxed)) return;
      const std::size_t begin = chunk * grain;
      const std::size_t end = std::min(n, begin + grain);
      try {
        fn(begin, end);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  const int spawned = std::min<std::size_t>(threads, chunks);
  pool.reserve(spawned);
  for (int i = 1; i < spawned; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failed.load()) std::rethrow_exception(error);
}

}  // namespace audience
