#include "batman/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace batman {

namespace {
std::atomic<std::size_t> g_threads{1};
thread_local bool t_inside = false;
}

void set_num_threads(std::size_t n) { g_threads = std::max<std::size_t>(1, n); }
std::size_t num_threads() { return g_threads; }

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
  // Nested loops run inline on the calling worker.
  const std::size_t workers = t_inside ? 1 : std::min(num_threads(), n);
  if (workers <= 1) {
    if (n) body(0, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk, end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] {
      t_inside = true;
      body(begin, end);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace batman
