#include "fgfa/parallel.hpp"

#include <atomic>
#include <thread>
#include <vector>

#include "fgfa/errors.hpp"

namespace fgfa {

namespace {
std::atomic<int> g_max_threads{1};
}

void set_max_threads(int n) {
  if (n < 1) throw ConfigError("set_max_threads: thread count must be >= 1");
  g_max_threads.store(n);
}

int max_threads() { return g_max_threads.load(); }

void parallel_chunks(int count, const std::function<void(int, int)>& fn) {
  if (count <= 0) return;
  const int workers = std::min(max_threads(), count);
  if (workers <= 1) {
    fn(0, count);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  const int base = count / workers;
  const int extra = count % workers;
  int begin = 0;
  for (int w = 0; w < workers; ++w) {
    const int len = base + (w < extra ? 1 : 0);
    const int end = begin + len;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    begin = end;
  }
  for (auto& t : pool) t.join();
}

}  // namespace fgfa
