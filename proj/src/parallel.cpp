#include "cwss/parallel.hpp"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace cwss {

int default_threads() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void parallel_for(int begin, int end, int threads, const std::function<void(int)>& fn) {
  if (end <= begin) return;
  int n = end - begin;
  if (threads <= 0) threads = default_threads();
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }

  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(static_cast<size_t>(threads));
  int chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    int lo = begin + t * chunk;
    int hi = std::min(lo + chunk, end);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi, t] {
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errs[static_cast<size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

}  // namespace cwss
