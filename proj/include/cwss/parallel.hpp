#pragma once

#include <functional>

namespace cwss {

// Number of worker threads to use when the caller passes threads <= 0.
int default_threads();

// Runs fn(i) for i in [begin, end). With threads <= 1 the loop runs inline.
// Work is split into contiguous chunks so per-index results can be combined
// in index order by the caller regardless of thread count.
void parallel_for(int begin, int end, int threads, const std::function<void(int)>& fn);

}  // namespace cwss
