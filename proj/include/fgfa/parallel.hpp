#pragma once

#include <functional>

namespace fgfa {

// Global cap on worker threads. Default 1: fully serial, byte-deterministic.
// Work is split into contiguous chunks, one thread per chunk; every output
// element is written by exactly one thread with a fixed reduction order, so
// results are identical for any thread count.
void set_max_threads(int n);
int max_threads();

// Invoke fn(begin, end) over a partition of [0, count).
void parallel_chunks(int count, const std::function<void(int, int)>& fn);

}  // namespace fgfa
