#pragma once

#include <cstddef>
#include <functional>

namespace decode {

// Worker-thread cap: DECODE_THREADS env var if set, else hardware
// concurrency. Always >= 1.
size_t max_threads();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks handed
// to a shared pool; each index is processed exactly once and writes must be
// disjoint, so results are bit-identical regardless of thread count.
// Nested calls from inside a worker run serially.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

// Chunked variant: fn(begin, end) over disjoint ranges.
void parallel_for_chunks(size_t n, const std::function<void(size_t, size_t)>& fn);

}  // namespace decode
