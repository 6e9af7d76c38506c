#pragma once

#include <cstddef>
#include <functional>

namespace embfuse {

/// Worker count: EMBFUSE_THREADS if set to a positive integer, else hardware concurrency.
std::size_t thread_count();

/// Calls fn(i) for i in [0, n) across up to `threads` workers using static
/// contiguous chunks. fn must only write state owned by index i. The first
/// exception thrown (lowest chunk) is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t threads = thread_count());

}  // namespace embfuse
