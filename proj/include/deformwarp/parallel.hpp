#pragma once

#include <cstddef>
#include <functional>

namespace deformwarp {

/// Worker cap: DEFORMWARP_THREADS if set to a positive integer, otherwise the
/// hardware concurrency.
int worker_count();

/// Runs fn(i) for i in [0, n). Work items must write disjoint outputs; the
/// result is then independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace deformwarp
