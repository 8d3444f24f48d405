#pragma once

#include <cstddef>
#include <functional>

namespace psae {

/// Worker count: hardware concurrency, capped by the PSAE_THREADS environment variable.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) across worker_count() threads in contiguous chunks.
/// Callers write to disjoint outputs per index, so results do not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace psae
