#pragma once

#include <cstddef>
#include <functional>

namespace vcm {

/// Thread budget: the VCM_THREADS environment variable when set to a positive
/// integer, else `requested` if positive, else hardware concurrency.
int resolve_threads(int requested = 0);

/// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
/// visited exactly once; callers write results by index so the outcome does
/// not depend on scheduling. If a body throws, one such exception is
/// rethrown after all workers finish.
void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t)>& body);

}  // namespace vcm
