#pragma once

#include <cstdint>
#include <functional>

namespace hyperace {

/// Worker count: HYPERACE_THREADS if set (>= 1), else hardware concurrency.
int thread_count();

/// Runs body(i) for i in [0, n). Iterations must be independent. The active
/// tape and flop counter of the caller are not visible inside workers, so
/// recorded ops and counted work always run on the calling thread.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& body);

}  // namespace hyperace
