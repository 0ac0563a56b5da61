#pragma once

#include <cstddef>
#include <functional>

namespace falsevfl {

// Worker count from FALSEVFL_THREADS (default 1, invalid values fall back to 1).
std::size_t configured_threads();

// Calls fn(i) for every i in [0, n). Work is spread over at most `threads`
// workers; each index runs exactly once. Callers must write results into
// per-index slots so the outcome does not depend on scheduling. The first
// exception thrown by any call is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t threads = configured_threads());

}  // namespace falsevfl
