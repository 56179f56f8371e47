#pragma once

#include <cstddef>
#include <functional>

namespace semidense {

// Worker count: SEMIDENSE_THREADS if set and positive, otherwise the
// hardware concurrency.
std::size_t thread_count();

// Runs fn(i) for i in [0, n). Callers write results into pre-sized slots, so
// output never depends on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace semidense
