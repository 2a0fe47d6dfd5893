#pragma once

#include <cstddef>
#include <functional>

namespace isr {

/// Worker count: ISRFLOW_THREADS if set and positive, else hardware concurrency.
int thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. Each index runs
/// exactly once; callers write results into per-index slots so any reduction
/// afterwards happens in a fixed order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace isr
