#pragma once

#include <cstddef>
#include <functional>

namespace geomppca {

/// Worker count: GEOMPPCA_THREADS when set (>= 1), otherwise the hardware
/// concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n) on up to worker_count() threads. Work is
/// split into contiguous blocks; the first exception thrown by any worker is
/// rethrown after all workers join. Callers store per-index results, so the
/// outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace geomppca
