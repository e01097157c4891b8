#pragma once

#include <cstddef>
#include <functional>

namespace uqvol {

/// Worker count: UQVOL_THREADS when set and positive, otherwise the
/// hardware concurrency (at least 1).
int worker_count();

/// Runs `fn(i)` for i in [0, n) across up to `workers` threads. Indices are
/// claimed dynamically, so `fn` must write only to slots owned by `i`.
/// The first exception thrown by any task is rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int workers = 0);

}  // namespace uqvol
