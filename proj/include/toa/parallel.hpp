#pragma once

#include <cstddef>
#include <functional>

namespace toa {

// Calls fn(i) for every i in [0, count). With threads <= 1 the calls run
// inline in index order; otherwise indices are split into contiguous chunks,
// one per worker. The first exception thrown by any worker is rethrown.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace toa
