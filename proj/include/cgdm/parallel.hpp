#pragma once

#include <cstddef>
#include <functional>

namespace cgdm {

/// Process-wide cap on worker threads (>= 1). Every parallel section writes
/// into per-index slots, so results never depend on this value.
void set_max_threads(unsigned threads);
unsigned max_threads();

/// Runs fn(i) for i in [0, count), split into contiguous chunks across at
/// most max_threads() workers. Exceptions from workers are rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace cgdm
