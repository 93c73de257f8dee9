#pragma once

#include <cstddef>
#include <functional>

namespace rlhf {

// Lanes to use when a caller passes 0: hardware concurrency, at least 1.
std::size_t default_threads();

// Calls fn(i) for every i in [0, n) across up to n_threads lanes. Each call
// must write only to its own output slot. The first exception thrown by any
// call is rethrown after all lanes finish.
void parallel_for(std::size_t n, std::size_t n_threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace rlhf
