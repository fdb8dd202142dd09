#ifndef CAPARENA_PARALLEL_HPP
#define CAPARENA_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace caparena {

// Worker count for parallel_for. Results never depend on it: every parallel
// region writes to disjoint, index-keyed slots and all reductions run in a
// fixed serial order afterwards.
std::size_t max_threads();
void set_max_threads(std::size_t n);

// Runs fn(i) for i in [0, n). Splits the index range into contiguous chunks,
// one per worker. fn must only write to state owned by index i.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace caparena

#endif
