#pragma once

#include <cstddef>
#include <functional>

namespace bnn {

// Worker cap: set_worker_count() value, else BNN_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();
// Explicit cap that takes precedence over BNN_THREADS; 0 clears it.
void set_worker_count(std::size_t n);

// Splits [0, n) into contiguous chunks run on up to worker_count() threads.
// Callers must make chunks write disjoint outputs; results then do not depend
// on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  std::size_t min_chunk = 1);

}  // namespace bnn
