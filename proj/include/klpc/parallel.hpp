#pragma once

#include <cstddef>
#include <functional>

namespace klpc {

// Process-wide cap on worker threads; 0 means available parallelism.
void set_thread_count(std::size_t threads);
std::size_t thread_count();

// Runs body(i) for i in [0, count). Each index must write only to state it
// owns; results are then independent of the worker count. The first
// exception thrown by any task is rethrown on the calling thread.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace klpc
