#pragma once

#include <cstddef>
#include <functional>

namespace gqtok {

/// Worker count for internal kernels: hardware concurrency, capped by the
/// GQTOK_THREADS environment variable when set.
std::size_t worker_count();

/// Runs body(i) for i in [0, n). Each index is processed by exactly one
/// worker; callers must make iterations write disjoint outputs so results do
/// not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace gqtok
