#pragma once

#include <cstddef>
#include <functional>

namespace rgsmc {

inline constexpr const char* kWorkersEnv = "RGSMC_WORKERS";

/// Worker count from RGSMC_WORKERS, else the hardware concurrency. Throws
/// ConfigError for a value that is not a positive integer.
std::size_t worker_count();

/// Calls fn(i) for every i in [0, n) on up to `workers` threads. Work is
/// handed out by index; if any call throws, the exception with the lowest
/// index is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace rgsmc
