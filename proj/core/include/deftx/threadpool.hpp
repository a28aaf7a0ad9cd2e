#pragma once

#include <cstddef>
#include <functional>

namespace deftx {

// Runs body(i) for i in [0, count) across `workers` threads. Each index
// owns its output slot, so results are identical for every worker count;
// only scheduling differs. workers <= 1 runs inline.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& body);

}  // namespace deftx
