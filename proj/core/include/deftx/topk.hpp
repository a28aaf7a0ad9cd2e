#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace deftx {

// Indices of the k largest |values|, ties broken by lower index first.
// Returned sorted ascending. k > values.size() is a budget error.
std::vector<std::size_t> top_k_indices(std::span<const double> values,
                                       std::size_t k);

}  // namespace deftx
