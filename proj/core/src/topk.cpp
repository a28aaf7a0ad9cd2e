#include "deftx/topk.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "deftx/error.hpp"

namespace deftx {

std::vector<std::size_t> top_k_indices(std::span<const double> values,
                                       std::size_t k) {
  if (k > values.size()) {
    raise(ErrorKind::Budget, "top-k budget " + std::to_string(k) +
                                 " exceeds value count " +
                                 std::to_string(values.size()));
  }
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Total order: greater |value| first, then lower index. No two elements
  // compare equal, so the result is deterministic.
  auto before = [&](std::size_t a, std::size_t b) {
    const double ma = std::fabs(values[a]);
    const double mb = std::fabs(values[b]);
    if (ma != mb) return ma > mb;
    return a < b;
  };
  if (k < order.size()) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                     order.end(), before);
  }
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace deftx
