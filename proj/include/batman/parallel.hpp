#pragma once

#include <cstddef>
#include <functional>

namespace batman {

/// Worker count used by row-parallel kernels. Results never depend on it:
/// every parallel kernel writes disjoint rows with a fixed per-row order.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs body(begin, end) over contiguous chunks of [0, n).
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace batman
