#pragma once

#include "dmsr/tensor.hpp"

namespace dmsr::detail {

// For every flat index of `out`, the flat index of the element of `in` it reads
// under broadcasting.
std::vector<Index> broadcast_source_index(const Shape& in, const Shape& out);

}  // namespace dmsr::detail
