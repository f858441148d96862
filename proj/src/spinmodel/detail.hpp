#pragma once

#include <vector>

#include "endorkit/numerics.hpp"

namespace endorkit {

/// For each eigenstate of `next`, the index of the `prev` eigenstate it
/// overlaps most with (one-to-one). Reports the weakest matched |overlap|^2.
std::vector<std::size_t> track_states(const EigenSolution& prev, const EigenSolution& next, double* min_overlap);

}  // namespace endorkit
