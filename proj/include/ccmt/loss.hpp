#pragma once

#include "ccmt/graph.hpp"

#include <array>

namespace ccmt {

using Labels = std::array<int, 2>;          // (request, complaint)
using TaskWeights = std::array<double, 2>;

// Stable sigmoid binary cross-entropy for one logit:
//   max(x, 0) - x*y + log(1 + exp(-|x|))
double bce_value(double logit, int label) noexcept;

// Weighted sum over the two tasks of bce_value, as a graph op on a [1 x 2]
// logits row.
template <typename T>
Var<T> bce_loss(Var<T> logits, Labels labels, TaskWeights weights = {1.0, 1.0});

} // namespace ccmt
