// SPDX-License-Identifier: Apache-2.0
// Kappa written directly from pairwise disagreement sums, with no matrices.
#pragma once

#include <span>

#include "delaes/corpus.hpp"

namespace delaes::testing {

// sum_{i,j} W_ij O_ij is the summed weight over the n observed pairs, and
// sum_{i,j} W_ij E_ij = (1/n) sum_k sum_l W(a_k, p_l) because E is the
// outer product of the histograms divided by n.
inline double qwk_oracle(std::span<const int> actual, std::span<const int> predicted,
                         const ScoreRange& range) {
  const double span = range.max - range.min;
  auto w = [&](int a, int p) {
    const double d = a - p;
    return d * d / (span * span);
  };
  const std::size_t n = actual.size();
  double observed = 0.0;
  for (std::size_t k = 0; k < n; ++k) observed += w(actual[k], predicted[k]);
  double expected = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t l = 0; l < n; ++l) expected += w(actual[k], predicted[l]);
  }
  expected /= static_cast<double>(n);
  if (expected == 0.0) return 1.0;
  return 1.0 - observed / expected;
}

}  // namespace delaes::testing
