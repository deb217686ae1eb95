// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "delaes/corpus.hpp"

namespace delaes {

/// Quadratic agreement weights over N ratings: W(i,j) = (i-j)^2 / (N-1)^2.
Eigen::MatrixXd weight_matrix(int n);

/// O(i,j): number of items rated i by the reference and j by the system,
/// with ratings offset by range.min.
Eigen::MatrixXd observed_matrix(std::span<const int> actual, std::span<const int> predicted,
                                const ScoreRange& range);

/// Outer product of the two rating histograms, scaled to the item count.
Eigen::MatrixXd expected_matrix(std::span<const int> actual, std::span<const int> predicted,
                                const ScoreRange& range);

struct RatingMatrices {
  int n = 0;
  Eigen::MatrixXd weights;
  Eigen::MatrixXd observed;
  Eigen::MatrixXd expected;
};

RatingMatrices rating_matrices(std::span<const int> actual, std::span<const int> predicted,
                               const ScoreRange& range);

/// 1 - sum(W.O) / sum(W.E). When sum(W.E) is zero both raters used a single
/// rating; the result is 1 if O equals E, otherwise a DomainError.
double qwk(std::span<const int> actual, std::span<const int> predicted, const ScoreRange& range);

/// One row of a two-column "essay_id,score" file.
struct IdScore {
  std::int64_t essay_id = 0;
  int score = 0;
  friend bool operator==(const IdScore&, const IdScore&) = default;
};

/// Reads "essay_id,score" rows. A first line that does not parse as numbers
/// is treated as a header and skipped.
std::vector<IdScore> read_score_csv(const std::filesystem::path& path);
void write_score_csv(const std::filesystem::path& path, std::span<const IdScore> rows);

}  // namespace delaes
