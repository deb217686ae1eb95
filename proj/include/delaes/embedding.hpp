// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "delaes/corpus.hpp"
#include "delaes/tensor.hpp"

namespace delaes {

/// Pre-trained word vectors keyed by token.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dimension = 0) : dimension_(dimension) {}

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return tokens_.size(); }

  /// Adds a vector unless the token is already present. Returns whether it was added.
  bool add(std::string token, std::span<const float> vector);
  /// Null when the token has no vector.
  const float* find(std::string_view token) const;

 private:
  std::size_t dimension_;
  std::vector<std::string> tokens_;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Reads word2vec text format: "token v1 ... vd" per line, with an optional
/// leading "count dim" header line. Tokens rejected by `keep` are skipped
/// (their line is still validated).
EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t expected_dim,
                               const std::function<bool(std::string_view)>& keep = {});

/// Trainable |V| x d lookup matrix. Row 0 (PAD) stays zero.
template <typename T>
struct EmbeddingMatrix {
  Tensor<T> weights;
  bool trainable = true;

  std::size_t dimension() const { return weights.cols(); }
  std::size_t vocabulary_size() const { return weights.rows(); }
};

/// Copies table rows for known tokens; every other row except PAD is drawn
/// uniformly from [-0.05, 0.05] in vocabulary index order.
EmbeddingMatrix<float> build_embedding_matrix(const Vocabulary& vocab, const EmbeddingTable& table,
                                              std::uint64_t seed);

inline constexpr double kOovInitScale = 0.05;

/// Looks up one row per index. The result is m x d row-major, which is the
/// d x m column layout with each column contiguous.
template <typename T>
Tensor<T> embed(std::span<const std::int32_t> indices, const EmbeddingMatrix<T>& matrix);

/// Token-level convenience: encodes with `vocab` then embeds.
template <typename T>
Tensor<T> embed(std::span<const std::string> tokens, const Vocabulary& vocab,
                const EmbeddingMatrix<T>& matrix) {
  const auto indices = vocab.encode(tokens);
  return embed<T>(indices, matrix);
}

}  // namespace delaes
