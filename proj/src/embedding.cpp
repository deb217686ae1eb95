// SPDX-License-Identifier: Apache-2.0
#include "delaes/embedding.hpp"

#include <charconv>
#include <fstream>

#include "delaes/errors.hpp"
#include "delaes/random.hpp"

namespace delaes {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> parts;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) parts.push_back(line.substr(start, i - start));
  }
  return parts;
}

bool is_count_header(const std::vector<std::string_view>& parts) {
  if (parts.size() != 2) return false;
  for (const auto part : parts) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc{} || ptr != part.data() + part.size()) return false;
  }
  return true;
}

}  // namespace

bool EmbeddingTable::add(std::string token, std::span<const float> vector) {
  if (vector.size() != dimension_) {
    throw FormatError("embedding for '" + token + "' has " + std::to_string(vector.size()) +
                      " values, expected " + std::to_string(dimension_));
  }
  if (index_.contains(token)) return false;
  index_.emplace(token, tokens_.size());
  tokens_.push_back(std::move(token));
  values_.insert(values_.end(), vector.begin(), vector.end());
  return true;
}

const float* EmbeddingTable::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? nullptr : values_.data() + it->second * dimension_;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t expected_dim,
                               const std::function<bool(std::string_view)>& keep) {
  if (expected_dim == 0) throw UsageError("embedding dimension must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());

  EmbeddingTable table(expected_dim);
  std::vector<float> values(expected_dim);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto parts = split_ws(line);
    if (parts.empty()) continue;
    if (line_no == 1 && is_count_header(parts)) continue;

    const auto where = [&] { return path.string() + ":" + std::to_string(line_no); };
    if (parts.size() - 1 != expected_dim) {
      throw FormatError(where() + ": expected " + std::to_string(expected_dim) +
                        " values, found " + std::to_string(parts.size() - 1));
    }
    for (std::size_t i = 0; i < expected_dim; ++i) {
      const auto text = parts[i + 1];
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), values[i]);
      if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw FormatError(where() + ": cannot parse '" + std::string(text) + "' as a real");
      }
    }
    if (keep && !keep(parts[0])) continue;
    table.add(std::string(parts[0]), values);
  }
  return table;
}

EmbeddingMatrix<float> build_embedding_matrix(const Vocabulary& vocab, const EmbeddingTable& table,
                                              std::uint64_t seed) {
  const std::size_t d = table.dimension();
  EmbeddingMatrix<float> m{Tensor<float>::matrix(vocab.size(), d), true};
  Rng rng(seed);
  for (std::size_t row = 1; row < vocab.size(); ++row) {
    const auto index = static_cast<std::int32_t>(row);
    const float* src = index == Vocabulary::kUnk ? nullptr : table.find(vocab.token(index));
    auto dst = m.weights.row(row);
    if (src != nullptr) {
      std::copy(src, src + d, dst.begin());
    } else {
      for (auto& v : dst) v = static_cast<float>(rng.uniform(-kOovInitScale, kOovInitScale));
    }
  }
  return m;
}

template <typename T>
Tensor<T> embed(std::span<const std::int32_t> indices, const EmbeddingMatrix<T>& matrix) {
  const std::size_t d = matrix.dimension();
  auto out = Tensor<T>::matrix(indices.size(), d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = matrix.weights.row(static_cast<std::size_t>(indices[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

template Tensor<float> embed<float>(std::span<const std::int32_t>, const EmbeddingMatrix<float>&);
template Tensor<double> embed<double>(std::span<const std::int32_t>,
                                      const EmbeddingMatrix<double>&);

}  // namespace delaes
