// SPDX-License-Identifier: Apache-2.0
// Shared fixtures: the keyword corpus, tiny models and scratch directories.
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "delaes/corpus.hpp"
#include "delaes/network.hpp"
#include "delaes/random.hpp"
#include "delaes/training.hpp"

namespace delaes::testing {

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words{"the", "cat", "sat", "on", "a",  "mat",
                                              "dog", "ran", "to", "big", "red", "house"};
  return words;
}

/// Keyword corpus: each essay holds filler words plus zero, one or both of
/// "alpha" and "beta"; its score (range 0-2) is how many of the two appear.
/// Scores are balanced 1:2:1.
inline EssaySet keyword_corpus(std::size_t n = 32, std::uint64_t seed = 5, int prompt = 1) {
  EssaySet set;
  set.prompt_id = prompt;
  set.range = ScoreRange{prompt, 0, 2};
  Rng rng(seed);
  const auto& filler = filler_words();
  for (std::size_t i = 0; i < n; ++i) {
    const bool alpha = (i % 4 == 1) || (i % 4 == 3);
    const bool beta = (i % 4 == 2) || (i % 4 == 3);
    std::vector<std::string> tokens;
    const std::size_t len = 6 + rng.below(6);
    for (std::size_t t = 0; t < len; ++t) tokens.push_back(filler[rng.below(filler.size())]);
    if (alpha) tokens.insert(tokens.begin() + static_cast<long>(rng.below(tokens.size() + 1)), "alpha");
    if (beta) tokens.insert(tokens.begin() + static_cast<long>(rng.below(tokens.size() + 1)), "beta");
    Essay e;
    e.essay_id = static_cast<std::int64_t>(100 + i);
    e.prompt_id = prompt;
    e.tokens = std::move(tokens);
    e.raw_score = int(alpha) + int(beta);
    e.normalized_score = normalize_score(e.raw_score, set.range);
    set.essays.push_back(std::move(e));
  }
  return set;
}

/// Small network that fits the keyword corpus in well under a minute.
inline TrainConfig reduced_config() {
  TrainConfig cfg;
  cfg.windows = {2, 3};
  cfg.filters = 8;
  cfg.hidden = 8;
  cfg.embedding_dim = 8;
  cfg.batch_size = 8;
  cfg.dropout = 0.0;
  cfg.learning_rate = 0.01;
  cfg.epochs = 200;
  cfg.seed = 11;
  return cfg;
}

/// Writes `set` as an ASAP-style TSV with an extra unused column.
inline void write_tsv(const std::filesystem::path& path, const EssaySet& set) {
  std::ofstream out(path, std::ios::binary);
  out << "essay_id\tessay_set\tessay\trater1_domain1\tdomain1_score\n";
  for (const auto& e : set.essays) {
    std::string text;
    for (const auto& t : e.tokens) text += (text.empty() ? "" : " ") + t;
    out << e.essay_id << '\t' << e.prompt_id << '\t' << text << '\t' << e.raw_score << '\t'
        << e.raw_score << '\n';
  }
}

/// Deterministic text embeddings for `tokens`.
inline void write_embeddings(const std::filesystem::path& path,
                             const std::vector<std::string>& tokens, std::size_t dim,
                             std::uint64_t seed = 3) {
  Rng rng(seed);
  std::ofstream out(path, std::ios::binary);
  out << tokens.size() << ' ' << dim << '\n';
  for (const auto& t : tokens) {
    out << t;
    for (std::size_t i = 0; i < dim; ++i) out << ' ' << rng.uniform(-0.5, 0.5);
    out << '\n';
  }
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    Rng rng(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(::getpid()));
    path_ = std::filesystem::temp_directory_path() /
            ("delaes-" + tag + "-" + std::to_string(rng.next() % 1000000007ULL));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace delaes::testing
