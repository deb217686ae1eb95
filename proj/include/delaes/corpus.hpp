// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace delaes {

enum class Encoding { latin1, utf8 };

/// Parses "latin1" / "utf8"; throws UsageError otherwise.
Encoding parse_encoding(std::string_view name);

/// Inclusive integer score range of one prompt.
struct ScoreRange {
  int prompt_id = 0;
  int min = 0;
  int max = 1;

  int rating_count() const { return max - min + 1; }
  bool contains(int score) const { return score >= min && score <= max; }
  friend bool operator==(const ScoreRange&, const ScoreRange&) = default;
};

/// Default ranges for prompts 1..8 as published with the essay sets.
/// Set 1 is listed as 2-4 although the public data uses 2-12; override it
/// when training on the real file.
ScoreRange default_score_range(int prompt_id);

/// Parses "MIN:MAX".
ScoreRange parse_score_range(std::string_view text, int prompt_id = 0);

struct Essay {
  std::int64_t essay_id = 0;
  int prompt_id = 0;
  std::vector<std::string> tokens;
  int raw_score = 0;
  double normalized_score = 0.0;
};

struct EssaySet {
  int prompt_id = 0;
  std::vector<Essay> essays;
  ScoreRange range;

  std::size_t size() const { return essays.size(); }
  bool empty() const { return essays.empty(); }

  /// Subset in the order of `positions`.
  EssaySet subset(std::span<const std::size_t> positions) const;
};

/// Token to index map. Index 0 is PAD, index 1 is UNK; corpus tokens start at 2.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;

  Vocabulary() = default;
  /// Rebuilds from corpus tokens listed in index order starting at 2.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::int32_t index_of(std::string_view token) const;
  bool contains(std::string_view token) const;
  /// Token text for indices >= 2; "<pad>" and "<unk>" for the reserved slots.
  const std::string& token(std::int32_t index) const;
  std::size_t size() const { return tokens_.size() + 2; }
  /// Corpus tokens in index order (index 2 first).
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::int32_t> encode(std::span<const std::string> tokens) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t, Hash, std::equal_to<>> index_;
};

/// Deterministic rule-based tokenizer. Lowercases, splits on whitespace,
/// detaches every punctuation character and keeps "@" + letters + digits
/// anonymization markers whole.
std::vector<std::string> tokenize(std::string_view text);

/// Decodes raw bytes to UTF-8. Latin-1 never fails; UTF-8 is validated.
std::string decode_text(std::string_view bytes, Encoding encoding);

/// Reads the essays of one prompt from an ASAP-style tab-separated file.
EssaySet load_dataset(const std::filesystem::path& path, int prompt_id,
                      const ScoreRange& range, Encoding encoding = Encoding::latin1);

/// Essay text rows without scores, for prediction. Rows are filtered on
/// essay_set when that column exists; domain1_score is not required.
struct UnscoredEssay {
  std::int64_t essay_id = 0;
  std::vector<std::string> tokens;
};
std::vector<UnscoredEssay> load_unscored(const std::filesystem::path& path,
                                         std::optional<int> prompt_id,
                                         Encoding encoding = Encoding::latin1);

/// Tokens occurring at least `min_count` times across `sets`, indexed by
/// descending frequency with lexicographic tie-break.
Vocabulary build_vocabulary(std::span<const EssaySet* const> sets, int min_count = 1);
Vocabulary build_vocabulary(const EssaySet& set, int min_count = 1);

double normalize_score(int raw_score, const ScoreRange& range);

/// Inverse of normalize_score with round-half-away-from-zero and clamping.
int denormalize_score(double y, const ScoreRange& range);

}  // namespace delaes
