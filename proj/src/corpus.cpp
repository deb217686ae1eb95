// SPDX-License-Identifier: Apache-2.0
#include "delaes/corpus.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "delaes/errors.hpp"

namespace delaes {

namespace {

constexpr std::array<std::pair<int, int>, 8> kTableRanges = {{
    {2, 4}, {1, 6}, {0, 3}, {0, 3}, {0, 4}, {0, 4}, {0, 30}, {0, 60},
}};

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Decodes one code point from valid UTF-8; returns bytes consumed, 0 if invalid.
std::size_t next_code_point(std::string_view s, std::size_t pos, char32_t& cp) {
  const auto byte = [&](std::size_t i) { return static_cast<unsigned char>(s[i]); };
  const unsigned char lead = byte(pos);
  std::size_t len = 0;
  if (lead < 0x80) {
    cp = lead;
    return 1;
  } else if ((lead & 0xE0) == 0xC0) {
    len = 2;
    cp = lead & 0x1F;
  } else if ((lead & 0xF0) == 0xE0) {
    len = 3;
    cp = lead & 0x0F;
  } else if ((lead & 0xF8) == 0xF0) {
    len = 4;
    cp = lead & 0x07;
  } else {
    return 0;
  }
  if (pos + len > s.size()) return 0;
  for (std::size_t i = 1; i < len; ++i) {
    if ((byte(pos + i) & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (byte(pos + i) & 0x3F);
  }
  static constexpr char32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
  return len;
}

bool is_space(char32_t c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f' ||
         c == 0xA0 || c == 0x2028 || c == 0x2029 || c == 0x3000 || (c >= 0x2000 && c <= 0x200A);
}

bool is_ascii_letter(char32_t c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_ascii_digit(char32_t c) { return c >= '0' && c <= '9'; }

bool is_punct(char32_t c) {
  if (c < 0x80) return c > 0x20 && c < 0x7F && !is_ascii_letter(c) && !is_ascii_digit(c);
  // C1 controls: Windows-1252 smart quotes and dashes read as Latin-1 land here.
  if (c >= 0x80 && c <= 0xBF) return true;
  if (c == 0xD7 || c == 0xF7) return true;
  return c >= 0x2010 && c <= 0x206F;
}

char32_t to_lower(char32_t c) {
  if (c >= 'A' && c <= 'Z') return c + 32;
  if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
  return c;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

template <typename Int>
std::optional<Int> parse_int(std::string_view s) {
  s = trim(s);
  Int value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

struct TsvTable {
  std::vector<std::string> header;
  // Pairs of (1-based line number, decoded line).
  std::vector<std::pair<std::size_t, std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  }
};

TsvTable read_tsv(const std::filesystem::path& path, Encoding encoding) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};

  TsvTable table;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < bytes.size()) {
    std::size_t end = bytes.find('\n', start);
    if (end == std::string::npos) end = bytes.size();
    std::string_view raw(bytes.data() + start, end - start);
    start = end + 1;
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    std::string line;
    try {
      line = decode_text(raw, encoding);
    } catch (const EncodingError& e) {
      throw EncodingError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (table.header.empty()) {
      if (line.empty()) continue;
      for (auto field : split_tabs(line)) table.header.emplace_back(trim(field));
      continue;
    }
    if (line.empty()) continue;
    table.rows.emplace_back(line_no, std::move(line));
  }
  return table;
}

std::vector<std::string_view> row_fields(const TsvTable& table, std::size_t line_no,
                                         std::string_view line, std::size_t needed,
                                         const std::filesystem::path& path) {
  auto fields = split_tabs(line);
  if (fields.size() > table.header.size()) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " +
                      std::to_string(fields.size()) + " fields but header has " +
                      std::to_string(table.header.size()) +
                      " (tabs inside the essay text are not supported)");
  }
  if (fields.size() <= needed) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": row has only " +
                      std::to_string(fields.size()) + " fields");
  }
  return fields;
}

}  // namespace

Encoding parse_encoding(std::string_view name) {
  if (name == "latin1" || name == "latin-1" || name == "iso-8859-1") return Encoding::latin1;
  if (name == "utf8" || name == "utf-8") return Encoding::utf8;
  throw UsageError("unknown encoding '" + std::string(name) + "' (expected utf8 or latin1)");
}

ScoreRange default_score_range(int prompt_id) {
  if (prompt_id < 1 || prompt_id > 8) {
    throw UsageError("prompt id must be in 1..8, got " + std::to_string(prompt_id));
  }
  const auto [lo, hi] = kTableRanges[static_cast<std::size_t>(prompt_id - 1)];
  return ScoreRange{prompt_id, lo, hi};
}

ScoreRange parse_score_range(std::string_view text, int prompt_id) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw UsageError("score range must be MIN:MAX, got '" + std::string(text) + "'");
  }
  const auto lo = parse_int<int>(text.substr(0, colon));
  const auto hi = parse_int<int>(text.substr(colon + 1));
  if (!lo || !hi) throw UsageError("score range must be MIN:MAX, got '" + std::string(text) + "'");
  if (*lo >= *hi) throw UsageError("score range needs MIN < MAX, got '" + std::string(text) + "'");
  return ScoreRange{prompt_id, *lo, *hi};
}

EssaySet EssaySet::subset(std::span<const std::size_t> positions) const {
  EssaySet out{prompt_id, {}, range};
  out.essays.reserve(positions.size());
  for (const std::size_t p : positions) out.essays.push_back(essays.at(p));
  return out;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index_.reserve(v.tokens_.size());
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    const auto [it, inserted] = v.index_.emplace(v.tokens_[i], static_cast<std::int32_t>(i + 2));
    if (!inserted) throw FormatError("duplicate vocabulary token '" + v.tokens_[i] + "'");
  }
  return v;
}

std::int32_t Vocabulary::index_of(std::string_view token) const {
  const auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.find(token) != index_.end(); }

const std::string& Vocabulary::token(std::int32_t index) const {
  static const std::string pad = "<pad>";
  static const std::string unk = "<unk>";
  if (index == kPad) return pad;
  if (index == kUnk) return unk;
  return tokens_.at(static_cast<std::size_t>(index - 2));
}

std::vector<std::int32_t> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<std::int32_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(index_of(t));
  return out;
}

std::string decode_text(std::string_view bytes, Encoding encoding) {
  std::string out;
  out.reserve(bytes.size());
  if (encoding == Encoding::latin1) {
    for (const char ch : bytes) append_utf8(out, static_cast<unsigned char>(ch));
    return out;
  }
  for (std::size_t pos = 0; pos < bytes.size();) {
    char32_t cp = 0;
    const std::size_t n = next_code_point(bytes, pos, cp);
    if (n == 0) {
      throw EncodingError("invalid UTF-8 byte 0x" +
                          [&] {
                            std::ostringstream os;
                            os << std::hex << static_cast<int>(static_cast<unsigned char>(bytes[pos]));
                            return os.str();
                          }() +
                          " at offset " + std::to_string(pos));
    }
    out.append(bytes.substr(pos, n));
    pos += n;
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  // Decode once; input is UTF-8 (invalid bytes are read as Latin-1).
  std::vector<char32_t> cps;
  cps.reserve(text.size());
  for (std::size_t pos = 0; pos < text.size();) {
    char32_t cp = 0;
    const std::size_t n = next_code_point(text, pos, cp);
    if (n == 0) {
      cps.push_back(static_cast<unsigned char>(text[pos]));
      ++pos;
    } else {
      cps.push_back(cp);
      pos += n;
    }
  }

  std::vector<std::string> tokens;
  std::string word;
  const auto flush = [&] {
    if (!word.empty()) tokens.push_back(std::move(word));
    word.clear();
  };

  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (is_space(c)) {
      flush();
    } else if (c == '@' && i + 1 < cps.size() && is_ascii_letter(cps[i + 1])) {
      flush();
      std::string marker = "@";
      std::size_t j = i + 1;
      while (j < cps.size() && is_ascii_letter(cps[j])) append_utf8(marker, to_lower(cps[j++]));
      while (j < cps.size() && is_ascii_digit(cps[j])) append_utf8(marker, cps[j++]);
      tokens.push_back(std::move(marker));
      i = j - 1;
    } else if (is_punct(c)) {
      flush();
      std::string p;
      append_utf8(p, c);
      tokens.push_back(std::move(p));
    } else {
      append_utf8(word, to_lower(c));
    }
  }
  flush();
  return tokens;
}

EssaySet load_dataset(const std::filesystem::path& path, int prompt_id, const ScoreRange& range,
                      Encoding encoding) {
  const TsvTable table = read_tsv(path, encoding);
  if (table.header.empty()) throw FormatError(path.string() + ": missing header row");

  const auto require = [&](std::string_view name) {
    const auto col = table.column(name);
    if (!col) throw FormatError(path.string() + ": missing column '" + std::string(name) + "'");
    return *col;
  };
  const std::size_t id_col = require("essay_id");
  const std::size_t set_col = require("essay_set");
  const std::size_t text_col = require("essay");
  const std::size_t score_col = require("domain1_score");
  const std::size_t needed = std::max({id_col, set_col, text_col, score_col});

  EssaySet set{prompt_id, {}, range};
  std::set<std::int64_t> seen;
  for (const auto& [line_no, line] : table.rows) {
    const auto fields = row_fields(table, line_no, line, needed, path);
    const auto where = [&, line_no = line_no] { return path.string() + ":" + std::to_string(line_no); };

    const auto essay_set = parse_int<int>(fields[set_col]);
    if (!essay_set) throw FormatError(where() + ": essay_set is not an integer");
    if (*essay_set != prompt_id) continue;

    const auto id = parse_int<std::int64_t>(fields[id_col]);
    if (!id) throw FormatError(where() + ": essay_id is not an integer");
    if (!seen.insert(*id).second) {
      throw FormatError(where() + ": duplicate essay_id " + std::to_string(*id));
    }
    const auto score = parse_int<int>(fields[score_col]);
    if (!score) {
      throw FormatError(where() + ": domain1_score of essay " + std::to_string(*id) +
                        " is not an integer");
    }
    if (!range.contains(*score)) {
      throw RangeError("essay " + std::to_string(*id) + ": score " + std::to_string(*score) +
                       " outside range " + std::to_string(range.min) + "-" +
                       std::to_string(range.max));
    }
    Essay essay;
    essay.essay_id = *id;
    essay.prompt_id = prompt_id;
    essay.tokens = tokenize(fields[text_col]);
    if (essay.tokens.empty()) {
      throw FormatError(where() + ": essay " + std::to_string(*id) + " has no tokens");
    }
    essay.raw_score = *score;
    essay.normalized_score = normalize_score(*score, range);
    set.essays.push_back(std::move(essay));
  }
  return set;
}

std::vector<UnscoredEssay> load_unscored(const std::filesystem::path& path,
                                         std::optional<int> prompt_id, Encoding encoding) {
  const TsvTable table = read_tsv(path, encoding);
  std::vector<UnscoredEssay> out;
  if (table.header.empty()) return out;

  const auto id_col = table.column("essay_id");
  const auto text_col = table.column("essay");
  if (!id_col) throw FormatError(path.string() + ": missing column 'essay_id'");
  if (!text_col) throw FormatError(path.string() + ": missing column 'essay'");
  const auto set_col = prompt_id ? table.column("essay_set") : std::nullopt;
  const std::size_t needed = std::max({*id_col, *text_col, set_col.value_or(0)});

  for (const auto& [line_no, line] : table.rows) {
    const auto fields = row_fields(table, line_no, line, needed, path);
    const auto where = [&, line_no = line_no] { return path.string() + ":" + std::to_string(line_no); };
    if (set_col) {
      const auto essay_set = parse_int<int>(fields[*set_col]);
      if (!essay_set) throw FormatError(where() + ": essay_set is not an integer");
      if (*essay_set != *prompt_id) continue;
    }
    const auto id = parse_int<std::int64_t>(fields[*id_col]);
    if (!id) throw FormatError(where() + ": essay_id is not an integer");
    UnscoredEssay essay{*id, tokenize(fields[*text_col])};
    if (essay.tokens.empty()) {
      throw FormatError(where() + ": essay " + std::to_string(*id) + " has no tokens");
    }
    out.push_back(std::move(essay));
  }
  return out;
}

Vocabulary build_vocabulary(std::span<const EssaySet* const> sets, int min_count) {
  if (min_count < 1) throw UsageError("min_count must be >= 1");
  std::map<std::string, std::size_t, std::less<>> counts;
  for (const EssaySet* set : sets) {
    for (const auto& essay : set->essays) {
      for (const auto& token : essay.tokens) ++counts[token];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [token, count] : counts) {
    if (count >= static_cast<std::size_t>(min_count)) kept.emplace_back(token, count);
  }
  // Map iteration is lexicographic, so a stable sort on count keeps the tie-break.
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [token, count] : kept) tokens.push_back(std::move(token));
  return Vocabulary::from_tokens(std::move(tokens));
}

Vocabulary build_vocabulary(const EssaySet& set, int min_count) {
  const EssaySet* sets[] = {&set};
  return build_vocabulary(sets, min_count);
}

double normalize_score(int raw_score, const ScoreRange& range) {
  return static_cast<double>(raw_score - range.min) / static_cast<double>(range.max - range.min);
}

int denormalize_score(double y, const ScoreRange& range) {
  if (!(y >= 0.0 && y <= 1.0)) {
    throw DomainError("normalized score must be in [0,1], got " + std::to_string(y));
  }
  const double scaled = range.min + y * (range.max - range.min);
  const int rounded = static_cast<int>(std::round(scaled));
  return std::clamp(rounded, range.min, range.max);
}

}  // namespace delaes
