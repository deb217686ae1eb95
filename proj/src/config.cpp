// SPDX-License-Identifier: Apache-2.0
#include "delaes/config.hpp"

#include <charconv>
#include <fstream>
#include <iterator>

#include "delaes/errors.hpp"

namespace delaes {

namespace {

std::string_view strip(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw UsageError("invalid value '" + std::string(value) + "' for " + std::string(key));
}

template <typename Num>
Num parse_num(std::string_view key, std::string_view value) {
  Num out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (value.empty() || ec != std::errc{} || ptr != value.data() + value.size()) bad_value(key, value);
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value);
}

std::vector<std::size_t> parse_windows(std::string_view key, std::string_view value) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const std::size_t comma = value.find(',', start);
    const auto part = strip(value.substr(start, comma == std::string_view::npos ? value.npos : comma - start));
    out.push_back(parse_num<std::size_t>(key, part));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

ScoreRange RunConfig::range_for(int prompt_id) const {
  const auto it = ranges.find(prompt_id);
  return it != ranges.end() ? it->second : default_score_range(prompt_id);
}

std::string format_real(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  key = strip(key);
  value = strip(value);
  TrainConfig& t = cfg.train;
  if (key == "windows") t.windows = parse_windows(key, value);
  else if (key == "filters") t.filters = parse_num<std::size_t>(key, value);
  else if (key == "batch_size") t.batch_size = parse_num<std::size_t>(key, value);
  else if (key == "hidden") t.hidden = parse_num<std::size_t>(key, value);
  else if (key == "dropout") t.dropout = parse_num<double>(key, value);
  else if (key == "epochs") t.epochs = parse_num<std::size_t>(key, value);
  else if (key == "learning_rate") t.learning_rate = parse_num<double>(key, value);
  else if (key == "embedding_dim") t.embedding_dim = parse_num<std::size_t>(key, value);
  else if (key == "pool") t.pool = parse_num<std::size_t>(key, value);
  else if (key == "stride") t.stride = parse_num<std::size_t>(key, value);
  else if (key == "seed") t.seed = parse_num<std::uint64_t>(key, value);
  else if (key == "rho") t.rho = parse_num<double>(key, value);
  else if (key == "epsilon") t.epsilon = parse_num<double>(key, value);
  else if (key == "clip_norm") t.clip_norm = parse_num<double>(key, value);
  else if (key == "summary") t.summary = parse_summary_mode(value);
  else if (key == "train_embeddings") t.train_embeddings = parse_bool(key, value);
  else if (key == "reshuffle") t.reshuffle = parse_bool(key, value);
  else if (key == "min_count") t.min_count = parse_num<int>(key, value);
  else if (key == "threads") t.threads = parse_num<std::size_t>(key, value);
  else if (key.starts_with("range.")) {
    const int prompt = parse_num<int>(key, key.substr(6));
    cfg.ranges[prompt] = parse_score_range(value, prompt);
  } else {
    throw UsageError("unknown config key '" + std::string(key) + "'");
  }
}

void apply_config_text(RunConfig& cfg, std::string_view text) {
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = strip(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config " + path.string());
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  apply_config_text(cfg, text);
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& t) {
  std::string windows;
  for (std::size_t i = 0; i < t.windows.size(); ++i) {
    if (i) windows += ',';
    windows += std::to_string(t.windows[i]);
  }
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"windows", windows},
      {"filters", std::to_string(t.filters)},
      {"batch_size", std::to_string(t.batch_size)},
      {"hidden", std::to_string(t.hidden)},
      {"dropout", format_real(t.dropout)},
      {"epochs", std::to_string(t.epochs)},
      {"learning_rate", format_real(t.learning_rate)},
      {"embedding_dim", std::to_string(t.embedding_dim)},
      {"pool", std::to_string(t.pool)},
      {"stride", std::to_string(t.stride)},
      {"seed", std::to_string(t.seed)},
      {"rho", format_real(t.rho)},
      {"epsilon", format_real(t.epsilon)},
      {"clip_norm", format_real(t.clip_norm)},
      {"summary", to_string(t.summary)},
      {"train_embeddings", b(t.train_embeddings)},
      {"reshuffle", b(t.reshuffle)},
      {"min_count", std::to_string(t.min_count)},
      {"threads", std::to_string(t.threads)},
  };
}

}  // namespace delaes
