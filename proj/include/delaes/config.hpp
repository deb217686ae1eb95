// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "delaes/corpus.hpp"
#include "delaes/training.hpp"

namespace delaes {

/// Training configuration plus per-prompt score range overrides.
struct RunConfig {
  TrainConfig train;
  std::map<int, ScoreRange> ranges;

  /// Override if present, else the default range of the prompt.
  ScoreRange range_for(int prompt_id) const;
};

/// Applies one "key=value" setting. Keys mirror TrainConfig field names;
/// "range.N" takes MIN:MAX. Throws UsageError on unknown keys or bad values.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

/// Parses flat key=value lines; blank lines and '#' comments are skipped.
void apply_config_text(RunConfig& cfg, std::string_view text);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

/// Canonical key/value pairs of every TrainConfig field, in a fixed order.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg);

/// Shortest decimal text that parses back to the same double.
std::string format_real(double value);

}  // namespace delaes
