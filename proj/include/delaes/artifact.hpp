// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "delaes/corpus.hpp"
#include "delaes/network.hpp"
#include "delaes/training.hpp"

namespace delaes {

inline constexpr std::string_view kArtifactMagic = "DELAES01";

/// A trained model with everything needed to score new essays.
///
/// Binary layout, all integers little-endian:
///   "DELAES01"
///   u64 metadata length, then that many bytes of UTF-8 JSON
///       {prompt, score_range, config, embedding_trainable, vocabulary[, created]}
///   u32 tensor count, then per tensor:
///       u32 name length, name bytes, u32 rank, u64 dims[rank],
///       IEEE-754 binary32 values in row-major order
struct ModelArtifact {
  TrainConfig config;
  int prompt_id = 0;
  ScoreRange range;
  Vocabulary vocab;
  std::optional<std::string> created;  // omitted unless set, so artifacts stay reproducible
  ModelParameters<float> params;
};

std::string serialize_artifact(const ModelArtifact& artifact);
/// Throws FormatError on a foreign magic, truncated data or tensors that do
/// not match the shapes implied by the metadata.
ModelArtifact parse_artifact(std::string_view bytes);

void save_artifact(const std::filesystem::path& path, const ModelArtifact& artifact);
ModelArtifact load_artifact(const std::filesystem::path& path);

}  // namespace delaes
