// SPDX-License-Identifier: Apache-2.0
#include "delaes/artifact.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "delaes/config.hpp"
#include "delaes/errors.hpp"

namespace delaes {

namespace {

template <typename UInt>
void put(std::string& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename UInt>
  UInt get() {
    need(sizeof(UInt));
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
      v |= static_cast<UInt>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(UInt);
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated model artifact");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_artifact(const ModelArtifact& a) {
  nlohmann::ordered_json meta;
  meta["prompt"] = a.prompt_id;
  meta["score_range"] = {a.range.min, a.range.max};
  meta["config"] = nlohmann::ordered_json::object();
  for (const auto& [key, value] : config_entries(a.config)) meta["config"][key] = value;
  meta["embedding_trainable"] = a.params.embedding.trainable;
  meta["vocabulary"] = a.vocab.tokens();
  if (a.created) meta["created"] = *a.created;
  const std::string meta_text = meta.dump();

  std::string out(kArtifactMagic);
  put<std::uint64_t>(out, meta_text.size());
  out += meta_text;

  std::uint32_t count = 0;
  for_each_tensor(a.params, [&](const std::string&, const Tensor<float>&) { ++count; });
  put<std::uint32_t>(out, count);
  for_each_tensor(a.params, [&](const std::string& name, const Tensor<float>& t) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (const auto dim : t.shape()) put<std::uint64_t>(out, dim);
    for (const float v : t.values()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  });
  return out;
}

ModelArtifact parse_artifact(std::string_view bytes) {
  if (bytes.size() < kArtifactMagic.size() || bytes.substr(0, kArtifactMagic.size()) != kArtifactMagic) {
    throw FormatError("not a DELAES01 artifact");
  }
  Reader in(bytes.substr(kArtifactMagic.size()));
  const auto meta_len = in.get<std::uint64_t>();
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in.take(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("artifact metadata is not valid JSON: ") + e.what());
  }

  ModelArtifact a;
  try {
    a.prompt_id = meta.at("prompt").get<int>();
    const auto& range = meta.at("score_range");
    a.range = ScoreRange{a.prompt_id, range.at(0).get<int>(), range.at(1).get<int>()};
    RunConfig run;
    for (const auto& [key, value] : meta.at("config").items()) {
      apply_setting(run, key, value.get<std::string>());
    }
    a.config = run.train;
    a.vocab = Vocabulary::from_tokens(meta.at("vocabulary").get<std::vector<std::string>>());
    if (meta.contains("created")) a.created = meta.at("created").get<std::string>();
    a.params = zero_parameters(a.config.architecture(), a.vocab.size());
    a.params.embedding.trainable = meta.at("embedding_trainable").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("artifact metadata incomplete: ") + e.what());
  } catch (const UsageError& e) {
    throw FormatError(std::string("artifact metadata invalid: ") + e.what());
  }

  std::size_t expected_count = 0;
  for_each_tensor(a.params, [&](const std::string&, const Tensor<float>&) { ++expected_count; });
  const auto count = in.get<std::uint32_t>();
  if (count != expected_count) {
    throw FormatError("artifact has " + std::to_string(count) + " tensors, metadata implies " +
                      std::to_string(expected_count));
  }
  for_each_tensor(a.params, [&](const std::string& name, Tensor<float>& t) {
    const auto name_len = in.get<std::uint32_t>();
    const auto stored = in.take(name_len);
    if (stored != name) {
      throw FormatError("expected tensor '" + name + "', found '" + std::string(stored) + "'");
    }
    const auto rank = in.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& dim : shape) dim = static_cast<std::size_t>(in.get<std::uint64_t>());
    if (shape != t.shape()) throw FormatError("shape mismatch for tensor '" + name + "'");
    for (auto& v : t.values()) v = std::bit_cast<float>(in.get<std::uint32_t>());
  });
  if (!in.done()) throw FormatError("trailing bytes after the last tensor");
  return a;
}

void save_artifact(const std::filesystem::path& path, const ModelArtifact& artifact) {
  const std::string bytes = serialize_artifact(artifact);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw UsageError("failed writing " + path.string());
}

ModelArtifact load_artifact(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_artifact(bytes);
}

}  // namespace delaes
