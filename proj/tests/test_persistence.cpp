// SPDX-License-Identifier: Apache-2.0
// Configuration parsing and model artifacts.
#include <doctest.h>

#include <bit>
#include <cstring>

#include "delaes/artifact.hpp"
#include "delaes/config.hpp"
#include "delaes/errors.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace delaes;
using namespace delaes::testing;

TEST_CASE("config text") {
  RunConfig cfg;
  apply_config_text(cfg,
                    "# reduced run\n"
                    "epochs = 10\n"
                    "windows=2,3\n"
                    "\n"
                    "dropout=0.25\n"
                    "summary=mean\n"
                    "train_embeddings=false\n"
                    "range.1=2:12\n");
  CHECK(cfg.train.epochs == 10);
  CHECK(cfg.train.windows == std::vector<std::size_t>{2, 3});
  CHECK(cfg.train.dropout == 0.25);
  CHECK(cfg.train.summary == SummaryMode::mean);
  CHECK_FALSE(cfg.train.train_embeddings);
  CHECK(cfg.range_for(1) == ScoreRange{1, 2, 12});
  CHECK(cfg.range_for(2) == default_score_range(2));
  CHECK(cfg.train.filters == 100);  // untouched keys keep their defaults

  CHECK_THROWS_AS(apply_config_text(cfg, "filterz=3\n"), UsageError);
  CHECK_THROWS_AS(apply_config_text(cfg, "filters\n"), UsageError);
  CHECK_THROWS_AS(apply_config_text(cfg, "filters=ten\n"), UsageError);
  CHECK_THROWS_AS(apply_config_text(cfg, "summary=max\n"), UsageError);
  CHECK_THROWS_AS(apply_config_text(cfg, "range.1=12\n"), UsageError);
}

TEST_CASE("config entries round-trip") {
  TrainConfig t;
  t.windows = {3, 5};
  t.learning_rate = 0.0003;
  t.dropout = 0.1;
  t.epsilon = 1e-8;
  t.seed = 123456789012345ULL;
  t.summary = SummaryMode::mean;
  t.reshuffle = false;
  RunConfig back;
  for (const auto& [k, v] : config_entries(t)) apply_setting(back, k, v);
  CHECK(back.train == t);

  const auto entries = config_entries(TrainConfig{});
  CHECK(entries.front() == std::pair<std::string, std::string>{"windows", "2,3,4"});
  CHECK(format_real(0.001) == "0.001");
  CHECK(format_real(0.4) == "0.4");
}

TEST_CASE("artifact round-trip") {
  const auto set = keyword_corpus(16);
  const auto vocab = build_vocabulary(set);
  auto cfg = reduced_config();
  cfg.epochs = 3;
  const auto trained = train(set, set, vocab, EmbeddingTable(8), cfg);

  ModelArtifact a{cfg, 1, ScoreRange{1, 0, 2}, vocab, std::nullopt, trained.best};
  const std::string bytes = serialize_artifact(a);
  CHECK(bytes.substr(0, 8) == "DELAES01");
  CHECK(serialize_artifact(a) == bytes);

  const ModelArtifact b = parse_artifact(bytes);
  CHECK(b.config == cfg);
  CHECK(b.prompt_id == 1);
  CHECK(b.range == a.range);
  CHECK(b.vocab == vocab);
  CHECK_FALSE(b.created.has_value());
  CHECK(b.params.arch == a.params.arch);
  std::vector<const Tensor<float>*> original;
  for_each_tensor(a.params, [&](const std::string&, const Tensor<float>& t) { original.push_back(&t); });
  std::size_t n = 0;
  for_each_tensor(b.params, [&](const std::string& name, const Tensor<float>& t) {
    CAPTURE(name);
    const auto& o = *original[n++];
    REQUIRE(t.shape() == o.shape());
    CHECK(std::memcmp(t.data(), o.data(), t.size() * sizeof(float)) == 0);
  });
  CHECK(serialize_artifact(b) == bytes);

  for (const auto& e : set.essays) {
    const auto idx = vocab.encode(e.tokens);
    CHECK(std::bit_cast<std::uint32_t>(forward<float>(idx, b.params)) ==
          std::bit_cast<std::uint32_t>(forward<float>(idx, a.params)));
  }

  a.created = "2026-10-17T00:00:00Z";
  CHECK(parse_artifact(serialize_artifact(a)).created == a.created);

  ScratchDir dir("artifact");
  save_artifact(dir / "m.bin", a);
  CHECK(read_file(dir / "m.bin") == serialize_artifact(a));
  CHECK(load_artifact(dir / "m.bin").vocab == vocab);
}

TEST_CASE("artifact rejection") {
  auto p = zero_parameters(tiny_architecture(), 4);
  TrainConfig cfg;
  cfg.windows = {2, 3};
  cfg.filters = 3;
  cfg.hidden = 4;
  cfg.embedding_dim = 8;
  cfg.dropout = 0.0;
  const ModelArtifact a{cfg, 2, ScoreRange{2, 1, 6}, Vocabulary::from_tokens({"x", "y"}), std::nullopt, p};
  const std::string good = serialize_artifact(a);
  CHECK_NOTHROW(parse_artifact(good));

  try {
    parse_artifact("DELAES00" + good.substr(8));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()) == "not a DELAES01 artifact");
  }
  CHECK_THROWS_AS(parse_artifact("short"), FormatError);
  CHECK_THROWS_AS(parse_artifact(good.substr(0, good.size() - 3)), FormatError);
  CHECK_THROWS_AS(parse_artifact(good + "x"), FormatError);

  // A model whose stored shapes disagree with the metadata.
  ModelArtifact wrong = a;
  wrong.config.filters = 4;
  const std::string meta_from_wrong = serialize_artifact(wrong);
  const auto meta_len = [](const std::string& s) {
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i) n = (n << 8) | static_cast<unsigned char>(s[8 + std::size_t(i)]);
    return n;
  };
  const std::string spliced = meta_from_wrong.substr(0, 16 + meta_len(meta_from_wrong)) +
                              good.substr(16 + meta_len(good));
  CHECK_THROWS_AS(parse_artifact(spliced), FormatError);
}
