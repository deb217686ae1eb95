// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "delaes/embedding.hpp"
#include "delaes/errors.hpp"
#include "support.hpp"

using namespace delaes;
using delaes::testing::ScratchDir;
using delaes::testing::write_file;

TEST_CASE("load_embeddings") {
  ScratchDir dir("emb");
  const auto path = dir / "vec.txt";

  write_file(path, "a 1.0 2.0\nb 0.0 1.0");
  EmbeddingTable t = load_embeddings(path, 2);
  CHECK(t.size() == 2);
  REQUIRE(t.find("a") != nullptr);
  CHECK(t.find("a")[1] == 2.0f);
  CHECK(t.find("c") == nullptr);

  std::string big = "2 300\n";
  for (const char* tok : {"x", "y"}) {
    big += tok;
    for (int i = 0; i < 300; ++i) big += " 0.25";
    big += "\n";
  }
  write_file(path, big);
  CHECK(load_embeddings(path, 300).size() == 2);

  write_file(path, "a 1.0\n");
  try {
    load_embeddings(path, 2);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":1:") != std::string::npos);
  }

  write_file(path, "a 1.0 2.0\nb 1.0 oops\n");
  try {
    load_embeddings(path, 2);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  write_file(path, "a 1 2\na 3 4\nb -1e-2 5E1\r\n");
  t = load_embeddings(path, 2);
  CHECK(t.size() == 2);
  CHECK(t.find("a")[0] == 1.0f);
  CHECK(t.find("b")[0] == -0.01f);
  CHECK(t.find("b")[1] == 50.0f);

  t = load_embeddings(path, 2, [](std::string_view tok) { return tok == "b"; });
  CHECK(t.size() == 1);
  CHECK(t.find("a") == nullptr);
}

TEST_CASE("build_embedding_matrix") {
  EmbeddingTable table(2);
  const float a[] = {1.0f, 2.0f};
  table.add("a", a);
  const auto vocab = Vocabulary::from_tokens({"a", "zzz"});

  const auto m = build_embedding_matrix(vocab, table, 7);
  CHECK(m.vocabulary_size() == 4);
  CHECK(m.dimension() == 2);
  CHECK(m.weights(0, 0) == 0.0f);
  CHECK(m.weights(0, 1) == 0.0f);
  CHECK(m.weights(2, 0) == 1.0f);
  CHECK(m.weights(2, 1) == 2.0f);

  // Oracle: UNK (row 1) then "zzz" (row 3) draw in index order from the seeded stream.
  Rng rng(7);
  for (std::size_t row : {1u, 3u}) {
    for (std::size_t c = 0; c < 2; ++c) {
      const auto expected = static_cast<float>(rng.uniform(-kOovInitScale, kOovInitScale));
      CHECK(m.weights(row, c) == expected);
      CHECK(std::abs(m.weights(row, c)) <= 0.05f);
    }
  }
  CHECK(build_embedding_matrix(vocab, table, 7).weights == m.weights);
  CHECK_FALSE(build_embedding_matrix(vocab, table, 8).weights == m.weights);
}

TEST_CASE("embed is a row lookup") {
  EmbeddingMatrix<float> m{Tensor<float>::matrix(4, 2), true};
  for (std::size_t r = 1; r < 4; ++r) {
    m.weights(r, 0) = float(r);
    m.weights(r, 1) = float(10 * r);
  }
  const auto vocab = Vocabulary::from_tokens({"a", "b"});
  const std::vector<std::string> tokens{"a", "unknown", "b"};
  const auto e = embed<float>(tokens, vocab, m);
  REQUIRE(e.rows() == 3);
  CHECK(e(0, 0) == 2.0f);
  CHECK(e(0, 1) == 20.0f);
  CHECK(e(1, 0) == 1.0f);  // UNK row
  CHECK(e(2, 1) == 30.0f);

  const std::vector<std::string> swapped{"b", "unknown", "a"};
  const auto s = embed<float>(swapped, vocab, m);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(s(0, c) == e(2, c));
    CHECK(s(1, c) == e(1, c));
    CHECK(s(2, c) == e(0, c));
  }

  EmbeddingMatrix<float> wide{Tensor<float>::matrix(3, 300), true};
  const std::vector<std::int32_t> idx(350, 2);
  const auto big = embed<float>(idx, wide);
  CHECK(big.rows() == 350);
  CHECK(big.cols() == 300);
}
