// SPDX-License-Identifier: Apache-2.0
// Runs the built command-line tool against fixtures written to a scratch directory.
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <json.hpp>
#include <sstream>

#include "delaes/artifact.hpp"
#include "delaes/metrics.hpp"
#include "support.hpp"

#ifndef DELAES_CLI_PATH
#error "DELAES_CLI_PATH must point at the built tool"
#endif

using namespace delaes;
using namespace delaes::testing;

namespace {

struct Run {
  int status = -1;
  std::string out;
  std::string err;
};

Run run(const ScratchDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string("'") + DELAES_CLI_PATH + "' " + args + " >'" + out.string() +
                          "' 2>'" + err.string() + "'";
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

struct Fixture {
  ScratchDir dir{"cli"};
  EssaySet set = keyword_corpus(32);

  Fixture() {
    write_tsv(dir / "essays.tsv", set);
    std::vector<std::string> tokens = filler_words();
    tokens.push_back("alpha");
    write_embeddings(dir / "vectors.txt", tokens, 8);
    write_file(dir / "reduced.cfg",
               "windows=2,3\nfilters=8\nhidden=8\nembedding_dim=8\nbatch_size=8\n"
               "dropout=0\nlearning_rate=0.01\nepochs=40\nrange.1=0:2\n");
  }

  std::string train_args(const std::string& out, const std::string& extra = "") const {
    return "train --data " + q(dir / "essays.tsv") + " --prompt 1 --embeddings " +
           q(dir / "vectors.txt") + " --config " + q(dir / "reduced.cfg") + " --out " +
           q(dir / out) + " " + extra;
  }
};

}  // namespace

TEST_CASE("usage errors exit with status 2") {
  Fixture f;
  CHECK(run(f.dir, "").status == 2);
  CHECK(run(f.dir, "bogus").status == 2);
  CHECK(run(f.dir, "train --prompt 1 --embeddings x --out y").status == 2);  // no --data
  CHECK(run(f.dir, f.train_args("m.bin", "--no-such-flag")).status == 2);
  CHECK(run(f.dir, f.train_args("m.bin", "--encoding ebcdic")).status == 2);
  CHECK(run(f.dir, f.train_args("m.bin", "--prompt 9")).status == 2);
  CHECK(run(f.dir, f.train_args("m.bin", "--range 5")).status == 2);
  write_file(f.dir / "bad.cfg", "filterz=3\n");
  const Run bad = run(f.dir, "train --data " + q(f.dir / "essays.tsv") +
                                 " --prompt 1 --embeddings " + q(f.dir / "vectors.txt") +
                                 " --config " + q(f.dir / "bad.cfg") + " --out " + q(f.dir / "m"));
  CHECK(bad.status == 2);
  CHECK(bad.err.find("filterz") != std::string::npos);
  CHECK(run(f.dir, "eval --pred a --gold b").status == 2);
  CHECK(run(f.dir, "--help").status == 0);
}

TEST_CASE("train, predict and eval") {
  Fixture f;
  const Run t1 = run(f.dir, f.train_args("a.bin", "--seed 4"));
  REQUIRE(t1.status == 0);
  CHECK(t1.out.rfind("val_qwk ", 0) == 0);
  REQUIRE(std::filesystem::exists(f.dir / "a.bin"));
  const std::string history = read_file(f.dir / "a.bin.history.csv");
  CHECK(history.rfind("epoch,train_mse,val_qwk\n", 0) == 0);
  CHECK(std::count(history.begin(), history.end(), '\n') == 41);

  const ModelArtifact model = load_artifact(f.dir / "a.bin");
  CHECK(model.range == ScoreRange{1, 0, 2});
  CHECK(model.config.seed == 4);
  CHECK(model.config.epochs == 40);

  SUBCASE("fixed seed gives byte-identical artifacts") {
    REQUIRE(run(f.dir, f.train_args("b.bin", "--seed 4 --history " + q(f.dir / "h.csv"))).status == 0);
    CHECK(read_file(f.dir / "a.bin") == read_file(f.dir / "b.bin"));
    CHECK(read_file(f.dir / "h.csv") == history);
    REQUIRE(run(f.dir, f.train_args("c.bin", "--seed 5")).status == 0);
    CHECK(read_file(f.dir / "a.bin") != read_file(f.dir / "c.bin"));
  }
  SUBCASE("predict matches in-memory scoring of the saved model") {
    const Run p = run(f.dir, "predict --model " + q(f.dir / "a.bin") + " --data " +
                                 q(f.dir / "essays.tsv") + " --out " + q(f.dir / "pred.csv"));
    REQUIRE(p.status == 0);
    const auto rows = read_score_csv(f.dir / "pred.csv");
    REQUIRE(rows.size() == f.set.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& e = f.set.essays[i];
      CHECK(rows[i].essay_id == e.essay_id);
      const float y = forward<float>(model.vocab.encode(e.tokens), model.params);
      CHECK(rows[i].score == denormalize_score(y, model.range));
    }

    std::vector<IdScore> gold;
    for (const auto& e : f.set.essays) gold.push_back({e.essay_id, e.raw_score});
    write_score_csv(f.dir / "gold.csv", gold);
    const Run same = run(f.dir, "eval --pred " + q(f.dir / "gold.csv") + " --gold " +
                                    q(f.dir / "gold.csv") + " --range 0:2");
    CHECK(same.status == 0);
    CHECK(same.out == "1.0000\n");
    const Run ev = run(f.dir, "eval --pred " + q(f.dir / "pred.csv") + " --gold " +
                                  q(f.dir / "gold.csv") + " --range 0:2");
    CHECK(ev.status == 0);
    CHECK(ev.out.size() == 7);
  }
  SUBCASE("out-of-range scores are data errors") {
    const Run r = run(f.dir, "train --data " + q(f.dir / "essays.tsv") + " --prompt 1 --embeddings " +
                                 q(f.dir / "vectors.txt") + " --epochs 1 --out " + q(f.dir / "x.bin"));
    CHECK(r.status == 1);
    CHECK(r.err.find("essay 100") != std::string::npos);
  }
}

TEST_CASE("predict edge cases") {
  ScratchDir dir("cli-predict");
  TrainConfig cfg;
  cfg.windows = {2, 3};
  cfg.filters = 3;
  cfg.hidden = 4;
  cfg.embedding_dim = 8;
  auto params = zero_parameters(cfg.architecture(), 4);
  Rng rng(1);
  for_each_tensor(params, [&](const std::string& name, Tensor<float>& t) {
    if (name.starts_with("head")) return;  // W_f = 0, b_f = 0
    for (auto& v : t.values()) v = float(rng.uniform(-1, 1));
  });
  for (auto& v : params.embedding.weights.row(0)) v = 0.0f;
  save_artifact(dir / "flat.bin",
                ModelArtifact{cfg, 1, ScoreRange{1, 2, 4}, Vocabulary::from_tokens({"a", "b"}),
                              std::nullopt, params});
  write_file(dir / "new.tsv", "essay_id\tessay\n7\tA b c\n8\tb\n9\tsomething else entirely\n");
  REQUIRE(run(dir, "predict --model " + q(dir / "flat.bin") + " --data " + q(dir / "new.tsv") +
                       " --out " + q(dir / "p.csv"))
              .status == 0);
  CHECK(read_file(dir / "p.csv") == "7,3\n8,3\n9,3\n");

  write_file(dir / "empty.tsv", "");
  const Run empty = run(dir, "predict --model " + q(dir / "flat.bin") + " --data " +
                                 q(dir / "empty.tsv") + " --out " + q(dir / "e.csv"));
  CHECK(empty.status == 0);
  CHECK(std::filesystem::exists(dir / "e.csv"));
  CHECK(read_file(dir / "e.csv").empty());

  write_file(dir / "junk.bin", "GGUF....");
  const Run junk = run(dir, "predict --model " + q(dir / "junk.bin") + " --data " +
                                q(dir / "new.tsv") + " --out " + q(dir / "j.csv"));
  CHECK(junk.status == 1);
  CHECK(junk.err.find("not a DELAES01 artifact") != std::string::npos);
}

TEST_CASE("eval") {
  ScratchDir dir("cli-eval");
  write_file(dir / "gold.csv", "1,1\n2,2\n3,3\n4,1\n");
  write_file(dir / "pred.csv", "essay_id,score\n4,2\n3,3\n2,2\n1,1\n");
  const Run r = run(dir, "eval --pred " + q(dir / "pred.csv") + " --gold " + q(dir / "gold.csv") +
                             " --range 1:3");
  CHECK(r.status == 0);
  CHECK(r.out == "0.8000\n");

  write_file(dir / "extra.csv", "1,1\n2,2\n3,3\n4,1\n77,2\n");
  const Run extra = run(dir, "eval --pred " + q(dir / "extra.csv") + " --gold " +
                                 q(dir / "gold.csv") + " --range 1:3");
  CHECK(extra.status == 1);
  CHECK(extra.err.find("77") != std::string::npos);

  write_file(dir / "missing.csv", "1,1\n2,2\n4,1\n");
  const Run missing = run(dir, "eval --pred " + q(dir / "missing.csv") + " --gold " +
                                   q(dir / "gold.csv") + " --range 1:3");
  CHECK(missing.status == 1);
  CHECK(missing.err.find("essay 3") != std::string::npos);

  const Run bad_range = run(dir, "eval --pred " + q(dir / "pred.csv") + " --gold " +
                                     q(dir / "gold.csv") + " --range 3");
  CHECK(bad_range.status == 2);
  const Run out_of_range = run(dir, "eval --pred " + q(dir / "pred.csv") + " --gold " +
                                        q(dir / "gold.csv") + " --range 1:2");
  CHECK(out_of_range.status == 1);
}

TEST_CASE("cv") {
  Fixture f;
  const std::string args = "cv --data " + q(f.dir / "essays.tsv") + " --prompt 1 --embeddings " +
                           q(f.dir / "vectors.txt") + " --config " + q(f.dir / "reduced.cfg") +
                           " --k 2 --seed 3 --epochs 20 --out ";
  const Run a = run(f.dir, args + q(f.dir / "a.json"));
  REQUIRE(a.status == 0);
  CHECK(a.out.find("mean_qwk") != std::string::npos);
  const auto report = nlohmann::json::parse(read_file(f.dir / "a.json"));
  CHECK(report["rounds"].size() == 2);
  CHECK(report["k"] == 2);
  CHECK(report["seed"] == 3);
  const std::string csv = read_file(f.dir / "a.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  REQUIRE(run(f.dir, args + q(f.dir / "b.json")).status == 0);
  CHECK(read_file(f.dir / "a.json") == read_file(f.dir / "b.json"));
  CHECK(read_file(f.dir / "a.csv") == read_file(f.dir / "b.csv"));

  const Run too_many = run(f.dir, "cv --data " + q(f.dir / "essays.tsv") +
                                      " --prompt 1 --embeddings " + q(f.dir / "vectors.txt") +
                                      " --config " + q(f.dir / "reduced.cfg") +
                                      " --k 40 --seed 3 --out " + q(f.dir / "c.json"));
  CHECK(too_many.status == 1);
  CHECK(too_many.err.find("40 folds") != std::string::npos);
}
