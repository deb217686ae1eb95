// SPDX-License-Identifier: Apache-2.0
// Command-line front end: train, predict, eval, cv.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>

#include <CLI11.hpp>

#include "delaes/artifact.hpp"
#include "delaes/config.hpp"
#include "delaes/corpus.hpp"
#include "delaes/embedding.hpp"
#include "delaes/errors.hpp"
#include "delaes/harness.hpp"
#include "delaes/metrics.hpp"
#include "delaes/training.hpp"

namespace fs = std::filesystem;
using namespace delaes;

namespace {

constexpr int kExitData = 1;
constexpr int kExitUsage = 2;

// Bad flag values discovered after parsing map to the usage exit code.
struct FlagError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonFlags {
  std::string data;
  int prompt = 0;
  std::string embeddings;
  std::string out;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string encoding = "latin1";
  std::string range;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> threads;
  bool verbose = false;
};

void add_training_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--data", f.data, "ASAP-format TSV file")->required();
  cmd->add_option("--prompt", f.prompt, "essay set (1-8)")->required()->check(CLI::Range(1, 8));
  cmd->add_option("--embeddings", f.embeddings, "word vectors in text format")->required();
  cmd->add_option("--out", f.out, "output path")->required();
  cmd->add_option("--config", f.config, "key=value configuration file");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--encoding", f.encoding, "input encoding")
      ->check(CLI::IsMember({"utf8", "latin1"}));
  cmd->add_option("--range", f.range, "score range MIN:MAX, overrides the prompt default");
  cmd->add_option("--epochs", f.epochs, "number of epochs");
  cmd->add_option("--threads", f.threads, "worker threads per batch");
  cmd->add_flag("-v,--verbose", f.verbose, "print per-epoch progress");
}

RunConfig resolve_config(const CommonFlags& f) {
  RunConfig cfg;
  try {
    if (!f.config.empty()) apply_config_file(cfg, f.config);
    if (f.seed) cfg.train.seed = *f.seed;
    if (f.epochs) cfg.train.epochs = *f.epochs;
    if (f.threads) cfg.train.threads = *f.threads;
    if (!f.range.empty()) cfg.ranges[f.prompt] = parse_score_range(f.range, f.prompt);
    cfg.train.validate();
  } catch (const UsageError& e) {
    throw FlagError(e.what());
  }
  return cfg;
}

EmbeddingTable load_for_vocabulary(const std::string& path, std::size_t dim,
                                   const Vocabulary& vocab) {
  return load_embeddings(path, dim, [&](std::string_view token) { return vocab.contains(token); });
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path.string());
  out << text;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

int cmd_train(const CommonFlags& f, const std::string& history_path, const std::string& created) {
  const RunConfig cfg = resolve_config(f);
  const ScoreRange range = cfg.range_for(f.prompt);
  const EssaySet set = load_dataset(f.data, f.prompt, range, parse_encoding(f.encoding));
  if (set.size() < 2) {
    throw UsageError("prompt " + std::to_string(f.prompt) + " has " + std::to_string(set.size()) +
                     " essays; at least 2 are needed");
  }
  // Hold out one fold of ten (or one essay per fold for tiny sets) for model selection.
  const FoldPlan plan = plan_folds(set, std::min<std::size_t>(10, set.size()), cfg.train.seed);
  const auto val_pos = plan.members(0);
  std::vector<std::size_t> train_pos;
  for (std::size_t fold = 1; fold < plan.k; ++fold) {
    const auto m = plan.members(fold);
    train_pos.insert(train_pos.end(), m.begin(), m.end());
  }
  std::sort(train_pos.begin(), train_pos.end());
  const EssaySet train_set = set.subset(train_pos);
  const EssaySet val_set = set.subset(val_pos);

  const Vocabulary vocab = build_vocabulary(train_set, cfg.train.min_count);
  const EmbeddingTable table = load_for_vocabulary(f.embeddings, cfg.train.embedding_dim, vocab);
  if (f.verbose) {
    std::cerr << "train=" << train_set.size() << " val=" << val_set.size()
              << " vocabulary=" << vocab.size() << " pretrained=" << table.size() << "\n";
  }
  const TrainResult result =
      train(train_set, val_set, vocab, table, cfg.train, [&](const EpochRecord& r) {
        if (f.verbose) {
          std::cerr << "epoch " << r.epoch << " train_mse=" << r.train_mse
                    << " val_qwk=" << fixed4(r.val_qwk) << "\n";
        }
      });

  ModelArtifact artifact{cfg.train, f.prompt, range, vocab, std::nullopt, result.best};
  if (!created.empty()) artifact.created = created;
  save_artifact(f.out, artifact);
  write_text(history_path.empty() ? f.out + ".history.csv" : history_path,
             history_csv(result.history));
  std::cout << "val_qwk " << fixed4(result.best_val_qwk) << " (epoch " << result.best_epoch
            << ")\n";
  return 0;
}

int cmd_predict(const std::string& model_path, const std::string& data_path,
                const std::string& out_path, const std::string& encoding) {
  const ModelArtifact model = load_artifact(model_path);
  const auto essays = load_unscored(data_path, model.prompt_id, parse_encoding(encoding));
  std::vector<IdScore> rows;
  rows.reserve(essays.size());
  for (const auto& e : essays) {
    const auto indices = model.vocab.encode(e.tokens);
    const double y = forward<float>(indices, model.params);
    rows.push_back({e.essay_id, denormalize_score(y, model.range)});
  }
  write_score_csv(out_path, rows);
  return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gold_path, const std::string& range_text) {
  ScoreRange range;
  try {
    range = parse_score_range(range_text);
  } catch (const UsageError& e) {
    throw FlagError(e.what());
  }
  const auto pred = read_score_csv(pred_path);
  const auto gold = read_score_csv(gold_path);
  std::map<std::int64_t, int> gold_by_id;
  for (const auto& g : gold) gold_by_id[g.essay_id] = g.score;
  std::map<std::int64_t, int> pred_by_id;
  for (const auto& p : pred) {
    if (!gold_by_id.contains(p.essay_id)) {
      throw FormatError("id mismatch: essay " + std::to_string(p.essay_id) +
                        " is predicted but has no gold score");
    }
    pred_by_id[p.essay_id] = p.score;
  }
  std::vector<int> actual, predicted;
  for (const auto& g : gold) {
    const auto it = pred_by_id.find(g.essay_id);
    if (it == pred_by_id.end()) {
      throw FormatError("id mismatch: essay " + std::to_string(g.essay_id) + " has no prediction");
    }
    actual.push_back(g.score);
    predicted.push_back(it->second);
  }
  std::cout << fixed4(qwk(actual, predicted, range)) << "\n";
  return 0;
}

int cmd_cv(const CommonFlags& f, std::size_t k, bool full_rotation) {
  const RunConfig cfg = resolve_config(f);
  const ScoreRange range = cfg.range_for(f.prompt);
  const EssaySet set = load_dataset(f.data, f.prompt, range, parse_encoding(f.encoding));
  const Vocabulary all_tokens = build_vocabulary(set, 1);
  // Vectors for tokens outside a round's training vocabulary are never looked up.
  const EmbeddingTable table = load_for_vocabulary(f.embeddings, cfg.train.embedding_dim, all_tokens);

  CvOptions options;
  options.full_rotation = full_rotation;
  if (f.verbose) {
    options.on_epoch = [](std::size_t round, const EpochRecord& r) {
      std::cerr << "round " << round << " epoch " << r.epoch << " train_mse=" << r.train_mse
                << " val_qwk=" << fixed4(r.val_qwk) << "\n";
    };
  }
  const std::uint64_t fold_seed = f.seed.value_or(cfg.train.seed);
  const CvReport report = run_cv(set, default_vocabulary_builder(cfg.train.min_count), table,
                                 cfg.train, k, fold_seed, options);

  fs::path json_path = f.out;
  if (json_path.extension() != ".json") json_path += ".json";
  fs::path csv_path = json_path;
  csv_path.replace_extension(".csv");
  write_text(json_path, cv_report_json(report));
  write_text(csv_path, cv_report_csv(report));
  for (const auto& r : report.rounds) std::cout << "fold " << r.round << " qwk " << fixed4(r.qwk) << "\n";
  std::cout << "mean_qwk " << fixed4(report.mean_qwk) << "\n";
  std::cout << "pooled_qwk " << fixed4(report.pooled_qwk) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Essay scoring with convolutional bidirectional GRU networks"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  std::string history_path, created;
  auto* train_cmd = app.add_subcommand("train", "train a model on one prompt");
  add_training_flags(train_cmd, train_flags);
  train_cmd->add_option("--history", history_path, "history CSV path (default OUT.history.csv)");
  train_cmd->add_option("--created", created, "creation stamp stored in the artifact");

  std::string model_path, data_path, out_path, encoding = "latin1";
  auto* predict_cmd = app.add_subcommand("predict", "score essays with a trained model");
  predict_cmd->add_option("--model", model_path, "model artifact")->required();
  predict_cmd->add_option("--data", data_path, "TSV with essay_id and essay columns")->required();
  predict_cmd->add_option("--out", out_path, "prediction CSV")->required();
  predict_cmd->add_option("--encoding", encoding, "input encoding")
      ->check(CLI::IsMember({"utf8", "latin1"}));

  std::string pred_path, gold_path, range_text;
  auto* eval_cmd = app.add_subcommand("eval", "quadratic weighted kappa of a prediction file");
  eval_cmd->add_option("--pred", pred_path, "essay_id,score predictions")->required();
  eval_cmd->add_option("--gold", gold_path, "essay_id,score reference")->required();
  eval_cmd->add_option("--range", range_text, "score range MIN:MAX")->required();

  CommonFlags cv_flags;
  std::size_t k = 10;
  bool full_rotation = false;
  auto* cv_cmd = app.add_subcommand("cv", "k-fold cross-validation on one prompt");
  add_training_flags(cv_cmd, cv_flags);
  cv_cmd->add_option("--k", k, "number of folds")->check(CLI::PositiveNumber);
  cv_cmd->add_flag("--full-rotation", full_rotation, "k rounds instead of one test pass per fold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(train_flags, history_path, created);
    if (*predict_cmd) return cmd_predict(model_path, data_path, out_path, encoding);
    if (*eval_cmd) return cmd_eval(pred_path, gold_path, range_text);
    if (*cv_cmd) return cmd_cv(cv_flags, k, full_rotation);
  } catch (const FlagError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
