// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "delaes/corpus.hpp"
#include "delaes/embedding.hpp"
#include "delaes/training.hpp"

namespace delaes {

/// Shuffled assignment of essays to k folds of near-equal size.
struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> fold_of;  // by position in the essay set
  std::map<std::int64_t, std::size_t> fold_by_id;

  std::vector<std::size_t> members(std::size_t fold) const;
};

FoldPlan plan_folds(const EssaySet& set, std::size_t k, std::uint64_t seed);

/// Essay positions taking each role in one evaluation round.
struct RoundSplit {
  std::size_t round = 0;
  std::vector<std::size_t> test_folds;
  std::vector<std::size_t> val_folds;  // empty when validation is carved from training
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Per round: ceil(k/5) consecutive test folds (at least 1), the next
/// round(k/10) folds (at least 1) for validation, the rest for training.
/// Test folds advance by the test-fold count, so each fold is tested once.
/// With full_rotation there are k rounds advancing by one fold. When fewer
/// than two folds remain after testing, the last eighth of the training
/// essays becomes the validation set.
std::vector<RoundSplit> plan_rounds(const FoldPlan& plan, bool full_rotation = false);

struct RoundReport {
  std::size_t round = 0;
  std::vector<std::size_t> test_folds;
  std::size_t n_train = 0, n_val = 0, n_test = 0;
  double qwk = 0.0;
  std::size_t best_epoch = 0;
  double best_val_qwk = 0.0;
  std::vector<EpochRecord> history;
  std::vector<std::int64_t> test_ids;
  std::vector<int> test_actual;
  std::vector<int> test_predicted;
};

struct CvReport {
  int prompt_id = 0;
  ScoreRange range;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  TrainConfig config;
  std::vector<RoundReport> rounds;
  double mean_qwk = 0.0;    // arithmetic mean of round QWKs
  double pooled_qwk = 0.0;  // QWK over all test predictions together
};

using VocabularyBuilder = std::function<Vocabulary(const EssaySet& training_essays)>;

/// Default builder: build_vocabulary with the given min_count.
VocabularyBuilder default_vocabulary_builder(int min_count = 1);

struct CvOptions {
  bool full_rotation = false;
  std::function<void(std::size_t round, const EpochRecord&)> on_epoch;
};

CvReport run_cv(const EssaySet& set, const VocabularyBuilder& build_vocab,
                const EmbeddingTable& embeddings, const TrainConfig& cfg, std::size_t k,
                std::uint64_t seed, const CvOptions& options = {});

std::string cv_report_json(const CvReport& report);
/// Rows "fold,qwk", one per round.
std::string cv_report_csv(const CvReport& report);

}  // namespace delaes
