// SPDX-License-Identifier: Apache-2.0
#include "delaes/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "delaes/config.hpp"
#include "delaes/errors.hpp"
#include "delaes/metrics.hpp"

namespace delaes {

std::vector<std::size_t> FoldPlan::members(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == fold) out.push_back(i);
  }
  return out;
}

FoldPlan plan_folds(const EssaySet& set, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw UsageError("k must be >= 2, got " + std::to_string(k));
  if (set.size() < k) {
    throw UsageError("cannot split " + std::to_string(set.size()) + " essays into " +
                     std::to_string(k) + " folds");
  }
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.fold_of.assign(set.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    plan.fold_of[order[i]] = i % k;
    plan.fold_by_id[set.essays[order[i]].essay_id] = i % k;
  }
  return plan;
}

std::vector<RoundSplit> plan_rounds(const FoldPlan& plan, bool full_rotation) {
  const std::size_t k = plan.k;
  const std::size_t n_test = std::max<std::size_t>(1, (k + 4) / 5);
  const std::size_t n_val =
      k - n_test >= 2 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(k / 10.0))) : 0;
  const std::size_t advance = full_rotation ? 1 : n_test;
  const std::size_t rounds = full_rotation ? k : (k + n_test - 1) / n_test;

  std::vector<RoundSplit> out;
  for (std::size_t r = 0; r < rounds; ++r) {
    RoundSplit split;
    split.round = r;
    std::vector<int> role(k, 0);  // 0 train, 1 val, 2 test
    for (std::size_t i = 0; i < n_test; ++i) {
      const std::size_t f = (r * advance + i) % k;
      split.test_folds.push_back(f);
      role[f] = 2;
    }
    for (std::size_t i = 0; i < n_val; ++i) {
      const std::size_t f = (r * advance + n_test + i) % k;
      split.val_folds.push_back(f);
      role[f] = 1;
    }
    for (std::size_t pos = 0; pos < plan.fold_of.size(); ++pos) {
      switch (role[plan.fold_of[pos]]) {
        case 0: split.train.push_back(pos); break;
        case 1: split.val.push_back(pos); break;
        default: split.test.push_back(pos); break;
      }
    }
    if (n_val == 0) {
      // 10:70 validation-to-training ratio.
      const std::size_t carve = std::max<std::size_t>(1, (split.train.size() + 7) / 8);
      if (split.train.size() < 2) throw UsageError("too few essays to carve a validation set");
      split.val.assign(split.train.end() - static_cast<std::ptrdiff_t>(carve), split.train.end());
      split.train.resize(split.train.size() - carve);
    }
    out.push_back(std::move(split));
  }
  return out;
}

VocabularyBuilder default_vocabulary_builder(int min_count) {
  return [min_count](const EssaySet& training) { return build_vocabulary(training, min_count); };
}

CvReport run_cv(const EssaySet& set, const VocabularyBuilder& build_vocab,
                const EmbeddingTable& embeddings, const TrainConfig& cfg, std::size_t k,
                std::uint64_t seed, const CvOptions& options) {
  cfg.validate();
  const FoldPlan plan = plan_folds(set, k, seed);
  CvReport report;
  report.prompt_id = set.prompt_id;
  report.range = set.range;
  report.k = k;
  report.seed = seed;
  report.config = cfg;

  std::vector<int> pooled_actual, pooled_predicted;
  for (const RoundSplit& split : plan_rounds(plan, options.full_rotation)) {
    const EssaySet train_set = set.subset(split.train);
    const EssaySet val_set = set.subset(split.val);
    const EssaySet test_set = set.subset(split.test);
    const Vocabulary vocab = build_vocab(train_set);

    TrainConfig round_cfg = cfg;
    round_cfg.seed = derive_seed(cfg.seed, 50 + split.round);
    EpochCallback cb;
    if (options.on_epoch) {
      cb = [&, r = split.round](const EpochRecord& rec) { options.on_epoch(r, rec); };
    }
    const TrainResult trained = train(train_set, val_set, vocab, embeddings, round_cfg, cb);

    RoundReport rr;
    rr.round = split.round;
    rr.test_folds = split.test_folds;
    rr.n_train = train_set.size();
    rr.n_val = val_set.size();
    rr.n_test = test_set.size();
    rr.best_epoch = trained.best_epoch;
    rr.best_val_qwk = trained.best_val_qwk;
    rr.history = trained.history;
    rr.test_predicted = predict_scores(test_set, vocab, trained.best, cfg.threads);
    for (const auto& e : test_set.essays) {
      rr.test_ids.push_back(e.essay_id);
      rr.test_actual.push_back(e.raw_score);
    }
    rr.qwk = qwk(rr.test_actual, rr.test_predicted, set.range);
    pooled_actual.insert(pooled_actual.end(), rr.test_actual.begin(), rr.test_actual.end());
    pooled_predicted.insert(pooled_predicted.end(), rr.test_predicted.begin(),
                            rr.test_predicted.end());
    report.rounds.push_back(std::move(rr));
  }

  double sum = 0.0;
  for (const auto& r : report.rounds) sum += r.qwk;
  report.mean_qwk = sum / static_cast<double>(report.rounds.size());
  report.pooled_qwk = qwk(pooled_actual, pooled_predicted, set.range);
  return report;
}

std::string cv_report_json(const CvReport& report) {
  nlohmann::ordered_json j;
  j["prompt"] = report.prompt_id;
  j["score_range"] = {report.range.min, report.range.max};
  j["k"] = report.k;
  j["seed"] = report.seed;
  j["config"] = nlohmann::ordered_json::object();
  for (const auto& [key, value] : config_entries(report.config)) j["config"][key] = value;
  j["mean_qwk"] = report.mean_qwk;
  j["pooled_qwk"] = report.pooled_qwk;
  auto& rounds = j["rounds"] = nlohmann::ordered_json::array();
  for (const auto& r : report.rounds) {
    nlohmann::ordered_json jr;
    jr["fold"] = r.round;
    jr["test_folds"] = r.test_folds;
    jr["n_train"] = r.n_train;
    jr["n_val"] = r.n_val;
    jr["n_test"] = r.n_test;
    jr["qwk"] = r.qwk;
    jr["best_epoch"] = r.best_epoch;
    jr["best_val_qwk"] = r.best_val_qwk;
    auto& hist = jr["history"] = nlohmann::ordered_json::array();
    for (const auto& h : r.history) {
      hist.push_back({{"epoch", h.epoch}, {"train_mse", h.train_mse}, {"val_qwk", h.val_qwk}});
    }
    rounds.push_back(std::move(jr));
  }
  return j.dump(2) + "\n";
}

std::string cv_report_csv(const CvReport& report) {
  std::ostringstream out;
  out.precision(9);
  out << "fold,qwk\n";
  for (const auto& r : report.rounds) out << r.round << ',' << r.qwk << '\n';
  return out.str();
}

}  // namespace delaes
