// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "delaes/corpus.hpp"
#include "delaes/embedding.hpp"
#include "delaes/network.hpp"

namespace delaes {

/// Training hyperparameters. Defaults are the published best configuration.
struct TrainConfig {
  std::vector<std::size_t> windows{2, 3, 4};
  std::size_t filters = 100;
  std::size_t batch_size = 128;
  std::size_t hidden = 128;
  double dropout = 0.4;
  std::size_t epochs = 40;
  double learning_rate = 0.001;
  std::size_t embedding_dim = 300;
  std::size_t pool = 2;
  std::size_t stride = 2;
  std::uint64_t seed = 1;

  // Not part of the published table.
  double rho = 0.9;
  double epsilon = 1e-7;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 = off
  SummaryMode summary = SummaryMode::last;
  bool train_embeddings = true;
  bool reshuffle = true;  // false replays the first epoch's batch order
  int min_count = 1;
  std::size_t threads = 1;

  Architecture architecture() const;
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// B essays padded with PAD to the longest member.
struct Batch {
  std::size_t size = 0;
  std::size_t length = 0;
  std::vector<std::int32_t> indices;  // size x length, row-major
  std::vector<std::uint8_t> mask;     // 1 at non-PAD positions
  std::vector<double> targets;        // normalized scores
  std::vector<std::int64_t> essay_ids;

  std::span<const std::int32_t> row(std::size_t b) const {
    return {indices.data() + b * length, length};
  }
};

/// Shuffles essay order with `shuffle_seed` and cuts consecutive batches.
std::vector<Batch> make_batches(const EssaySet& set, const Vocabulary& vocab,
                                std::size_t batch_size, std::uint64_t shuffle_seed);

/// Mean over the batch of squared differences.
double mse_loss(std::span<const double> targets, std::span<const double> predictions);

// Layer reverse passes. Each accumulates parameter gradients into the given
// tensors and returns the gradient with respect to the layer input.

/// dOut is the gradient w.r.t. the post-ReLU map (width x filters). Returns
/// dEmbedded with embedded.rows() rows (rows past `length` stay zero).
template <typename T>
Tensor<T> conv1d_backward(const Tensor<T>& embedded, std::size_t length,
                          const ConvChannel<T>& channel, const Tensor<T>& pre_activation,
                          const Tensor<T>& d_out, ConvChannel<T>& grad);

template <typename T>
Tensor<T> maxpool_backward(std::span<const std::uint32_t> argmax, std::size_t input_width,
                           const Tensor<T>& d_pooled);

/// d_outputs may be empty (no per-step loss terms).
template <typename T>
Tensor<T> bigru_backward(const Tensor<T>& sequence, const GruParameters<T>& p,
                         const BiGruTrace<T>& trace, const Tensor<T>& d_outputs,
                         std::span<const T> d_summary, GruParameters<T>& grad);

/// Adds d(output)/d(params) * d_output for one essay to `grad`.
template <typename T>
void essay_backward(const EssayTrace<T>& trace, const ModelParameters<T>& params, T d_output,
                    Gradients<T>& grad);

template <typename T>
struct BackwardResult {
  double loss = 0.0;
  std::vector<double> predictions;
  Gradients<T> grads;
};

/// Loss and exact gradients of the batch MSE under the dropout realization
/// drawn from `dropout_seed`. Essays are processed on `threads` workers and
/// reduced in a fixed order, so results only depend on the thread count.
template <typename T>
BackwardResult<T> backward(const Batch& batch, const ModelParameters<T>& params,
                           std::uint64_t dropout_seed, std::size_t threads = 1);

struct RmsPropState {
  double rho = 0.9;
  double epsilon = 1e-7;
  double learning_rate = 0.001;
  std::vector<Tensor<float>> accumulators;  // for_each_tensor order

  static RmsPropState for_model(const ModelParameters<float>& params, const TrainConfig& cfg);
};

/// acc = rho*acc + (1-rho)*g^2; theta -= lr*g/(sqrt(acc)+eps). The PAD
/// embedding row is never updated.
void rmsprop_step(ModelParameters<float>& params, const Gradients<float>& grads,
                  RmsPropState& state);

/// Scales `grads` so its global L2 norm is at most max_norm.
void clip_gradients(Gradients<float>& grads, double max_norm);

/// Inference-mode normalized predictions, one per essay.
std::vector<double> predict_normalized(const EssaySet& set, const Vocabulary& vocab,
                                       const ModelParameters<float>& params,
                                       std::size_t threads = 1);

/// Integer scores in the set's range.
std::vector<int> predict_scores(const EssaySet& set, const Vocabulary& vocab,
                                const ModelParameters<float>& params, std::size_t threads = 1);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_mse = 0.0;  // inference-mode MSE on the training set after the epoch
  double val_qwk = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainResult {
  ModelParameters<float> best;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;  // 0 when no epoch ran
  double best_val_qwk = 0.0;
};

/// Parameters before the first update: table-initialized embeddings and
/// Glorot weights, both seeded from cfg.seed.
ModelParameters<float> initial_parameters(const Vocabulary& vocab, const EmbeddingTable& embeddings,
                                          const TrainConfig& cfg);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs cfg.epochs epochs and returns the snapshot with the best validation
/// QWK (earliest epoch on ties).
TrainResult train(const EssaySet& train_set, const EssaySet& val_set, const Vocabulary& vocab,
                  const EmbeddingTable& embeddings, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Comma-separated history with header "epoch,train_mse,val_qwk".
std::string history_csv(std::span<const EpochRecord> history);

/// Epoch numbers whose train_mse exceeds the previous epoch's.
std::vector<std::size_t> loss_increases(std::span<const EpochRecord> history);

}  // namespace delaes
