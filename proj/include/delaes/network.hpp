// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "delaes/embedding.hpp"
#include "delaes/random.hpp"
#include "delaes/tensor.hpp"

namespace delaes {

/// How a channel's bidirectional GRU outputs are reduced to one vector.
enum class SummaryMode {
  last,  // [forward state at last real step, backward state at first real step]
  mean,  // mean over real steps of [forward_t, backward_t]
};

std::string to_string(SummaryMode mode);
SummaryMode parse_summary_mode(std::string_view text);

/// Shape-determining hyperparameters of the scoring network.
struct Architecture {
  std::size_t embedding_dim = 300;
  std::vector<std::size_t> windows{2, 3, 4};
  std::size_t filters = 100;
  std::size_t hidden = 128;
  std::size_t pool = 2;
  std::size_t stride = 2;
  double dropout = 0.4;
  SummaryMode summary = SummaryMode::last;

  std::size_t channels() const { return windows.size(); }
  std::size_t head_width() const { return channels() * 2 * hidden; }
  std::size_t max_window() const;
  /// Throws UsageError on non-positive sizes or a dropout outside [0,1).
  void validate() const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

template <typename T>
struct ConvChannel {
  std::size_t window = 1;
  Tensor<T> weights;  // filters x (embedding_dim * window)
  Tensor<T> bias;     // filters

  std::size_t filters() const { return weights.rows(); }
};

/// Convolution or pooling output. Row t holds the activations of every
/// filter at position t, so the map is width x filters.
template <typename T>
struct FeatureMap {
  Tensor<T> values;

  std::size_t width() const { return values.rows(); }
  std::size_t filters() const { return values.cols(); }
  T at(std::size_t filter, std::size_t position) const { return values(position, filter); }
};

/// One direction of a GRU. No bias terms.
template <typename T>
struct GruDirection {
  Tensor<T> w_update, w_reset, w_candidate;  // hidden x input
  Tensor<T> u_update, u_reset, u_candidate;  // hidden x hidden

  std::size_t hidden() const { return w_update.rows(); }
  std::size_t input() const { return w_update.cols(); }
};

template <typename T>
struct GruParameters {
  GruDirection<T> forward;
  GruDirection<T> backward;
};

template <typename T>
struct DenseHead {
  Tensor<T> weights;  // 1 x head_width
  Tensor<T> bias;     // 1
};

template <typename T>
struct ModelParameters {
  Architecture arch;
  EmbeddingMatrix<T> embedding;
  std::vector<ConvChannel<T>> conv;
  std::vector<GruParameters<T>> gru;
  DenseHead<T> head;

  template <typename U>
  ModelParameters<U> cast() const;
};

/// Shape-matched carrier for dLoss/dParameter.
template <typename T>
using Gradients = ModelParameters<T>;

/// Calls fn(name, tensor) for every parameter tensor in a fixed order.
/// Works for const and non-const parameter sets.
template <typename Params, typename Fn>
void for_each_tensor(Params& params, Fn&& fn) {
  fn(std::string("embedding"), params.embedding.weights);
  for (std::size_t c = 0; c < params.conv.size(); ++c) {
    const std::string p = "conv" + std::to_string(c) + ".";
    fn(p + "weights", params.conv[c].weights);
    fn(p + "bias", params.conv[c].bias);
  }
  for (std::size_t c = 0; c < params.gru.size(); ++c) {
    for (int dir = 0; dir < 2; ++dir) {
      auto& g = dir == 0 ? params.gru[c].forward : params.gru[c].backward;
      const std::string p = "gru" + std::to_string(c) + (dir == 0 ? ".fwd." : ".bwd.");
      fn(p + "w_update", g.w_update);
      fn(p + "w_reset", g.w_reset);
      fn(p + "w_candidate", g.w_candidate);
      fn(p + "u_update", g.u_update);
      fn(p + "u_reset", g.u_reset);
      fn(p + "u_candidate", g.u_candidate);
    }
  }
  fn(std::string("head.weights"), params.head.weights);
  fn(std::string("head.bias"), params.head.bias);
}

/// Same layout as `params`, every entry zero.
template <typename T>
ModelParameters<T> zeros_like(const ModelParameters<T>& params);

/// Every tensor zero, shaped for `arch` and a vocabulary of `vocab_size`.
ModelParameters<float> zero_parameters(const Architecture& arch, std::size_t vocab_size);

/// Glorot-uniform weights, zero biases. `embedding` must match arch.embedding_dim.
ModelParameters<float> init_parameters(const Architecture& arch, EmbeddingMatrix<float> embedding,
                                       std::uint64_t seed);

/// Valid 1-D convolution followed by ReLU. `embedded` is m x d (one row per
/// token); requires m >= window.
template <typename T>
FeatureMap<T> conv1d_forward(const Tensor<T>& embedded, const ConvChannel<T>& channel);

/// Output width of temporal max-pooling: ceil((width - pool) / stride) + 1,
/// keeping a final partial window, at least 1.
std::size_t pooled_width(std::size_t width, std::size_t pool, std::size_t stride);

template <typename T>
FeatureMap<T> maxpool(const FeatureMap<T>& map, std::size_t pool, std::size_t stride);

/// Gate values of one GRU step.
template <typename T>
struct GruStep {
  std::vector<T> update;     // z
  std::vector<T> reset;      // r
  std::vector<T> candidate;  // tanh proposal
  std::vector<T> hidden;     // new state
};

template <typename T>
GruStep<T> gru_step_detail(std::span<const T> x, std::span<const T> h_prev,
                           const GruDirection<T>& p);

template <typename T>
std::vector<T> gru_step(std::span<const T> x, std::span<const T> h_prev, const GruDirection<T>& p) {
  return gru_step_detail(x, h_prev, p).hidden;
}

template <typename T>
struct BiGruOutput {
  Tensor<T> outputs;      // steps x 2H, row t = [forward_t, backward_t]
  std::vector<T> summary;  // 2H
};

/// Per-direction intermediates, indexed by time (row t is position t for
/// both directions).
template <typename T>
struct GruDirectionTrace {
  Tensor<T> h_prev, update, reset, candidate, hidden;  // steps x H
};

template <typename T>
struct BiGruTrace {
  std::vector<std::uint8_t> mask;  // one entry per step, 1 = real
  SummaryMode mode = SummaryMode::last;
  GruDirectionTrace<T> forward, backward;
  BiGruOutput<T> result;
};

/// Runs both directions from zero state. Steps with mask 0 carry the previous
/// state unchanged. An empty mask means every step is real.
template <typename T>
BiGruTrace<T> bigru_trace(const Tensor<T>& sequence, const GruParameters<T>& p,
                          std::span<const std::uint8_t> mask = {},
                          SummaryMode summary = SummaryMode::last);

template <typename T>
BiGruOutput<T> bigru_forward(const Tensor<T>& sequence, const GruParameters<T>& p,
                             std::span<const std::uint8_t> mask = {},
                             SummaryMode summary = SummaryMode::last) {
  return bigru_trace(sequence, p, mask, summary).result;
}

/// Inverted-dropout scale factors: 0 with probability p, else 1/(1-p).
template <typename T>
std::vector<T> dropout_scale(std::size_t n, double p, Rng& rng);

template <typename T>
std::vector<T> dropout(std::span<const T> v, double p, Rng& rng, bool training);

/// Number of leading positions before the trailing run of PAD indices.
std::size_t real_length(std::span<const std::int32_t> indices);

/// Cached intermediates of one channel for a single essay.
template <typename T>
struct ChannelTrace {
  std::size_t length = 0;       // tokens seen by this channel, >= window
  Tensor<T> pre_activation;     // conv width x filters, before ReLU
  FeatureMap<T> activation;     // after ReLU
  FeatureMap<T> pooled;         // pooled width x filters
  std::vector<std::uint32_t> argmax;  // pooled width x filters, source conv position
  BiGruTrace<T> gru;
};

/// Everything forward computes for one essay, kept for the reverse pass.
template <typename T>
struct EssayTrace {
  std::vector<std::int32_t> indices;  // real tokens, PAD-extended to the largest window
  std::size_t real_length = 0;
  Tensor<T> embedded;                 // indices.size() x d
  std::vector<ChannelTrace<T>> channels;
  std::vector<T> features;            // concatenated summaries, before dropout
  std::vector<T> dropout_scale;       // empty in inference mode
  T logit{};
  T output{};
};

/// Forward pass keeping intermediates. `dropout_scale` (length head_width)
/// selects training mode; empty means inference.
template <typename T>
EssayTrace<T> trace_forward(std::span<const std::int32_t> indices, const ModelParameters<T>& params,
                            std::span<const T> dropout_scale = {});

/// Normalized score in (0,1). Trailing PAD indices are masked out. Passing a
/// generator enables training-mode dropout.
template <typename T>
T forward(std::span<const std::int32_t> indices, const ModelParameters<T>& params,
          Rng* dropout_rng = nullptr);

template <typename T>
inline T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

}  // namespace delaes
