// SPDX-License-Identifier: Apache-2.0
#include "delaes/training.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "delaes/errors.hpp"
#include "delaes/metrics.hpp"

namespace delaes {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Runs fn(begin, end, worker) over [0, n) split into contiguous chunks.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    fn(std::size_t{0}, n, std::size_t{0});
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t w = 0; w < threads; ++w) {
    const std::size_t begin = std::min(n, w * chunk);
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&, begin, end, w] {
      try {
        fn(begin, end, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

template <typename T>
void add_into(Gradients<T>& dst, const Gradients<T>& src) {
  std::vector<Tensor<T>*> targets;
  for_each_tensor(dst, [&](const std::string&, Tensor<T>& t) { targets.push_back(&t); });
  std::size_t i = 0;
  for_each_tensor(src, [&](const std::string&, const Tensor<T>& t) {
    targets[i++]->vec() += t.vec();
  });
}

template <typename T>
void direction_backward(const Tensor<T>& seq, const GruDirection<T>& p,
                        const GruDirectionTrace<T>& tr, std::span<const std::uint8_t> mask,
                        bool reverse, const RowMatrix<T>& d_out, const Vector<T>& d_final,
                        GruDirection<T>& grad, Tensor<T>& d_seq) {
  const std::size_t steps = seq.rows();
  const auto H = static_cast<Eigen::Index>(p.hidden());
  RowMatrix<T> da_z = RowMatrix<T>::Zero(static_cast<Eigen::Index>(steps), H);
  RowMatrix<T> da_r = da_z;
  RowMatrix<T> da_c = da_z;
  const auto Uz = p.u_update.mat();
  const auto Ur = p.u_reset.mat();
  const auto Uc = p.u_candidate.mat();

  Vector<T> dh = d_final;
  for (std::size_t s = steps; s-- > 0;) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    const auto ti = static_cast<Eigen::Index>(t);
    if (d_out.size() > 0) dh += d_out.row(ti).transpose();
    if (mask[t] == 0) continue;
    const Vector<T> z = tr.update.mat().row(ti).transpose();
    const Vector<T> r = tr.reset.mat().row(ti).transpose();
    const Vector<T> c = tr.candidate.mat().row(ti).transpose();
    const Vector<T> hp = tr.h_prev.mat().row(ti).transpose();

    const Vector<T> dz = dh.cwiseProduct(c - hp);
    const Vector<T> dc = dh.cwiseProduct(z);
    Vector<T> dhp = dh.cwiseProduct(Vector<T>::Ones(H) - z);
    const Vector<T> dac = dc.cwiseProduct(Vector<T>::Ones(H) - c.cwiseProduct(c));
    const Vector<T> d_rh = Uc.transpose() * dac;
    const Vector<T> dr = d_rh.cwiseProduct(hp);
    dhp += d_rh.cwiseProduct(r);
    const Vector<T> daz = dz.cwiseProduct(z).cwiseProduct(Vector<T>::Ones(H) - z);
    const Vector<T> dar = dr.cwiseProduct(r).cwiseProduct(Vector<T>::Ones(H) - r);
    dhp += Uz.transpose() * daz + Ur.transpose() * dar;

    da_z.row(ti) = daz.transpose();
    da_r.row(ti) = dar.transpose();
    da_c.row(ti) = dac.transpose();
    dh = dhp;
  }

  const auto X = seq.mat();
  const auto Hp = tr.h_prev.mat();
  grad.w_update.mat().noalias() += da_z.transpose() * X;
  grad.w_reset.mat().noalias() += da_r.transpose() * X;
  grad.w_candidate.mat().noalias() += da_c.transpose() * X;
  grad.u_update.mat().noalias() += da_z.transpose() * Hp;
  grad.u_reset.mat().noalias() += da_r.transpose() * Hp;
  const RowMatrix<T> reset_hp = tr.reset.mat().cwiseProduct(Hp);
  grad.u_candidate.mat().noalias() += da_c.transpose() * reset_hp;
  d_seq.mat().noalias() += da_z * p.w_update.mat();
  d_seq.mat().noalias() += da_r * p.w_reset.mat();
  d_seq.mat().noalias() += da_c * p.w_candidate.mat();
}

template <typename T>
bool first_non_finite(const ModelParameters<T>& params, std::string& name) {
  bool found = false;
  for_each_tensor(params, [&](const std::string& n, const Tensor<T>& t) {
    if (found) return;
    for (const T v : t.values()) {
      if (!std::isfinite(v)) {
        name = n;
        found = true;
        return;
      }
    }
  });
  return found;
}

}  // namespace

Architecture TrainConfig::architecture() const {
  Architecture a;
  a.embedding_dim = embedding_dim;
  a.windows = windows;
  a.filters = filters;
  a.hidden = hidden;
  a.pool = pool;
  a.stride = stride;
  a.dropout = dropout;
  a.summary = summary;
  return a;
}

void TrainConfig::validate() const {
  architecture().validate();
  if (batch_size == 0) throw UsageError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (!(rho >= 0.0 && rho < 1.0)) throw UsageError("rho must be in [0,1)");
  if (!(epsilon > 0.0)) throw UsageError("epsilon must be positive");
  if (!(clip_norm >= 0.0)) throw UsageError("clip_norm must be >= 0");
  if (min_count < 1) throw UsageError("min_count must be >= 1");
  if (threads == 0) throw UsageError("threads must be >= 1");
}

std::vector<Batch> make_batches(const EssaySet& set, const Vocabulary& vocab,
                                std::size_t batch_size, std::uint64_t shuffle_seed) {
  if (batch_size == 0) throw UsageError("batch_size must be >= 1");
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(shuffle_seed);
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch b;
    b.size = end - start;
    for (std::size_t i = start; i < end; ++i) {
      b.length = std::max(b.length, set.essays[order[i]].tokens.size());
    }
    b.indices.assign(b.size * b.length, Vocabulary::kPad);
    b.mask.assign(b.size * b.length, 0);
    for (std::size_t i = start; i < end; ++i) {
      const Essay& e = set.essays[order[i]];
      const std::size_t row = i - start;
      for (std::size_t t = 0; t < e.tokens.size(); ++t) {
        b.indices[row * b.length + t] = vocab.index_of(e.tokens[t]);
        b.mask[row * b.length + t] = 1;
      }
      b.targets.push_back(e.normalized_score);
      b.essay_ids.push_back(e.essay_id);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

double mse_loss(std::span<const double> targets, std::span<const double> predictions) {
  if (targets.size() != predictions.size()) {
    throw std::invalid_argument("mse_loss: " + std::to_string(targets.size()) + " targets vs " +
                                std::to_string(predictions.size()) + " predictions");
  }
  if (targets.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double diff = targets[i] - predictions[i];
    sum += diff * diff;
  }
  return sum / static_cast<double>(targets.size());
}

template <typename T>
Tensor<T> conv1d_backward(const Tensor<T>& embedded, std::size_t length,
                          const ConvChannel<T>& channel, const Tensor<T>& pre_activation,
                          const Tensor<T>& d_out, ConvChannel<T>& grad) {
  const std::size_t d = embedded.cols();
  const std::size_t k = channel.window;
  const std::size_t width = length - k + 1;
  RowMatrix<T> d_pre = d_out.mat();
  // ReLU subgradient at 0 is 0.
  d_pre = d_pre.cwiseProduct(
      pre_activation.mat().unaryExpr([](T v) { return v > T{0} ? T{1} : T{0}; }));

  const Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>> windows(
      embedded.data(), static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(d * k),
      Eigen::OuterStride<>(static_cast<Eigen::Index>(d)));
  grad.weights.mat().noalias() += d_pre.transpose() * windows;
  grad.bias.vec() += d_pre.colwise().sum().transpose();

  const RowMatrix<T> d_windows = d_pre * channel.weights.mat();
  auto d_embedded = Tensor<T>::matrix(embedded.rows(), d);
  T* base = d_embedded.data();
  for (std::size_t i = 0; i < width; ++i) {
    Eigen::Map<Vector<T>>(base + i * d, static_cast<Eigen::Index>(d * k)) +=
        d_windows.row(static_cast<Eigen::Index>(i)).transpose();
  }
  return d_embedded;
}

template <typename T>
Tensor<T> maxpool_backward(std::span<const std::uint32_t> argmax, std::size_t input_width,
                           const Tensor<T>& d_pooled) {
  const std::size_t filters = d_pooled.cols();
  auto d_in = Tensor<T>::matrix(input_width, filters);
  for (std::size_t j = 0; j < d_pooled.rows(); ++j) {
    for (std::size_t f = 0; f < filters; ++f) {
      d_in(argmax[j * filters + f], f) += d_pooled(j, f);
    }
  }
  return d_in;
}

template <typename T>
Tensor<T> bigru_backward(const Tensor<T>& sequence, const GruParameters<T>& p,
                         const BiGruTrace<T>& trace, const Tensor<T>& d_outputs,
                         std::span<const T> d_summary, GruParameters<T>& grad) {
  const std::size_t steps = sequence.rows();
  const auto H = static_cast<Eigen::Index>(p.forward.hidden());
  RowMatrix<T> d_fwd = RowMatrix<T>::Zero(static_cast<Eigen::Index>(steps), H);
  RowMatrix<T> d_bwd = d_fwd;
  if (!d_outputs.empty()) {
    d_fwd += d_outputs.mat().leftCols(H);
    d_bwd += d_outputs.mat().rightCols(H);
  }
  Vector<T> final_fwd = Vector<T>::Zero(H);
  Vector<T> final_bwd = Vector<T>::Zero(H);
  if (!d_summary.empty() && steps > 0) {
    const Eigen::Map<const Vector<T>> ds(d_summary.data(), 2 * H);
    if (trace.mode == SummaryMode::last) {
      final_fwd = ds.head(H);
      final_bwd = ds.tail(H);
    } else {
      const auto real = std::count(trace.mask.begin(), trace.mask.end(), std::uint8_t{1});
      if (real > 0) {
        for (std::size_t t = 0; t < steps; ++t) {
          if (trace.mask[t] == 0) continue;
          const auto ti = static_cast<Eigen::Index>(t);
          d_fwd.row(ti) += ds.head(H).transpose() / static_cast<T>(real);
          d_bwd.row(ti) += ds.tail(H).transpose() / static_cast<T>(real);
        }
      }
    }
  }
  auto d_seq = Tensor<T>::matrix(steps, sequence.cols());
  direction_backward(sequence, p.forward, trace.forward, trace.mask, false, d_fwd, final_fwd,
                     grad.forward, d_seq);
  direction_backward(sequence, p.backward, trace.backward, trace.mask, true, d_bwd, final_bwd,
                     grad.backward, d_seq);
  return d_seq;
}

template <typename T>
void essay_backward(const EssayTrace<T>& trace, const ModelParameters<T>& params, T d_output,
                    Gradients<T>& grad) {
  const Architecture& arch = params.arch;
  const std::size_t width = arch.head_width();
  const T y = trace.output;
  const T d_logit = d_output * y * (T{1} - y);

  std::vector<T> head_in = trace.features;
  if (!trace.dropout_scale.empty()) {
    for (std::size_t i = 0; i < width; ++i) head_in[i] *= trace.dropout_scale[i];
  }
  for (std::size_t i = 0; i < width; ++i) grad.head.weights[i] += d_logit * head_in[i];
  grad.head.bias[0] += d_logit;

  std::vector<T> d_features(width);
  for (std::size_t i = 0; i < width; ++i) {
    d_features[i] = d_logit * params.head.weights[i];
    if (!trace.dropout_scale.empty()) d_features[i] *= trace.dropout_scale[i];
  }

  auto d_embedded = Tensor<T>::matrix(trace.embedded.rows(), trace.embedded.cols());
  const std::size_t slice = 2 * arch.hidden;
  for (std::size_t c = 0; c < trace.channels.size(); ++c) {
    const ChannelTrace<T>& ct = trace.channels[c];
    const std::span<const T> d_summary(d_features.data() + c * slice, slice);
    const Tensor<T> d_pooled =
        bigru_backward(ct.pooled.values, params.gru[c], ct.gru, Tensor<T>{}, d_summary, grad.gru[c]);
    const Tensor<T> d_act = maxpool_backward(std::span<const std::uint32_t>(ct.argmax),
                                             ct.activation.width(), d_pooled);
    const Tensor<T> d_emb = conv1d_backward(trace.embedded, ct.length, params.conv[c],
                                            ct.pre_activation, d_act, grad.conv[c]);
    d_embedded.vec() += d_emb.vec();
  }

  if (!params.embedding.trainable) return;
  for (std::size_t pos = 0; pos < trace.indices.size(); ++pos) {
    const auto index = trace.indices[pos];
    if (index == Vocabulary::kPad) continue;
    auto dst = grad.embedding.weights.row(static_cast<std::size_t>(index));
    const auto src = d_embedded.row(pos);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
}

template <typename T>
BackwardResult<T> backward(const Batch& batch, const ModelParameters<T>& params,
                           std::uint64_t dropout_seed, std::size_t threads) {
  const std::size_t B = batch.size;
  const Architecture& arch = params.arch;
  std::vector<std::vector<T>> scales(B);
  if (arch.dropout > 0.0) {
    Rng rng(dropout_seed);
    for (auto& s : scales) s = dropout_scale<T>(arch.head_width(), arch.dropout, rng);
  }

  BackwardResult<T> result;
  result.predictions.assign(B, 0.0);
  threads = std::max<std::size_t>(1, std::min(threads, B));
  std::vector<Gradients<T>> partial;
  partial.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) partial.push_back(zeros_like(params));

  parallel_chunks(B, threads, [&](std::size_t begin, std::size_t end, std::size_t worker) {
    for (std::size_t b = begin; b < end; ++b) {
      const EssayTrace<T> tr = trace_forward<T>(batch.row(b), params, scales[b]);
      result.predictions[b] = static_cast<double>(tr.output);
      const T d_output =
          T{2} * (tr.output - static_cast<T>(batch.targets[b])) / static_cast<T>(B);
      essay_backward(tr, params, d_output, partial[worker]);
    }
  });
  result.grads = std::move(partial.front());
  for (std::size_t w = 1; w < partial.size(); ++w) add_into(result.grads, partial[w]);
  result.loss = mse_loss(batch.targets, result.predictions);

  if (!std::isfinite(result.loss)) {
    std::string name;
    if (first_non_finite(params, name)) {
      throw NumericError("non-finite loss; parameter '" + name + "' has non-finite entries");
    }
    if (first_non_finite(result.grads, name)) {
      throw NumericError("non-finite loss; gradient of '" + name + "' is non-finite");
    }
    throw NumericError("non-finite loss with finite parameters");
  }
  return result;
}

RmsPropState RmsPropState::for_model(const ModelParameters<float>& params, const TrainConfig& cfg) {
  RmsPropState s;
  s.rho = cfg.rho;
  s.epsilon = cfg.epsilon;
  s.learning_rate = cfg.learning_rate;
  for_each_tensor(params, [&](const std::string&, const Tensor<float>& t) {
    s.accumulators.emplace_back(t.shape());
  });
  return s;
}

void rmsprop_step(ModelParameters<float>& params, const Gradients<float>& grads,
                  RmsPropState& state) {
  std::vector<const Tensor<float>*> g;
  for_each_tensor(grads, [&](const std::string&, const Tensor<float>& t) { g.push_back(&t); });
  if (state.accumulators.empty()) {
    for (const auto* t : g) state.accumulators.emplace_back(t->shape());
  }
  const float rho = static_cast<float>(state.rho);
  const float lr = static_cast<float>(state.learning_rate);
  const float eps = static_cast<float>(state.epsilon);
  std::size_t i = 0;
  for_each_tensor(params, [&](const std::string& name, Tensor<float>& theta) {
    const Tensor<float>& grad = *g[i];
    Tensor<float>& acc = state.accumulators[i];
    ++i;
    if (!theta.same_shape(grad) || !theta.same_shape(acc)) {
      throw std::invalid_argument("rmsprop_step: shape mismatch for " + name);
    }
    std::size_t begin = 0;
    if (name == "embedding") {
      if (!params.embedding.trainable) return;
      begin = theta.cols();  // PAD row
    }
    float* th = theta.data();
    float* a = acc.data();
    const float* gr = grad.data();
    for (std::size_t k = begin; k < theta.size(); ++k) {
      a[k] = rho * a[k] + (1.0f - rho) * gr[k] * gr[k];
      th[k] -= lr * gr[k] / (std::sqrt(a[k]) + eps);
    }
  });
}

void clip_gradients(Gradients<float>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for_each_tensor(grads, [&](const std::string&, const Tensor<float>& t) {
    for (const float v : t.values()) sq += static_cast<double>(v) * v;
  });
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const auto scale = static_cast<float>(max_norm / norm);
  for_each_tensor(grads, [&](const std::string&, Tensor<float>& t) { t.vec() *= scale; });
}

std::vector<double> predict_normalized(const EssaySet& set, const Vocabulary& vocab,
                                       const ModelParameters<float>& params, std::size_t threads) {
  std::vector<double> out(set.size());
  parallel_chunks(set.size(), threads, [&](std::size_t begin, std::size_t end, std::size_t) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto indices = vocab.encode(set.essays[i].tokens);
      out[i] = static_cast<double>(forward<float>(indices, params));
    }
  });
  return out;
}

std::vector<int> predict_scores(const EssaySet& set, const Vocabulary& vocab,
                                const ModelParameters<float>& params, std::size_t threads) {
  const auto normalized = predict_normalized(set, vocab, params, threads);
  std::vector<int> scores;
  scores.reserve(normalized.size());
  for (const double y : normalized) scores.push_back(denormalize_score(y, set.range));
  return scores;
}

ModelParameters<float> initial_parameters(const Vocabulary& vocab, const EmbeddingTable& embeddings,
                                          const TrainConfig& cfg) {
  cfg.validate();
  if (embeddings.dimension() != cfg.embedding_dim) {
    throw UsageError("embedding file has dimension " + std::to_string(embeddings.dimension()) +
                     ", config expects " + std::to_string(cfg.embedding_dim));
  }
  auto matrix = build_embedding_matrix(vocab, embeddings, derive_seed(cfg.seed, 1));
  matrix.trainable = cfg.train_embeddings;
  return init_parameters(cfg.architecture(), std::move(matrix), derive_seed(cfg.seed, 2));
}

TrainResult train(const EssaySet& train_set, const EssaySet& val_set, const Vocabulary& vocab,
                  const EmbeddingTable& embeddings, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  if (train_set.empty()) throw UsageError("training set is empty");
  if (val_set.empty()) throw UsageError("validation set is empty");
  ModelParameters<float> params = initial_parameters(vocab, embeddings, cfg);
  RmsPropState state = RmsPropState::for_model(params, cfg);

  std::vector<double> train_targets;
  for (const auto& e : train_set.essays) train_targets.push_back(e.normalized_score);
  std::vector<int> val_actual;
  for (const auto& e : val_set.essays) val_actual.push_back(e.raw_score);

  TrainResult result;
  result.best = params;
  result.best_val_qwk = -std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::uint64_t shuffle_seed = derive_seed(cfg.seed, 1000 + (cfg.reshuffle ? epoch : 1));
    const auto batches = make_batches(train_set, vocab, cfg.batch_size, shuffle_seed);
    const std::uint64_t epoch_seed = derive_seed(cfg.seed, 2000 + epoch);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      auto step = backward<float>(batches[b], params, derive_seed(epoch_seed, b), cfg.threads);
      clip_gradients(step.grads, cfg.clip_norm);
      rmsprop_step(params, step.grads, state);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = mse_loss(train_targets, predict_normalized(train_set, vocab, params, cfg.threads));
    rec.val_qwk = qwk(val_actual, predict_scores(val_set, vocab, params, cfg.threads), val_set.range);
    if (rec.val_qwk > result.best_val_qwk) {
      result.best_val_qwk = rec.val_qwk;
      result.best_epoch = epoch;
      result.best = params;
    }
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (result.best_epoch == 0) result.best_val_qwk = 0.0;
  return result;
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,train_mse,val_qwk\n";
  for (const auto& r : history) out << r.epoch << ',' << r.train_mse << ',' << r.val_qwk << '\n';
  return out.str();
}

std::vector<std::size_t> loss_increases(std::span<const EpochRecord> history) {
  std::vector<std::size_t> epochs;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i].train_mse > history[i - 1].train_mse) epochs.push_back(history[i].epoch);
  }
  return epochs;
}

#define DELAES_INSTANTIATE(T)                                                                     \
  template Tensor<T> conv1d_backward<T>(const Tensor<T>&, std::size_t, const ConvChannel<T>&,     \
                                        const Tensor<T>&, const Tensor<T>&, ConvChannel<T>&);     \
  template Tensor<T> maxpool_backward<T>(std::span<const std::uint32_t>, std::size_t,             \
                                         const Tensor<T>&);                                       \
  template Tensor<T> bigru_backward<T>(const Tensor<T>&, const GruParameters<T>&,                 \
                                       const BiGruTrace<T>&, const Tensor<T>&,                    \
                                       std::span<const T>, GruParameters<T>&);                    \
  template void essay_backward<T>(const EssayTrace<T>&, const ModelParameters<T>&, T,             \
                                  Gradients<T>&);                                                 \
  template BackwardResult<T> backward<T>(const Batch&, const ModelParameters<T>&, std::uint64_t,  \
                                         std::size_t);

DELAES_INSTANTIATE(float)
DELAES_INSTANTIATE(double)
#undef DELAES_INSTANTIATE

}  // namespace delaes
