// SPDX-License-Identifier: Apache-2.0
#include "delaes/network.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#include "delaes/errors.hpp"

namespace delaes {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
using WindowMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

// Row i spans tokens i..i+k-1 flattened: the concatenated window vector.
template <typename T>
WindowMap<T> windows_of(const Tensor<T>& embedded, std::size_t length, std::size_t window) {
  const auto d = static_cast<Eigen::Index>(embedded.cols());
  const auto width = static_cast<Eigen::Index>(length - window + 1);
  return WindowMap<T>(embedded.data(), width, d * static_cast<Eigen::Index>(window),
                      Eigen::OuterStride<>(d));
}

template <typename T>
Tensor<T> conv_pre_activation(const Tensor<T>& embedded, std::size_t length,
                              const ConvChannel<T>& ch) {
  if (length < ch.window || embedded.cols() * ch.window != ch.weights.cols()) {
    throw std::logic_error("conv1d: input shorter than window or width mismatch");
  }
  const auto win = windows_of(embedded, length, ch.window);
  auto pre = Tensor<T>::matrix(length - ch.window + 1, ch.filters());
  pre.mat().noalias() = win * ch.weights.mat().transpose();
  pre.mat().rowwise() += ch.bias.vec().transpose();
  return pre;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  // NaN passes through so a corrupted parameter still surfaces in the loss.
  for (auto& v : y.values()) v = (v > T{0} || std::isnan(v)) ? v : T{0};
  return y;
}

template <typename T>
FeatureMap<T> maxpool_with_argmax(const FeatureMap<T>& map, std::size_t pool, std::size_t stride,
                                  std::vector<std::uint32_t>* argmax) {
  if (pool == 0 || stride == 0) throw UsageError("pool and stride must be >= 1");
  const std::size_t width = map.width();
  const std::size_t filters = map.filters();
  const std::size_t out_width = pooled_width(width, pool, stride);
  FeatureMap<T> out{Tensor<T>::matrix(out_width, filters)};
  if (argmax) argmax->assign(out_width * filters, 0);
  for (std::size_t j = 0; j < out_width; ++j) {
    const std::size_t start = j * stride;
    const std::size_t end = std::min(start + pool, width);
    for (std::size_t f = 0; f < filters; ++f) {
      std::size_t best = start;
      for (std::size_t i = start + 1; i < end && !std::isnan(map.values(best, f)); ++i) {
        if (map.values(i, f) > map.values(best, f) || std::isnan(map.values(i, f))) best = i;
      }
      out.values(j, f) = map.values(best, f);
      if (argmax) (*argmax)[j * filters + f] = static_cast<std::uint32_t>(best);
    }
  }
  return out;
}

template <typename T>
void run_direction(const Tensor<T>& seq, const GruDirection<T>& p,
                   std::span<const std::uint8_t> mask, bool reverse,
                   GruDirectionTrace<T>& tr) {
  const std::size_t steps = seq.rows();
  const std::size_t H = p.hidden();
  if (seq.cols() != p.input()) throw std::logic_error("gru: input width mismatch");
  // Input projections for all steps at once.
  RowMatrix<T> xz = seq.mat() * p.w_update.mat().transpose();
  RowMatrix<T> xr = seq.mat() * p.w_reset.mat().transpose();
  RowMatrix<T> xc = seq.mat() * p.w_candidate.mat().transpose();

  tr.h_prev = Tensor<T>::matrix(steps, H);
  tr.update = Tensor<T>::matrix(steps, H);
  tr.reset = Tensor<T>::matrix(steps, H);
  tr.candidate = Tensor<T>::matrix(steps, H);
  tr.hidden = Tensor<T>::matrix(steps, H);

  Vector<T> h = Vector<T>::Zero(static_cast<Eigen::Index>(H));
  const auto Uz = p.u_update.mat();
  const auto Ur = p.u_reset.mat();
  const auto Uc = p.u_candidate.mat();
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    const auto ti = static_cast<Eigen::Index>(t);
    tr.h_prev.mat().row(ti) = h.transpose();
    if (!mask.empty() && mask[t] == 0) {
      tr.hidden.mat().row(ti) = h.transpose();
      continue;
    }
    Vector<T> z = (xz.row(ti).transpose() + Uz * h).unaryExpr([](T v) { return sigmoid(v); });
    Vector<T> r = (xr.row(ti).transpose() + Ur * h).unaryExpr([](T v) { return sigmoid(v); });
    Vector<T> c = (xc.row(ti).transpose() + Uc * r.cwiseProduct(h)).array().tanh().matrix();
    h = (Vector<T>::Ones(z.size()) - z).cwiseProduct(h) + z.cwiseProduct(c);
    tr.update.mat().row(ti) = z.transpose();
    tr.reset.mat().row(ti) = r.transpose();
    tr.candidate.mat().row(ti) = c.transpose();
    tr.hidden.mat().row(ti) = h.transpose();
  }
}

template <typename T>
void glorot(Tensor<T>& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-limit, limit));
}

}  // namespace

std::string to_string(SummaryMode mode) { return mode == SummaryMode::last ? "last" : "mean"; }

SummaryMode parse_summary_mode(std::string_view text) {
  if (text == "last") return SummaryMode::last;
  if (text == "mean") return SummaryMode::mean;
  throw UsageError("summary must be 'last' or 'mean', got '" + std::string(text) + "'");
}

std::size_t Architecture::max_window() const {
  return windows.empty() ? 0 : *std::max_element(windows.begin(), windows.end());
}

void Architecture::validate() const {
  if (embedding_dim == 0) throw UsageError("embedding_dim must be positive");
  if (windows.empty()) throw UsageError("at least one window size is required");
  for (const auto k : windows) {
    if (k == 0) throw UsageError("window sizes must be positive");
  }
  if (filters == 0) throw UsageError("filters must be positive");
  if (hidden == 0) throw UsageError("hidden must be positive");
  if (pool == 0 || stride == 0) throw UsageError("pool and stride must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw UsageError("dropout must be in [0,1)");
}

template <typename T>
template <typename U>
ModelParameters<U> ModelParameters<T>::cast() const {
  ModelParameters<U> out;
  out.arch = arch;
  out.embedding = {embedding.weights.template cast<U>(), embedding.trainable};
  for (const auto& ch : conv) {
    out.conv.push_back({ch.window, ch.weights.template cast<U>(), ch.bias.template cast<U>()});
  }
  const auto cast_dir = [](const GruDirection<T>& g) {
    return GruDirection<U>{g.w_update.template cast<U>(),    g.w_reset.template cast<U>(),
                           g.w_candidate.template cast<U>(), g.u_update.template cast<U>(),
                           g.u_reset.template cast<U>(),     g.u_candidate.template cast<U>()};
  };
  for (const auto& g : gru) out.gru.push_back({cast_dir(g.forward), cast_dir(g.backward)});
  out.head = {head.weights.template cast<U>(), head.bias.template cast<U>()};
  return out;
}

template <typename T>
ModelParameters<T> zeros_like(const ModelParameters<T>& params) {
  ModelParameters<T> out = params;
  for_each_tensor(out, [](const std::string&, Tensor<T>& t) { t.set_zero(); });
  return out;
}

ModelParameters<float> zero_parameters(const Architecture& arch, std::size_t vocab_size) {
  arch.validate();
  const std::size_t d = arch.embedding_dim;
  const std::size_t F = arch.filters;
  const std::size_t H = arch.hidden;
  ModelParameters<float> p;
  p.arch = arch;
  p.embedding.weights = Tensor<float>::matrix(vocab_size, d);
  for (const std::size_t k : arch.windows) {
    p.conv.push_back({k, Tensor<float>::matrix(F, d * k), Tensor<float>::vector(F)});
  }
  for (std::size_t c = 0; c < arch.channels(); ++c) {
    GruParameters<float> g;
    for (auto* dir : {&g.forward, &g.backward}) {
      for (auto* w : {&dir->w_update, &dir->w_reset, &dir->w_candidate}) *w = Tensor<float>::matrix(H, F);
      for (auto* u : {&dir->u_update, &dir->u_reset, &dir->u_candidate}) *u = Tensor<float>::matrix(H, H);
    }
    p.gru.push_back(std::move(g));
  }
  p.head.weights = Tensor<float>::matrix(1, arch.head_width());
  p.head.bias = Tensor<float>::vector(1);
  return p;
}

ModelParameters<float> init_parameters(const Architecture& arch, EmbeddingMatrix<float> embedding,
                                       std::uint64_t seed) {
  arch.validate();
  if (embedding.dimension() != arch.embedding_dim) {
    throw UsageError("embedding matrix has dimension " + std::to_string(embedding.dimension()) +
                     ", architecture expects " + std::to_string(arch.embedding_dim));
  }
  ModelParameters<float> p = zero_parameters(arch, 0);
  p.embedding = std::move(embedding);
  const std::size_t d = arch.embedding_dim;
  const std::size_t F = arch.filters;
  const std::size_t H = arch.hidden;
  std::uint64_t stream = 0;
  const auto fill = [&](Tensor<float>& t, std::size_t fan_in, std::size_t fan_out) {
    Rng rng(derive_seed(seed, stream++));
    glorot(t, fan_in, fan_out, rng);
  };
  for (auto& ch : p.conv) fill(ch.weights, d * ch.window, F);
  for (auto& g : p.gru) {
    for (auto* dir : {&g.forward, &g.backward}) {
      for (auto* w : {&dir->w_update, &dir->w_reset, &dir->w_candidate}) fill(*w, F, H);
      for (auto* u : {&dir->u_update, &dir->u_reset, &dir->u_candidate}) fill(*u, H, H);
    }
  }
  fill(p.head.weights, arch.head_width(), 1);
  return p;
}

template <typename T>
FeatureMap<T> conv1d_forward(const Tensor<T>& embedded, const ConvChannel<T>& channel) {
  return {relu(conv_pre_activation(embedded, embedded.rows(), channel))};
}

std::size_t pooled_width(std::size_t width, std::size_t pool, std::size_t stride) {
  if (pool == 0 || stride == 0) throw UsageError("pool and stride must be >= 1");
  if (width <= pool) return 1;
  std::size_t n = (width - pool + stride - 1) / stride + 1;
  // With stride > pool the last start can fall past the input; such windows are empty.
  while (n > 1 && (n - 1) * stride >= width) --n;
  return n;
}

template <typename T>
FeatureMap<T> maxpool(const FeatureMap<T>& map, std::size_t pool, std::size_t stride) {
  return maxpool_with_argmax(map, pool, stride, nullptr);
}

template <typename T>
GruStep<T> gru_step_detail(std::span<const T> x, std::span<const T> h_prev,
                           const GruDirection<T>& p) {
  const auto H = static_cast<Eigen::Index>(p.hidden());
  if (x.size() != p.input() || h_prev.size() != p.hidden()) {
    throw std::logic_error("gru_step: shape mismatch");
  }
  const Eigen::Map<const Vector<T>> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::Map<const Vector<T>> hv(h_prev.data(), H);
  const Vector<T> z =
      (p.w_update.mat() * xv + p.u_update.mat() * hv).unaryExpr([](T v) { return sigmoid(v); });
  const Vector<T> r =
      (p.w_reset.mat() * xv + p.u_reset.mat() * hv).unaryExpr([](T v) { return sigmoid(v); });
  const Vector<T> c =
      (p.w_candidate.mat() * xv + p.u_candidate.mat() * r.cwiseProduct(hv)).array().tanh().matrix();
  const Vector<T> h = (Vector<T>::Ones(H) - z).cwiseProduct(hv) + z.cwiseProduct(c);
  const auto to_vec = [](const Vector<T>& v) { return std::vector<T>(v.data(), v.data() + v.size()); };
  return {to_vec(z), to_vec(r), to_vec(c), to_vec(h)};
}

template <typename T>
BiGruTrace<T> bigru_trace(const Tensor<T>& sequence, const GruParameters<T>& p,
                          std::span<const std::uint8_t> mask, SummaryMode summary) {
  const std::size_t steps = sequence.rows();
  if (!mask.empty() && mask.size() != steps) throw std::logic_error("bigru: mask length mismatch");
  BiGruTrace<T> tr;
  tr.mask.assign(mask.begin(), mask.end());
  if (tr.mask.empty()) tr.mask.assign(steps, 1);
  tr.mode = summary;
  run_direction(sequence, p.forward, tr.mask, false, tr.forward);
  run_direction(sequence, p.backward, tr.mask, true, tr.backward);

  const std::size_t H = p.forward.hidden();
  auto& out = tr.result;
  out.outputs = Tensor<T>::matrix(steps, 2 * H);
  for (std::size_t t = 0; t < steps; ++t) {
    std::copy_n(tr.forward.hidden.row(t).begin(), H, out.outputs.row(t).begin());
    std::copy_n(tr.backward.hidden.row(t).begin(), H, out.outputs.row(t).begin() + H);
  }
  out.summary.assign(2 * H, T{0});
  if (steps == 0) return tr;
  if (summary == SummaryMode::last) {
    // Masked steps carry state, so the final states are the boundary real-step states.
    std::copy_n(tr.forward.hidden.row(steps - 1).begin(), H, out.summary.begin());
    std::copy_n(tr.backward.hidden.row(0).begin(), H, out.summary.begin() + H);
  } else {
    std::size_t real = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      if (tr.mask[t] == 0) continue;
      ++real;
      const auto row = out.outputs.row(t);
      for (std::size_t i = 0; i < 2 * H; ++i) out.summary[i] += row[i];
    }
    if (real > 0) {
      for (auto& v : out.summary) v /= static_cast<T>(real);
    }
  }
  return tr;
}

template <typename T>
std::vector<T> dropout_scale(std::size_t n, double p, Rng& rng) {
  std::vector<T> scale(n);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& s : scale) s = (p > 0.0 && rng.bernoulli(p)) ? T{0} : keep;
  return scale;
}

template <typename T>
std::vector<T> dropout(std::span<const T> v, double p, Rng& rng, bool training) {
  std::vector<T> out(v.begin(), v.end());
  if (!training || p == 0.0) return out;
  const auto scale = dropout_scale<T>(v.size(), p, rng);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= scale[i];
  return out;
}

std::size_t real_length(std::span<const std::int32_t> indices) {
  std::size_t n = indices.size();
  while (n > 0 && indices[n - 1] == Vocabulary::kPad) --n;
  return n;
}

template <typename T>
EssayTrace<T> trace_forward(std::span<const std::int32_t> indices, const ModelParameters<T>& params,
                            std::span<const T> dropout_scale) {
  const Architecture& arch = params.arch;
  EssayTrace<T> tr;
  tr.real_length = real_length(indices);
  if (tr.real_length == 0) throw UsageError("cannot score an essay without tokens");
  const std::size_t length = std::max(tr.real_length, arch.max_window());
  tr.indices.assign(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(tr.real_length));
  tr.indices.resize(length, Vocabulary::kPad);
  tr.embedded = embed<T>(tr.indices, params.embedding);

  tr.features.reserve(arch.head_width());
  for (std::size_t c = 0; c < params.conv.size(); ++c) {
    const auto& ch = params.conv[c];
    ChannelTrace<T> ct;
    ct.length = std::max(tr.real_length, ch.window);
    ct.pre_activation = conv_pre_activation(tr.embedded, ct.length, ch);
    ct.activation = {relu(ct.pre_activation)};
    ct.pooled = maxpool_with_argmax(ct.activation, arch.pool, arch.stride, &ct.argmax);
    ct.gru = bigru_trace<T>(ct.pooled.values, params.gru[c], {}, arch.summary);
    tr.features.insert(tr.features.end(), ct.gru.result.summary.begin(),
                       ct.gru.result.summary.end());
    tr.channels.push_back(std::move(ct));
  }

  std::vector<T> head_in = tr.features;
  if (!dropout_scale.empty()) {
    if (dropout_scale.size() != head_in.size()) throw std::logic_error("dropout width mismatch");
    tr.dropout_scale.assign(dropout_scale.begin(), dropout_scale.end());
    for (std::size_t i = 0; i < head_in.size(); ++i) head_in[i] *= dropout_scale[i];
  }
  const Eigen::Map<const Vector<T>> v(head_in.data(), static_cast<Eigen::Index>(head_in.size()));
  tr.logit = params.head.weights.vec().dot(v) + params.head.bias[0];
  tr.output = sigmoid(tr.logit);
  return tr;
}

template <typename T>
T forward(std::span<const std::int32_t> indices, const ModelParameters<T>& params,
          Rng* dropout_rng) {
  std::vector<T> scale;
  if (dropout_rng != nullptr && params.arch.dropout > 0.0) {
    scale = dropout_scale<T>(params.arch.head_width(), params.arch.dropout, *dropout_rng);
  }
  const T y = trace_forward<T>(indices, params, scale).output;
  // Keep the score strictly inside (0,1) when the logit saturates.
  return std::clamp(y, std::numeric_limits<T>::min(), T{1} - std::numeric_limits<T>::epsilon() / 2);
}

#define DELAES_INSTANTIATE(T)                                                                   \
  template ModelParameters<T> zeros_like<T>(const ModelParameters<T>&);                         \
  template FeatureMap<T> conv1d_forward<T>(const Tensor<T>&, const ConvChannel<T>&);            \
  template FeatureMap<T> maxpool<T>(const FeatureMap<T>&, std::size_t, std::size_t);            \
  template GruStep<T> gru_step_detail<T>(std::span<const T>, std::span<const T>,                \
                                         const GruDirection<T>&);                               \
  template BiGruTrace<T> bigru_trace<T>(const Tensor<T>&, const GruParameters<T>&,              \
                                        std::span<const std::uint8_t>, SummaryMode);            \
  template std::vector<T> dropout_scale<T>(std::size_t, double, Rng&);                          \
  template std::vector<T> dropout<T>(std::span<const T>, double, Rng&, bool);                   \
  template EssayTrace<T> trace_forward<T>(std::span<const std::int32_t>,                        \
                                          const ModelParameters<T>&, std::span<const T>);       \
  template T forward<T>(std::span<const std::int32_t>, const ModelParameters<T>&, Rng*);

DELAES_INSTANTIATE(float)
DELAES_INSTANTIATE(double)
#undef DELAES_INSTANTIATE

template ModelParameters<double> ModelParameters<float>::cast<double>() const;
template ModelParameters<float> ModelParameters<double>::cast<float>() const;
template ModelParameters<float> ModelParameters<float>::cast<float>() const;

}  // namespace delaes
