// SPDX-License-Identifier: Apache-2.0
// Central finite-difference check of the full model gradient.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "delaes/network.hpp"
#include "delaes/random.hpp"
#include "delaes/training.hpp"

namespace delaes::testing {

/// Every tensor filled uniformly from [-scale, scale], PAD row left at zero.
template <typename T>
void randomize(ModelParameters<T>& params, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for_each_tensor(params, [&](const std::string& name, Tensor<T>& t) {
    const std::size_t begin = name == "embedding" ? t.cols() : 0;
    for (std::size_t i = begin; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-scale, scale));
  });
}

inline Architecture tiny_architecture(std::vector<std::size_t> windows = {2, 3}) {
  Architecture a;
  a.embedding_dim = 8;
  a.windows = std::move(windows);
  a.filters = 3;
  a.hidden = 4;
  a.pool = 2;
  a.stride = 2;
  a.dropout = 0.0;
  return a;
}

/// Double-precision model over a vocabulary of `vocab_size` with random weights.
inline ModelParameters<double> tiny_model(const Architecture& arch, std::size_t vocab_size,
                                          std::uint64_t seed) {
  auto p = zero_parameters(arch, vocab_size).cast<double>();
  randomize(p, seed);
  return p;
}

/// One-essay batch.
inline Batch single_batch(const std::vector<std::int32_t>& indices, double target) {
  Batch b;
  b.size = 1;
  b.length = indices.size();
  b.indices = indices;
  for (const auto i : indices) b.mask.push_back(i == Vocabulary::kPad ? 0 : 1);
  b.targets = {target};
  b.essay_ids = {1};
  return b;
}

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation crosses a ReLU kink or flips a pooling argmax
  double max_rel_error = 0.0;
  std::string worst;  // "tensor[index]"
  std::size_t failures = 0;
};

/// Relative error with a floor so coordinates whose gradient is essentially
/// zero are compared absolutely.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

namespace detail {

struct Pattern {
  std::vector<bool> active;
  std::vector<std::uint32_t> argmax;
  double min_abs_pre = INFINITY;

  bool operator==(const Pattern& o) const { return active == o.active && argmax == o.argmax; }
};

inline Pattern pattern_of(const EssayTrace<double>& tr) {
  Pattern p;
  for (const auto& ch : tr.channels) {
    for (const double z : ch.pre_activation.values()) {
      p.active.push_back(z > 0.0);
      p.min_abs_pre = std::min(p.min_abs_pre, std::abs(z));
    }
    p.argmax.insert(p.argmax.end(), ch.argmax.begin(), ch.argmax.end());
  }
  return p;
}

}  // namespace detail

/// Compares backward() with central differences of the batch loss, holding
/// the dropout realization of `dropout_seed` fixed. A coordinate is skipped
/// when the +h or -h evaluation changes the ReLU activity pattern or a
/// pooling argmax, or brings any ReLU input within kink_margin of zero.
inline GradCheckReport gradient_check(const ModelParameters<double>& params, const Batch& batch,
                                      std::uint64_t dropout_seed, double h = 1e-4,
                                      double tolerance = 1e-4, double kink_margin = 1e-3) {
  const auto analytic = backward<double>(batch, params, dropout_seed).grads;

  std::vector<std::vector<double>> scales(batch.size);
  if (params.arch.dropout > 0.0) {
    Rng rng(dropout_seed);
    for (auto& s : scales) s = dropout_scale<double>(params.arch.head_width(), params.arch.dropout, rng);
  }
  auto evaluate = [&](const ModelParameters<double>& p, std::vector<detail::Pattern>& patterns) {
    double loss = 0.0;
    patterns.clear();
    for (std::size_t b = 0; b < batch.size; ++b) {
      const auto tr = trace_forward<double>(batch.row(b), p, scales[b]);
      patterns.push_back(detail::pattern_of(tr));
      const double e = tr.output - batch.targets[b];
      loss += e * e;
    }
    return loss / static_cast<double>(batch.size);
  };

  std::vector<detail::Pattern> base, plus, minus;
  evaluate(params, base);

  std::vector<const Tensor<double>*> grads;
  for_each_tensor(analytic, [&](const std::string&, const Tensor<double>& t) { grads.push_back(&t); });

  GradCheckReport report;
  ModelParameters<double> work = params;
  std::size_t tensor = 0;
  for_each_tensor(work, [&](const std::string& name, Tensor<double>& t) {
    const Tensor<double>& g = *grads[tensor++];
    const std::size_t begin = name == "embedding" ? t.cols() : 0;  // PAD row is not a parameter
    for (std::size_t i = begin; i < t.size(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const double lp = evaluate(work, plus);
      t[i] = saved - h;
      const double lm = evaluate(work, minus);
      t[i] = saved;
      bool kink = !(plus == base) || !(minus == base);
      for (std::size_t b = 0; b < batch.size && !kink; ++b) {
        kink = plus[b].min_abs_pre < kink_margin || minus[b].min_abs_pre < kink_margin;
      }
      if (kink) {
        ++report.skipped;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * h);
      const double err = relative_error(g[i], numeric);
      ++report.checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst = name + "[" + std::to_string(i) + "]";
      }
      if (err >= tolerance) ++report.failures;
    }
  });
  return report;
}

}  // namespace delaes::testing
