#pragma once

// Per-filter importance scores for one conv layer: the discriminative
// capability score derived from a trained probe, plus the baseline criteria
// (Taylor, APoZ, gradient sensitivity, kernel L1 norm, random).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "seminf/data.hpp"
#include "seminf/errors.hpp"
#include "seminf/model.hpp"
#include "seminf/train.hpp"

namespace seminf {

enum class Criterion { dcs, taylor, apoz, sensitivity, l1, random };

inline const char* criterion_name(Criterion c) {
  switch (c) {
    case Criterion::dcs: return "dcs";
    case Criterion::taylor: return "taylor";
    case Criterion::apoz: return "apoz";
    case Criterion::sensitivity: return "sensitivity";
    case Criterion::l1: return "l1";
    case Criterion::random: return "random";
  }
  return "?";
}

inline Criterion criterion_from_name(const std::string& name) {
  for (auto c : {Criterion::dcs, Criterion::taylor, Criterion::apoz, Criterion::sensitivity, Criterion::l1,
                 Criterion::random})
    if (name == criterion_name(c)) return c;
  throw ValidationError("unknown criterion '" + name + "' (expected dcs, taylor, apoz, sensitivity, l1 or random)");
}

struct ScoreTable {
  std::string criterion;
  std::size_t layer = 0;
  std::int64_t cluster_id = 0;
  std::size_t k_prime = 0;
  std::uint64_t seed = 0;
  std::vector<double> scores;  // one per output filter

  std::size_t size() const noexcept { return scores.size(); }
};

/// I = W* (elementwise) mean gradient; s_j = L2 norm of column j of I over the
/// target rows; the score of filter f is sqrt of the sum of s_j over its k'^2
/// pooled positions.
inline ScoreTable dcs_scores(const ProbeModel& probe, const Tensor& mean_gradient, std::size_t k_prime,
                             std::size_t c_out) {
  require(k_prime >= 1 && c_out >= 1, "dcs_scores: k' and C_out must be positive");
  require(probe.weights.rank() == 2, "dcs_scores: probe weights must be [targets, features]");
  require(mean_gradient.shape() == probe.weights.shape(),
          "dcs_scores: gradient " + shape_str(mean_gradient.shape()) + " vs weights " +
              shape_str(probe.weights.shape()));
  const std::size_t per_filter = k_prime * k_prime;
  const std::size_t cols = probe.feature_dim();
  require(cols == c_out * per_filter, "dcs_scores: feature width " + std::to_string(cols) + " != C_out*k'^2 = " +
                                          std::to_string(c_out * per_filter));
  const std::size_t rows = probe.num_targets();

  std::vector<double> column_norm(cols, 0.0);
  for (std::size_t t = 0; t < rows; ++t)
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = static_cast<double>(probe.weights.at(t, j)) * mean_gradient.at(t, j);
      column_norm[j] += v * v;
    }
  ScoreTable table;
  table.criterion = criterion_name(Criterion::dcs);
  table.k_prime = k_prime;
  table.scores.resize(c_out);
  for (std::size_t f = 0; f < c_out; ++f) {
    double sum = 0.0;
    for (std::size_t j = f * per_filter; j < (f + 1) * per_filter; ++j) sum += std::sqrt(column_norm[j]);
    table.scores[f] = std::sqrt(sum);
  }
  return table;
}

namespace detail {

inline void require_conv(const ModelGraph& model, std::size_t layer, const char* op) {
  require(layer < model.size() && model.layers[layer].kind == LayerKind::conv2d,
          std::string(op) + ": layer " + std::to_string(layer) + " is not a conv layer");
}

inline void require_samples(const Dataset& data, const char* op) {
  require(data.size() > 0, std::string(op) + ": empty dataset");
}

/// Calls visit(activation, gradient) for each chunk, where both are [n,C,H,W]
/// at the output of layer `tap` and the gradient is that of each sample's own
/// cross-entropy loss.
template <typename Visit>
void for_activation_gradients(const ModelGraph& model, std::size_t tap, const Dataset& data, Visit&& visit) {
  for (std::size_t b = 0; b < data.size(); b += kEvalChunk) {
    const std::size_t e = std::min(data.size(), b + kEvalChunk);
    const auto trace = forward_trace(model, data.images.slice(b, e));
    const std::vector<std::size_t> y(data.labels.begin() + static_cast<std::ptrdiff_t>(b),
                                     data.labels.begin() + static_cast<std::ptrdiff_t>(e));
    Tensor up = cross_entropy_backward(trace.output(), y);
    for (float& v : up.data()) v *= static_cast<float>(e - b);  // per-sample loss gradient
    const auto grads = backward(model, trace, std::move(up), {tap}, tap);
    visit(trace.inputs[tap + 1], grads.output_grads.at(tap));
  }
}

inline ScoreTable make_table(Criterion c, std::size_t layer, std::size_t c_out) {
  ScoreTable t;
  t.criterion = criterion_name(c);
  t.layer = layer;
  t.scores.assign(c_out, 0.0);
  return t;
}

}  // namespace detail

/// First-order Taylor criterion: per sample |spatial mean of a*g| for each
/// filter, averaged over samples.
inline ScoreTable taylor_scores(const ModelGraph& model, std::size_t conv, const Dataset& data) {
  detail::require_conv(model, conv, "taylor_scores");
  detail::require_samples(data, "taylor_scores");
  const std::size_t c_out = model.layers[conv].weights.dim(0);
  auto table = detail::make_table(Criterion::taylor, conv, c_out);
  detail::for_activation_gradients(model, activation_layer(model, conv), data, [&](const Tensor& a, const Tensor& g) {
    const std::size_t n = a.dim(0), hw = a.dim(2) * a.dim(3);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < c_out; ++c) {
        const float* pa = a.raw() + (s * c_out + c) * hw;
        const float* pg = g.raw() + (s * c_out + c) * hw;
        double sum = 0.0;
        for (std::size_t i = 0; i < hw; ++i) sum += static_cast<double>(pa[i]) * pg[i];
        table.scores[c] += std::abs(sum / static_cast<double>(hw));
      }
  });
  for (double& v : table.scores) v /= static_cast<double>(data.size());
  return table;
}

/// Mean absolute loss gradient at each filter's pre-activation output.
inline ScoreTable sensitivity_scores(const ModelGraph& model, std::size_t conv, const Dataset& data) {
  detail::require_conv(model, conv, "sensitivity_scores");
  detail::require_samples(data, "sensitivity_scores");
  const std::size_t c_out = model.layers[conv].weights.dim(0);
  auto table = detail::make_table(Criterion::sensitivity, conv, c_out);
  std::size_t hw = 1;
  detail::for_activation_gradients(model, conv, data, [&](const Tensor&, const Tensor& g) {
    const std::size_t n = g.dim(0);
    hw = g.dim(2) * g.dim(3);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < c_out; ++c) {
        const float* pg = g.raw() + (s * c_out + c) * hw;
        double sum = 0.0;
        for (std::size_t i = 0; i < hw; ++i) sum += std::abs(static_cast<double>(pg[i]));
        table.scores[c] += sum;
      }
  });
  for (double& v : table.scores) v /= static_cast<double>(data.size() * hw);
  return table;
}

/// 1 - average fraction of zero post-ReLU entries, so larger means busier.
inline ScoreTable apoz_scores(const ModelGraph& model, std::size_t conv, const Dataset& data) {
  detail::require_conv(model, conv, "apoz_scores");
  detail::require_samples(data, "apoz_scores");
  const std::size_t c_out = model.layers[conv].weights.dim(0);
  auto table = detail::make_table(Criterion::apoz, conv, c_out);
  const std::size_t tap = activation_layer(model, conv);
  std::size_t hw = 1;
  for (std::size_t b = 0; b < data.size(); b += detail::kEvalChunk) {
    Tensor a = forward_range(model, data.images.slice(b, std::min(data.size(), b + detail::kEvalChunk)), 0, tap + 1);
    if (tap == conv) a = relu(a);
    const std::size_t n = a.dim(0);
    hw = a.dim(2) * a.dim(3);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t c = 0; c < c_out; ++c) {
        const float* p = a.raw() + (s * c_out + c) * hw;
        table.scores[c] += static_cast<double>(std::count_if(p, p + hw, [](float v) { return v > 0.0F; }));
      }
  }
  for (double& v : table.scores) v /= static_cast<double>(data.size() * hw);
  return table;
}

/// Sum of absolute kernel weights per filter.
inline ScoreTable l1_scores(const ModelGraph& model, std::size_t conv) {
  detail::require_conv(model, conv, "l1_scores");
  const Tensor& w = model.layers[conv].weights;
  const std::size_t c_out = w.dim(0), per = w.size() / c_out;
  auto table = detail::make_table(Criterion::l1, conv, c_out);
  for (std::size_t f = 0; f < c_out; ++f)
    for (std::size_t i = 0; i < per; ++i) table.scores[f] += std::abs(static_cast<double>(w[f * per + i]));
  return table;
}

/// Uniform random scores; a control for the other criteria.
inline ScoreTable random_scores(const ModelGraph& model, std::size_t conv, std::uint64_t seed) {
  detail::require_conv(model, conv, "random_scores");
  const std::size_t c_out = model.layers[conv].weights.dim(0);
  auto table = detail::make_table(Criterion::random, conv, c_out);
  table.seed = seed;
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + conv);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : table.scores) v = u(rng);
  return table;
}

struct ScoringConfig {
  std::size_t k_prime = 2;
  TrainConfig probe;
  std::uint64_t seed = 0;  // random criterion only
};

/// Scores of `conv` under `criterion` on `data`. DCS fits a probe on the
/// pooled post-activation output of the layer.
inline ScoreTable score_layer(const ModelGraph& model, std::size_t conv, const Dataset& data, Criterion criterion,
                              const ScoringConfig& config = {}) {
  switch (criterion) {
    case Criterion::dcs: {
      detail::require_conv(model, conv, "dcs_scores");
      const auto features = collect_features(model, activation_layer(model, conv), data, config.k_prime);
      const auto fit = fit_probe(features, config.probe);
      auto table = dcs_scores(fit.probe, fit.mean_gradient, config.k_prime, model.layers[conv].weights.dim(0));
      table.layer = conv;
      table.seed = config.probe.seed;
      return table;
    }
    case Criterion::taylor: return taylor_scores(model, conv, data);
    case Criterion::apoz: return apoz_scores(model, conv, data);
    case Criterion::sensitivity: return sensitivity_scores(model, conv, data);
    case Criterion::l1: return l1_scores(model, conv);
    case Criterion::random: return random_scores(model, conv, config.seed);
  }
  throw ValidationError("score_layer: unknown criterion");
}

}  // namespace seminf
