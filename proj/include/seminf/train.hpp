#pragma once

// Linear probe fitting and mini-batch SGD training for small classifiers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "seminf/data.hpp"
#include "seminf/errors.hpp"
#include "seminf/model.hpp"
#include "seminf/ops.hpp"
#include "seminf/tensor.hpp"

namespace seminf {

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double weight_decay = 1e-4;
  double momentum = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(std::isfinite(learning_rate) && learning_rate >= 0.0, "learning_rate must be >= 0");
    require(epochs > 0, "epochs must be positive");
    require(batch_size > 0, "batch_size must be positive");
    require(std::isfinite(weight_decay) && weight_decay >= 0.0, "weight_decay must be >= 0");
    require(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0,1)");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double learning_rate = 0.0;
};

using TrainTrace = std::vector<EpochRecord>;

/// Pooled, flattened activations of one layer for one class subset.
struct FeatureMatrix {
  Tensor rows;                          // [N, C_out * k'^2]
  std::vector<std::size_t> targets;     // 0..num_targets-1
  std::vector<std::size_t> classes;     // original class id of each target, ascending
  std::size_t k_prime = 2;
  std::size_t source_layer = 0;

  std::size_t size() const noexcept { return targets.size(); }
  std::size_t num_targets() const noexcept { return classes.size(); }
  std::size_t feature_dim() const { return rows.rank() == 2 ? rows.dim(1) : 0; }
};

/// Bias-free linear map from features to within-cluster classes.
struct ProbeModel {
  Tensor weights;  // [num_targets, feature_dim]
  bool trained = false;

  std::size_t num_targets() const { return weights.dim(0); }
  std::size_t feature_dim() const { return weights.dim(1); }
};

struct ProbeFit {
  ProbeModel probe;
  Tensor mean_gradient;  // same shape as probe.weights
  TrainTrace trace;      // trace[0] is the loss before any update
};

namespace detail {

inline constexpr std::size_t kEvalChunk = 256;

/// Shuffled index order for one epoch; a fresh engine per (seed, epoch) keeps
/// epochs independent of how many draws earlier epochs made.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch)};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

struct ProbeEval {
  double loss = 0.0;  // mean cross-entropy
  double accuracy = 0.0;
  std::vector<double> grad;  // mean d(loss)/dW, row-major [T, D]
};

/// Mean cross-entropy, accuracy and gradient of a bias-free linear probe over
/// the given rows, accumulated in double.
inline ProbeEval probe_eval(const Tensor& w, const FeatureMatrix& f, const std::size_t* rows,
                            std::size_t count, bool want_grad) {
  const std::size_t t_dim = w.dim(0), d = w.dim(1);
  ProbeEval out;
  if (want_grad) out.grad.assign(t_dim * d, 0.0);
  std::vector<double> logits(t_dim);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t r = rows ? rows[i] : i;
    const float* x = f.rows.raw() + r * d;
    for (std::size_t t = 0; t < t_dim; ++t) {
      double s = 0.0;
      const float* wt = w.raw() + t * d;
      for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(wt[j]) * x[j];
      logits[t] = s;
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (double v : logits) total += std::exp(v - peak);
    const std::size_t target = f.targets[r];
    out.loss += peak + std::log(total) - logits[target];
    if (static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin()) == target)
      ++correct;
    if (!want_grad) continue;
    for (std::size_t t = 0; t < t_dim; ++t) {
      const double delta = std::exp(logits[t] - peak) / total - (t == target ? 1.0 : 0.0);
      double* g = out.grad.data() + t * d;
      for (std::size_t j = 0; j < d; ++j) g[j] += delta * x[j];
    }
  }
  const double n = static_cast<double>(count);
  out.loss /= n;
  out.accuracy = static_cast<double>(correct) / n;
  for (double& g : out.grad) g /= n;
  return out;
}

inline double squared_norm(const Tensor& t) {
  double s = 0.0;
  for (float v : t.data()) s += static_cast<double>(v) * v;
  return s;
}

}  // namespace detail

namespace detail {

/// Pooled output of layers [0, end) for every sample; end == 0 pools the raw input.
inline FeatureMatrix pooled_features(const ModelGraph& model, std::size_t end, const Dataset& data,
                                     std::size_t k_prime, const char* op) {
  require(end <= model.size(), std::string(op) + ": layer out of range");
  require(k_prime >= 1, std::string(op) + ": k' must be positive");
  require(data.size() > 0, std::string(op) + ": empty dataset");
  check_batch(model, data.images);
  const Shape act = end == 0 ? model.input_shape : infer_shapes(model)[end - 1];
  require(act.size() == 3, std::string(op) + ": layer " + std::to_string(end) + " boundary is not a [C,H,W] activation");
  require(k_prime <= act[1] && k_prime <= act[2],
          std::string(op) + ": k'=" + std::to_string(k_prime) + " exceeds activation size " + shape_str(act));

  FeatureMatrix f;
  f.k_prime = k_prime;
  const std::set<std::size_t> distinct(data.labels.begin(), data.labels.end());
  f.classes.assign(distinct.begin(), distinct.end());
  f.targets.reserve(data.size());
  for (auto l : data.labels)
    f.targets.push_back(static_cast<std::size_t>(
        std::lower_bound(f.classes.begin(), f.classes.end(), l) - f.classes.begin()));

  const std::size_t width = act[0] * k_prime * k_prime;
  std::vector<float> rows;
  rows.reserve(data.size() * width);
  for (std::size_t b = 0; b < data.size(); b += kEvalChunk) {
    const Tensor chunk = data.images.slice(b, std::min(data.size(), b + kEvalChunk));
    const Tensor pooled = adaptive_avg_pool(forward_range(model, chunk, 0, end), k_prime);
    rows.insert(rows.end(), pooled.values().begin(), pooled.values().end());
  }
  f.rows = Tensor({data.size(), width}, std::move(rows));
  return f;
}

}  // namespace detail

/// Pooled activations of `layer` for every sample in `data`. Targets are the
/// labels re-indexed to 0..|classes|-1 in ascending class order.
inline FeatureMatrix collect_features(const ModelGraph& model, std::size_t layer, const Dataset& data,
                                      std::size_t k_prime = 2) {
  require(layer < model.size(), "collect_features: layer " + std::to_string(layer) + " out of range");
  auto f = detail::pooled_features(model, layer + 1, data, k_prime, "collect_features");
  f.source_layer = layer;
  return f;
}

/// Same as collect_features for the input of `layer` (the raw image when 0).
inline FeatureMatrix collect_input_features(const ModelGraph& model, std::size_t layer, const Dataset& data,
                                            std::size_t k_prime = 2) {
  auto f = detail::pooled_features(model, layer, data, k_prime, "collect_input_features");
  f.source_layer = layer;
  return f;
}

/// Mean gradient of the probe's cross-entropy over every row, without decay.
inline Tensor probe_mean_gradient(const ProbeModel& probe, const FeatureMatrix& f) {
  require(probe.feature_dim() == f.feature_dim(), "probe_mean_gradient: feature width mismatch");
  const auto e = detail::probe_eval(probe.weights, f, nullptr, f.size(), true);
  Tensor g(probe.weights.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(e.grad[i]);
  return g;
}

/// Original class id predicted by the probe for each feature row.
inline std::vector<std::size_t> probe_predict(const ProbeModel& probe, const FeatureMatrix& f,
                                              const std::vector<std::size_t>& classes) {
  require(probe.feature_dim() == f.feature_dim(), "probe_predict: feature width mismatch");
  require(classes.size() == probe.num_targets(), "probe_predict: class list does not match probe");
  const std::size_t t_dim = probe.num_targets(), d = probe.feature_dim();
  std::vector<std::size_t> out(f.size());
  for (std::size_t r = 0; r < f.size(); ++r) {
    const float* x = f.rows.raw() + r * d;
    std::size_t best = 0;
    double best_v = 0.0;
    for (std::size_t t = 0; t < t_dim; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += static_cast<double>(probe.weights.at(t, j)) * x[j];
      if (t == 0 || s > best_v) {
        best = t;
        best_v = s;
      }
    }
    out[r] = classes[best];
  }
  return out;
}

/// Fits a zero-initialised bias-free softmax probe by mini-batch SGD. After
/// each epoch the full objective is evaluated; an increase reverts the epoch
/// and halves the learning rate, so the recorded loss never increases.
inline ProbeFit fit_probe(const FeatureMatrix& f, const TrainConfig& config) {
  config.validate();
  require(f.rows.rank() == 2 && f.rows.dim(0) == f.size() && f.size() > 0,
          "fit_probe: feature rows do not match targets");
  require(f.rows.all_finite(), "fit_probe: non-finite features");
  for (auto t : f.targets) require(t < f.num_targets(), "fit_probe: target out of range");
  const std::set<std::size_t> present(f.targets.begin(), f.targets.end());
  require(present.size() >= 2, "fit_probe: at least two distinct targets are required");

  const std::size_t t_dim = f.num_targets(), d = f.feature_dim(), n = f.size();
  const double wd = config.weight_decay;
  auto objective = [&](const Tensor& w) {
    const auto e = detail::probe_eval(w, f, nullptr, n, false);
    return std::pair{e.loss + 0.5 * wd * detail::squared_norm(w), e.accuracy};
  };

  ProbeFit fit;
  Tensor w({t_dim, d}, 0.0F);
  double lr = config.learning_rate;
  auto [loss, acc] = objective(w);
  fit.trace.push_back({0, loss, acc, lr});

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    Tensor candidate = w;
    if (lr > 0.0) {
      const auto order = detail::epoch_order(n, config.seed, epoch);
      for (std::size_t b = 0; b < n; b += config.batch_size) {
        const std::size_t count = std::min(config.batch_size, n - b);
        const auto e = detail::probe_eval(candidate, f, order.data() + b, count, true);
        for (std::size_t i = 0; i < candidate.size(); ++i)
          candidate[i] -= static_cast<float>(lr * (e.grad[i] + wd * candidate[i]));
      }
    }
    const auto [next_loss, next_acc] = objective(candidate);
    if (next_loss <= loss) {
      w = std::move(candidate);
      loss = next_loss;
      acc = next_acc;
    } else {
      lr *= 0.5;
    }
    fit.trace.push_back({epoch, loss, acc, lr});
  }
  require(w.all_finite(), "fit_probe: training diverged");
  fit.probe = ProbeModel{std::move(w), true};
  fit.mean_gradient = probe_mean_gradient(fit.probe, f);
  return fit;
}

// ---------------------------------------------------------------------------
// evaluation helpers

/// Logits for a batch of inputs, evaluated in fixed-size chunks.
inline Tensor batched_logits(const ModelGraph& model, const Tensor& inputs) {
  check_batch(model, inputs);
  if (inputs.rank() == model.input_shape.size()) return forward_full(model, inputs).logits;
  std::vector<float> out;
  std::size_t width = 0;
  for (std::size_t b = 0; b < inputs.dim(0); b += detail::kEvalChunk) {
    const Tensor logits =
        forward_range(model, inputs.slice(b, std::min(inputs.dim(0), b + detail::kEvalChunk)), 0, model.size());
    width = logits.dim(1);
    out.insert(out.end(), logits.values().begin(), logits.values().end());
  }
  return Tensor({inputs.dim(0), width}, std::move(out));
}

/// Index of the largest entry of each row; the lowest index wins ties.
inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  require(logits.rank() == 2, "argmax_rows: expected [N,C]");
  std::vector<std::size_t> out(logits.dim(0));
  const std::size_t c = logits.dim(1);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const float* row = logits.raw() + r * c;
    out[r] = static_cast<std::size_t>(std::max_element(row, row + c) - row);
  }
  return out;
}

inline double accuracy(const std::vector<std::size_t>& predicted, const std::vector<std::size_t>& labels) {
  require(predicted.size() == labels.size(), "accuracy: size mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

inline double evaluate_accuracy(const ModelGraph& model, const Tensor& inputs,
                                const std::vector<std::size_t>& labels) {
  return accuracy(argmax_rows(batched_logits(model, inputs)), labels);
}

// ---------------------------------------------------------------------------
// classifier training

struct ClassifierFit {
  ModelGraph model;
  TrainTrace trace;  // one record per epoch, measured on the training inputs
};

/// Mini-batch SGD (optionally with momentum) on softmax cross-entropy. A zero
/// learning rate leaves the weights untouched.
inline ClassifierFit train_classifier(ModelGraph model, const Tensor& inputs,
                                      const std::vector<std::size_t>& labels, const TrainConfig& config) {
  config.validate();
  validate_model(model);
  require(inputs.rank() == model.input_shape.size() + 1, "train_classifier: inputs must be batched");
  check_batch(model, inputs);
  require(inputs.dim(0) == labels.size() && !labels.empty(), "train_classifier: inputs/labels mismatch");
  for (auto l : labels)
    require(l < model.num_classes, "train_classifier: label " + std::to_string(l) + " out of range");

  const std::size_t n = labels.size();
  std::vector<std::size_t> param_layers;
  for (std::size_t i = 0; i < model.size(); ++i)
    if (model.layers[i].has_params()) param_layers.push_back(i);
  std::vector<LayerGrads> velocity;
  for (auto i : param_layers)
    velocity.push_back({Tensor(model.layers[i].weights.shape()), Tensor(model.layers[i].bias.shape())});

  const auto lr = static_cast<float>(config.learning_rate);
  const auto wd = static_cast<float>(config.weight_decay);
  const auto mu = static_cast<float>(config.momentum);
  auto update = [&](Tensor& value, Tensor& vel, const Tensor& grad) {
    for (std::size_t k = 0; k < value.size(); ++k) {
      vel[k] = mu * vel[k] + grad[k] + wd * value[k];
      value[k] -= lr * vel[k];
    }
  };

  ClassifierFit fit;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = detail::epoch_order(n, config.seed, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < n; b += config.batch_size) {
      const std::span<const std::size_t> rows(order.data() + b, std::min(config.batch_size, n - b));
      const Tensor x = gather_rows(inputs, rows);
      std::vector<std::size_t> y;
      y.reserve(rows.size());
      for (auto r : rows) y.push_back(labels[r]);
      const auto trace = forward_trace(model, x);
      loss_sum += cross_entropy(trace.output(), y) * static_cast<double>(rows.size());
      const auto pred = argmax_rows(trace.output());
      for (std::size_t k = 0; k < y.size(); ++k) correct += pred[k] == y[k];
      if (lr == 0.0F) continue;
      auto grads = backward(model, trace, cross_entropy_backward(trace.output(), y));
      for (std::size_t p = 0; p < param_layers.size(); ++p) {
        auto& layer = model.layers[param_layers[p]];
        const auto& g = *grads.params[param_layers[p]];
        update(layer.weights, velocity[p].weights, g.weights);
        update(layer.bias, velocity[p].bias, g.bias);
      }
    }
    fit.trace.push_back({epoch, loss_sum / static_cast<double>(n),
                         static_cast<double>(correct) / static_cast<double>(n), config.learning_rate});
  }
  for (const auto& l : model.layers)
    require(l.weights.all_finite() && l.bias.all_finite(), "train_classifier: training diverged");
  fit.model = std::move(model);
  return fit;
}

inline ClassifierFit train_classifier(ModelGraph model, const Dataset& data, const TrainConfig& config) {
  return train_classifier(std::move(model), data.images, data.labels, config);
}

}  // namespace seminf
