#pragma once

// Split-layer selection, the cluster route predictor (SRP) and the routed
// inference pipeline: shared feature extractor, confidence test, then either
// a cluster subgraph or the remaining full layers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seminf/data.hpp"
#include "seminf/errors.hpp"
#include "seminf/extract.hpp"
#include "seminf/model.hpp"
#include "seminf/train.hpp"

namespace seminf {

struct SplitCandidate {
  std::size_t layer = 0;
  double accuracy = 0.0;  // full-class probe accuracy on the held-out split
};

struct SplitSelection {
  std::size_t layer = 0;
  bool fallback = false;  // no candidate reached the target; deepest conv chosen
  std::vector<SplitCandidate> candidates;  // evaluated shallow to deep
};

/// Earliest conv layer M whose input activation (output of layer M-1, or the
/// image when M is 0) supports a full-class linear probe reaching `target` on
/// `val`. Candidates past the first success are not evaluated.
inline SplitSelection select_split_layer(const ModelGraph& model, const Dataset& train, const Dataset& val,
                                         double target = 0.75, const TrainConfig& probe = {},
                                         std::size_t k_prime = 2) {
  const auto convs = model.conv_layers();
  require(!convs.empty(), "select_split_layer: model has no conv layers");
  SplitSelection out;
  for (auto m : convs) {
    const auto tf = collect_input_features(model, m, train, k_prime);
    const auto vf = collect_input_features(model, m, val, k_prime);
    const auto fit = fit_probe(tf, probe);
    const double acc = accuracy(probe_predict(fit.probe, vf, tf.classes), val.labels);
    out.candidates.push_back({m, acc});
    if (acc >= target) {
      out.layer = m;
      return out;
    }
  }
  out.layer = convs.back();
  out.fallback = true;
  return out;
}

// ---------------------------------------------------------------------------
// route predictor

/// conv(C->C) relu conv(C->C/2) relu pool(2) flatten dense(128) relu dense(64)
/// relu dense(K), for a [C,H,W] input.
inline ModelGraph make_srp(const Shape& input_shape, std::size_t num_clusters, std::uint64_t seed) {
  require(input_shape.size() == 3, "make_srp: input must be [C,H,W]");
  require(input_shape[1] >= 2 && input_shape[2] >= 2, "make_srp: input spatial size must be at least 2x2");
  require(num_clusters >= 2, "make_srp: at least two clusters are required");
  const std::size_t c = input_shape[0], half = std::max<std::size_t>(1, c / 2);
  ModelGraph m;
  m.input_shape = input_shape;
  m.num_classes = num_clusters;
  m.layers = {make_conv("srp_conv0", c, c, 3, 1, 1),
              make_layer("srp_relu0", LayerKind::relu),
              make_conv("srp_conv1", c, half, 3, 1, 1),
              make_layer("srp_relu1", LayerKind::relu),
              make_layer("srp_pool", LayerKind::adaptive_avg_pool, 2),
              make_layer("srp_flatten", LayerKind::flatten),
              make_dense("srp_fc0", half * 4, 128),
              make_layer("srp_relu2", LayerKind::relu),
              make_dense("srp_fc1", 128, 64),
              make_layer("srp_relu3", LayerKind::relu),
              make_dense("srp_fc2", 64, num_clusters)};
  init_he(m, seed);
  validate_model(m);
  return m;
}

/// Output of the shared feature extractor (layers [0, split)) for every sample.
inline Tensor cfe_features(const ModelGraph& model, std::size_t split, const Tensor& images) {
  check_batch(model, images);
  std::vector<float> out;
  Shape shape;
  for (std::size_t b = 0; b < images.dim(0); b += detail::kEvalChunk) {
    const Tensor a = forward_range(model, images.slice(b, std::min(images.dim(0), b + detail::kEvalChunk)), 0, split);
    shape = a.shape();
    out.insert(out.end(), a.values().begin(), a.values().end());
  }
  shape[0] = images.dim(0);
  return Tensor(std::move(shape), std::move(out));
}

inline std::vector<std::size_t> cluster_labels(const ClusterMap& clusters, const std::vector<std::size_t>& labels) {
  const auto owner = clusters.class_to_cluster();
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (auto l : labels) out.push_back(owner.at(l));
  return out;
}

struct SrpFit {
  ModelGraph srp;
  double val_accuracy = 0.0;
  TrainTrace trace;
};

/// Trains the route predictor on (CFE activation, cluster id) pairs. The base
/// model is only read.
inline SrpFit train_srp(const ModelGraph& model, std::size_t split, const Dataset& train, const Dataset& val,
                        const ClusterMap& clusters, const TrainConfig& config) {
  require(split < model.size(), "train_srp: split layer out of range");
  clusters.validate(model.num_classes);
  require(clusters.size() >= 2, "train_srp: at least two clusters are required");
  const Shape in = split == 0 ? model.input_shape : infer_shapes(model)[split - 1];
  auto fit = train_classifier(make_srp(in, clusters.size(), config.seed), cfe_features(model, split, train.images),
                              cluster_labels(clusters, train.labels), config);
  SrpFit out{std::move(fit.model), 0.0, std::move(fit.trace)};
  out.val_accuracy =
      evaluate_accuracy(out.srp, cfe_features(model, split, val.images), cluster_labels(clusters, val.labels));
  return out;
}

/// Highest minus second-highest probability.
inline double confidence(std::span<const float> probabilities) {
  require(probabilities.size() >= 2, "confidence: at least two clusters are required");
  double total = 0.0, first = -1.0, second = -1.0;
  for (float p : probabilities) {
    total += p;
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  require(std::abs(total - 1.0) <= 1e-6, "confidence: probabilities must sum to 1");
  return first - second;
}

// ---------------------------------------------------------------------------
// routed inference

struct RoutingDecision {
  std::size_t predicted_cluster = 0;
  double confidence = 0.0;
  bool routed = false;  // confidence > alpha and the cluster has an accepted subgraph

  std::string path() const { return routed ? "cluster" + std::to_string(predicted_cluster) : "FULL"; }
};

struct InferenceRecord {
  std::size_t prediction = 0;
  RoutingDecision decision;
  std::uint64_t cfe_macs = 0;
  std::uint64_t srp_macs = 0;
  std::uint64_t tail_macs = 0;  // layers [split, L) on the chosen path

  std::uint64_t total_macs() const noexcept { return cfe_macs + srp_macs + tail_macs; }
};

/// Immutable bundle of base model, route predictor and accepted subgraphs.
class Router {
 public:
  Router(ModelGraph model, ModelGraph srp, std::size_t split, std::vector<SubgraphAnnotation> annotations,
         double alpha)
      : model_(std::move(model)), srp_(std::move(srp)), split_(split), alpha_(alpha) {
    validate_model(model_);
    validate_model(srp_);
    require(split_ < model_.size() && model_.layers[split_].kind == LayerKind::conv2d,
            "router: split layer " + std::to_string(split_) + " is not a conv layer");
    require(std::isfinite(alpha_) && alpha_ >= 0.0, "router: alpha must be >= 0");
    const Shape cfe_shape = split_ == 0 ? model_.input_shape : infer_shapes(model_)[split_ - 1];
    require(srp_.input_shape == cfe_shape, "router: SRP input " + shape_str(srp_.input_shape) +
                                               " does not match CFE output " + shape_str(cfe_shape));
    require(srp_.num_classes >= 2, "router: SRP must predict at least two clusters");
    for (auto& a : annotations) {
      require(a.split_layer == split_, "router: annotation split " + std::to_string(a.split_layer) +
                                           " differs from SRP split " + std::to_string(split_));
      require(a.cluster_id >= 0 && static_cast<std::size_t>(a.cluster_id) < srp_.num_classes,
              "router: annotation cluster " + std::to_string(a.cluster_id) + " outside SRP range");
      validate_annotation(model_, a);
      const auto id = static_cast<std::size_t>(a.cluster_id);
      require(!annotations_.count(id), "router: duplicate annotation for cluster " + std::to_string(id));
      tail_macs_[id] = cost_range(model_, &a, split_, model_.size()).macs;
      annotations_.emplace(id, std::move(a));
    }
    cfe_macs_ = cost_range(model_, nullptr, 0, split_).macs;
    full_tail_macs_ = cost_range(model_, nullptr, split_, model_.size()).macs;
    srp_macs_ = mac_count(srp_);
  }

  const ModelGraph& model() const noexcept { return model_; }
  const ModelGraph& srp() const noexcept { return srp_; }
  std::size_t split() const noexcept { return split_; }
  double alpha() const noexcept { return alpha_; }
  const std::map<std::size_t, SubgraphAnnotation>& annotations() const noexcept { return annotations_; }

  /// Same components with a different threshold.
  Router with_alpha(double alpha) const {
    Router r = *this;
    require(std::isfinite(alpha) && alpha >= 0.0, "router: alpha must be >= 0");
    r.alpha_ = alpha;
    return r;
  }

  /// SRP probabilities for CFE activations [N, ...].
  Tensor cluster_probabilities(const Tensor& features) const { return softmax(batched_logits(srp_, features)); }

  /// Routes a batch [N,C,H,W]. The CFE runs exactly once per input; its
  /// activation feeds both the SRP and whichever tail is chosen.
  std::vector<InferenceRecord> infer(const Tensor& images, ExecStats* stats = nullptr) const {
    check_batch(model_, images);
    require(images.rank() == model_.input_shape.size() + 1, "router: infer expects a batch");
    const std::size_t n = images.dim(0);
    std::vector<InferenceRecord> records(n);
    for (std::size_t b = 0; b < n; b += detail::kEvalChunk) {
      const std::size_t e = std::min(n, b + detail::kEvalChunk);
      const Tensor features = forward_range(model_, images.slice(b, e), 0, split_, nullptr, nullptr, stats);
      route_chunk(features, std::span(records).subspan(b, e - b), stats);
    }
    return records;
  }

  /// Routing on precomputed CFE activations (threshold sweeps reuse them).
  std::vector<InferenceRecord> infer_from_features(const Tensor& features, ExecStats* stats = nullptr) const {
    std::vector<InferenceRecord> records(features.dim(0));
    for (std::size_t b = 0; b < records.size(); b += detail::kEvalChunk) {
      const std::size_t e = std::min(records.size(), b + detail::kEvalChunk);
      route_chunk(features.slice(b, e), std::span(records).subspan(b, e - b), stats);
    }
    return records;
  }

  /// Routing decisions from SRP probabilities alone.
  std::vector<RoutingDecision> decide(const Tensor& probabilities) const {
    const std::size_t k = probabilities.dim(1);
    std::vector<RoutingDecision> out(probabilities.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::span<const float> row(probabilities.raw() + i * k, k);
      auto& d = out[i];
      d.predicted_cluster = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      d.confidence = confidence(row);
      d.routed = d.confidence > alpha_ && annotations_.count(d.predicted_cluster) > 0;
    }
    return out;
  }

 private:
  void route_chunk(const Tensor& features, std::span<InferenceRecord> records, ExecStats* stats) const {
    const auto decisions = decide(cluster_probabilities(features));
    std::map<std::optional<std::size_t>, std::vector<std::size_t>> groups;  // nullopt = full tail
    for (std::size_t i = 0; i < decisions.size(); ++i)
      groups[decisions[i].routed ? std::optional(decisions[i].predicted_cluster) : std::nullopt].push_back(i);
    for (const auto& [cluster, rows] : groups) {
      const Tensor x = gather_rows(features, rows);
      const Tensor logits = cluster ? forward_masked(model_, Tensor(), annotations_.at(*cluster), x, stats)
                                    : forward_range(model_, x, split_, model_.size(), nullptr, nullptr, stats);
      const auto pred = argmax_rows(logits);
      for (std::size_t j = 0; j < rows.size(); ++j) {
        auto& r = records[rows[j]];
        r.prediction = pred[j];
        r.decision = decisions[rows[j]];
        r.cfe_macs = cfe_macs_;
        r.srp_macs = srp_macs_;
        r.tail_macs = cluster ? tail_macs_.at(*cluster) : full_tail_macs_;
      }
    }
  }

  ModelGraph model_;
  ModelGraph srp_;
  std::size_t split_;
  double alpha_;
  std::map<std::size_t, SubgraphAnnotation> annotations_;
  std::map<std::size_t, std::uint64_t> tail_macs_;
  std::uint64_t cfe_macs_ = 0;
  std::uint64_t full_tail_macs_ = 0;
  std::uint64_t srp_macs_ = 0;
};

/// index,true_class,true_cluster,predicted_cluster,confidence,routed,prediction,cfe_macs,srp_macs,tail_macs
inline std::string routing_trace_csv(const std::vector<InferenceRecord>& records,
                                     const std::vector<std::size_t>& labels, const ClusterMap& clusters) {
  require(records.size() == labels.size(), "routing_trace_csv: records/labels mismatch");
  const auto owner = clusters.class_to_cluster();
  std::string out =
      "index,true_class,true_cluster,predicted_cluster,confidence,routed,prediction,cfe_macs,srp_macs,tail_macs\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    out += std::to_string(i) + "," + std::to_string(labels[i]) + "," + std::to_string(owner.at(labels[i])) + "," +
           std::to_string(r.decision.predicted_cluster) + "," + format_number(r.decision.confidence) + "," +
           (r.decision.routed ? "1" : "0") + "," + std::to_string(r.prediction) + "," + std::to_string(r.cfe_macs) +
           "," + std::to_string(r.srp_macs) + "," + std::to_string(r.tail_macs) + "\n";
  }
  return out;
}

}  // namespace seminf
