#pragma once

// Per-cluster subgraph extraction: retention schedules, filter ranking,
// accuracy-gated acceptance, the (r_L, r_M) sweep and single-cluster pruning.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "seminf/data.hpp"
#include "seminf/errors.hpp"
#include "seminf/model.hpp"
#include "seminf/scoring.hpp"
#include "seminf/train.hpp"

namespace seminf {

inline void require_rate(double r, const char* what) {
  require(std::isfinite(r) && r > 0.0 && r <= 1.0, std::string(what) + " must be in (0,1], got " + std::to_string(r));
}

/// r_l = r_M + (l - M)(r_L - r_M)/(L - M), clamped to (0,1]. L == M yields r_L.
inline double retention_rate(std::size_t l, std::size_t split, std::size_t last, double r_L, double r_M) {
  require(split <= last, "retention schedule: split layer after last layer");
  require(l >= split && l <= last, "retention schedule: layer " + std::to_string(l) + " outside [M, L]");
  require_rate(r_L, "r_L");
  require_rate(r_M, "r_M");
  if (l == last) return r_L;
  if (l == split) return r_M;
  const double r = r_M + static_cast<double>(l - split) * (r_L - r_M) / static_cast<double>(last - split);
  return std::clamp(r, std::nextafter(0.0, 1.0), 1.0);
}

/// Rates for every layer index in [M, L].
inline std::map<std::size_t, double> retention_schedule(std::size_t last, std::size_t split, double r_L, double r_M) {
  require(split <= last, "retention schedule: split layer after last layer");
  std::map<std::size_t, double> out;
  for (std::size_t l = split; l <= last; ++l) out[l] = retention_rate(l, split, last, r_L, r_M);
  return out;
}

/// Rates for the conv layers of `model` from `split` to the last conv layer,
/// interpolated over model layer indices.
inline std::map<std::size_t, double> retention_schedule(const ModelGraph& model, std::size_t split, double r_L,
                                                        double r_M) {
  const auto convs = model.conv_layers();
  require(!convs.empty(), "retention schedule: model has no conv layers");
  require(split < model.size() && model.layers[split].kind == LayerKind::conv2d,
          "retention schedule: split layer " + std::to_string(split) + " is not a conv layer");
  std::map<std::size_t, double> out;
  for (auto c : convs)
    if (c >= split) out[c] = retention_rate(c, split, convs.back(), r_L, r_M);
  return out;
}

/// ceil(r * c_out), at least one filter. A 1e-9 slack absorbs products such
/// as 0.3 * 10 that land just above an integer.
inline std::size_t retained_count(double rate, std::size_t c_out) {
  require_rate(rate, "retention rate");
  require(c_out >= 1, "retained_count: layer has no filters");
  const double want = std::ceil(rate * static_cast<double>(c_out) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(want, 1.0)), 1, c_out);
}

/// Filter ids by descending score; equal scores keep the lower id first.
inline std::vector<std::size_t> rank_filters(const std::vector<double>& scores) {
  for (double s : scores) require(std::isfinite(s), "rank_filters: non-finite score");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

/// The `count` best-ranked filter ids in ascending id order.
inline std::vector<std::size_t> top_filters(const std::vector<double>& scores, std::size_t count) {
  require(count >= 1 && count <= scores.size(), "top_filters: count out of range");
  auto order = rank_filters(scores);
  order.resize(count);
  std::sort(order.begin(), order.end());
  return order;
}

/// Scores keyed by (cluster, layer, criterion, seed). Valid for one model.
class ScoreCache {
 public:
  using Key = std::tuple<std::int64_t, std::size_t, std::string, std::uint64_t>;

  template <typename Compute>
  const ScoreTable& get(const Key& key, Compute&& compute) {
    auto it = tables_.find(key);
    if (it == tables_.end()) it = tables_.emplace(key, compute()).first;
    return it->second;
  }

  std::size_t size() const noexcept { return tables_.size(); }
  std::vector<ScoreTable> tables() const {
    std::vector<ScoreTable> out;
    for (const auto& [k, t] : tables_) out.push_back(t);
    return out;
  }

 private:
  std::map<Key, ScoreTable> tables_;
};

struct ExtractionConfig {
  double r_L = 1.0;
  double r_M = 1.0;
  std::optional<double> tau_acc;  // derived from epsilon when absent
  double epsilon = 0.02;
  std::size_t split_layer = 0;
  Criterion criterion = Criterion::dcs;
  ScoringConfig scoring;
};

inline std::uint64_t criterion_seed(const ExtractionConfig& c) {
  return c.criterion == Criterion::random ? c.scoring.seed : c.criterion == Criterion::dcs ? c.scoring.probe.seed : 0;
}

/// Scores for every conv layer from the split on, computed on `score_data`.
inline std::map<std::size_t, ScoreTable> score_layers(const ModelGraph& model, const Dataset& score_data,
                                                      std::int64_t cluster_id, const ExtractionConfig& config,
                                                      ScoreCache* cache = nullptr) {
  std::map<std::size_t, ScoreTable> out;
  for (auto conv : model.conv_layers()) {
    if (conv < config.split_layer) continue;
    auto compute = [&] {
      auto t = score_layer(model, conv, score_data, config.criterion, config.scoring);
      t.cluster_id = cluster_id;
      return t;
    };
    if (cache)
      out[conv] = cache->get({cluster_id, conv, criterion_name(config.criterion), criterion_seed(config)}, compute);
    else
      out[conv] = compute();
  }
  return out;
}

/// Keeps the top ceil(r_l * C_out) filters of each scored layer.
inline SubgraphAnnotation annotation_from_scores(const ModelGraph& model, std::size_t split,
                                                 const std::map<std::size_t, ScoreTable>& scores,
                                                 const std::map<std::size_t, double>& retention,
                                                 std::int64_t cluster_id) {
  SubgraphAnnotation a;
  a.cluster_id = cluster_id;
  a.split_layer = split;
  for (const auto& [layer, rate] : retention) {
    const auto it = scores.find(layer);
    require(it != scores.end(), "missing scores for layer " + std::to_string(layer));
    const std::size_t c_out = model.layers.at(layer).weights.dim(0);
    require(it->second.size() == c_out, "score table for layer " + std::to_string(layer) + " has wrong length");
    a.retained[layer] = top_filters(it->second.scores, retained_count(rate, c_out));
  }
  validate_annotation(model, a);
  return a;
}

/// Top-1 accuracy of the masked model over all classes.
inline double masked_accuracy(const ModelGraph& model, const SubgraphAnnotation& a, const Dataset& data) {
  require(data.size() > 0, "masked_accuracy: empty dataset");
  std::vector<std::size_t> predicted;
  predicted.reserve(data.size());
  for (std::size_t b = 0; b < data.size(); b += detail::kEvalChunk) {
    const auto p = argmax_rows(forward_masked(model, data.images.slice(b, std::min(data.size(), b + detail::kEvalChunk)), a));
    predicted.insert(predicted.end(), p.begin(), p.end());
  }
  return accuracy(predicted, data.labels);
}

struct Extraction {
  SubgraphAnnotation annotation;
  double accuracy = 0.0;
  bool accepted = false;
  std::uint64_t macs = 0;
};

/// Ranks filters on `score_data`, keeps the scheduled top fraction per layer
/// and measures accuracy on `eval_data`. The annotation is returned whether or
/// not it clears the threshold.
inline Extraction extract_subgraph(const ModelGraph& model, const Dataset& score_data, const Dataset& eval_data,
                                   std::int64_t cluster_id, const ExtractionConfig& config,
                                   ScoreCache* cache = nullptr) {
  require(score_data.size() > 0, "extract_subgraph: empty cluster dataset");
  require(eval_data.size() > 0, "extract_subgraph: empty evaluation dataset");
  const auto schedule = retention_schedule(model, config.split_layer, config.r_L, config.r_M);
  const auto scores = score_layers(model, score_data, cluster_id, config, cache);
  Extraction out;
  out.annotation = annotation_from_scores(model, config.split_layer, scores, schedule, cluster_id);
  out.annotation.r_L = config.r_L;
  out.annotation.r_M = config.r_M;
  out.accuracy = masked_accuracy(model, out.annotation, eval_data);
  out.annotation.recorded_accuracy = out.accuracy;
  out.accepted = config.tau_acc ? out.accuracy >= *config.tau_acc : true;
  out.macs = mac_count(model, &out.annotation);
  return out;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepGrid {
  std::vector<double> r_L{0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1};
  std::vector<double> r_M{0.10, 0.08, 0.06, 0.04, 0.02};

  void validate() const {
    require(!r_L.empty() && !r_M.empty(), "sweep grid is empty");
    for (double r : r_L) require_rate(r, "r_L");
    for (double r : r_M) require_rate(r, "r_M");
  }
};

struct SweepPoint {
  double r_L = 0.0;
  double r_M = 0.0;
  std::vector<Extraction> clusters;  // index = cluster id
  double mean_accuracy = 0.0;
  double mean_macs = 0.0;
  bool accepted = false;  // mean_accuracy >= tau_acc
};

struct SweepResult {
  std::vector<double> base_accuracy;  // per cluster, full model on the evaluation split
  double tau_acc = 0.0;
  double epsilon = 0.0;
  std::vector<SweepPoint> points;  // grid order: r_L outer, r_M inner
  std::vector<std::size_t> pareto;  // indices into points, by ascending mean MACs
  std::optional<std::size_t> best;  // MAC-minimal accepted point

  /// A cluster's annotation at an accepted point that also stays within
  /// epsilon of that cluster's base accuracy.
  bool annotation_accepted(std::size_t point, std::size_t cluster) const {
    const auto& p = points.at(point);
    return p.accepted && p.clusters.at(cluster).accuracy >= base_accuracy.at(cluster) - epsilon;
  }

  std::vector<SubgraphAnnotation> accepted_annotations(std::size_t point) const {
    std::vector<SubgraphAnnotation> out;
    for (std::size_t k = 0; k < points.at(point).clusters.size(); ++k)
      if (annotation_accepted(point, k)) out.push_back(points[point].clusters[k].annotation);
    return out;
  }
};

/// Full-model top-1 accuracy on each cluster's slice of `data`.
inline std::vector<double> base_cluster_accuracy(const ModelGraph& model, const ClusterMap& clusters,
                                                 const Dataset& data) {
  std::vector<double> out;
  for (const auto& c : clusters.clusters) {
    const auto subset = data.filter_classes(c.classes);
    require(subset.size() > 0, "cluster " + std::to_string(c.id) + " has no evaluation samples");
    out.push_back(evaluate_accuracy(model, subset.images, subset.labels));
  }
  return out;
}

/// Points not dominated in (higher mean accuracy, lower mean MACs).
inline std::vector<std::size_t> pareto_front(const std::vector<SweepPoint>& points) {
  std::vector<std::size_t> front;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j) {
      if (i == j) continue;
      const bool no_worse =
          points[j].mean_accuracy >= points[i].mean_accuracy && points[j].mean_macs <= points[i].mean_macs;
      const bool better = points[j].mean_accuracy > points[i].mean_accuracy || points[j].mean_macs < points[i].mean_macs;
      dominated = no_worse && better;
    }
    if (!dominated) front.push_back(i);
  }
  std::stable_sort(front.begin(), front.end(),
                   [&](std::size_t a, std::size_t b) { return points[a].mean_macs < points[b].mean_macs; });
  return front;
}

/// Extracts every cluster at every grid point. Scores come from `score_data`
/// and accuracies from `eval_data`; tau_acc defaults to the mean base cluster
/// accuracy minus epsilon.
inline SweepResult sweep_extract(const ModelGraph& model, const ClusterMap& clusters, const Dataset& score_data,
                                 const Dataset& eval_data, const SweepGrid& grid, const ExtractionConfig& config,
                                 ScoreCache* cache = nullptr) {
  grid.validate();
  clusters.validate(model.num_classes);
  ScoreCache local;
  if (!cache) cache = &local;

  SweepResult result;
  result.epsilon = config.epsilon;
  result.base_accuracy = base_cluster_accuracy(model, clusters, eval_data);
  const double base_mean = std::accumulate(result.base_accuracy.begin(), result.base_accuracy.end(), 0.0) /
                           static_cast<double>(clusters.size());
  result.tau_acc = config.tau_acc.value_or(base_mean - config.epsilon);

  std::vector<Dataset> score_sets, eval_sets;
  for (const auto& c : clusters.clusters) {
    score_sets.push_back(score_data.filter_classes(c.classes));
    eval_sets.push_back(eval_data.filter_classes(c.classes));
  }

  for (double r_L : grid.r_L)
    for (double r_M : grid.r_M) {
      SweepPoint point{r_L, r_M, {}, 0.0, 0.0, false};
      ExtractionConfig c = config;
      c.r_L = r_L;
      c.r_M = r_M;
      c.tau_acc = result.tau_acc;
      for (std::size_t k = 0; k < clusters.size(); ++k) {
        auto e = extract_subgraph(model, score_sets[k], eval_sets[k], static_cast<std::int64_t>(k), c, cache);
        point.mean_accuracy += e.accuracy;
        point.mean_macs += static_cast<double>(e.macs);
        point.clusters.push_back(std::move(e));
      }
      point.mean_accuracy /= static_cast<double>(clusters.size());
      point.mean_macs /= static_cast<double>(clusters.size());
      point.accepted = point.mean_accuracy >= result.tau_acc;
      result.points.push_back(std::move(point));
    }

  result.pareto = pareto_front(result.points);
  for (std::size_t i = 0; i < result.points.size(); ++i)
    if (result.points[i].accepted && (!result.best || result.points[i].mean_macs < result.points[*result.best].mean_macs))
      result.best = i;
  return result;
}

inline std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// r_L,r_M,cluster_id,accuracy,mac_count,accepted; one row per grid point and cluster.
inline std::string sweep_csv(const SweepResult& result) {
  std::string out = "r_L,r_M,cluster_id,accuracy,mac_count,accepted\n";
  for (std::size_t i = 0; i < result.points.size(); ++i) {
    const auto& p = result.points[i];
    for (std::size_t k = 0; k < p.clusters.size(); ++k)
      out += format_number(p.r_L) + "," + format_number(p.r_M) + "," + std::to_string(k) + "," +
             format_number(p.clusters[k].accuracy) + "," + std::to_string(p.clusters[k].macs) + "," +
             (result.annotation_accepted(i, k) ? "1" : "0") + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// single macro-cluster pruning

/// Treats the whole label set as one cluster: scores every conv layer named in
/// `retention` once over `data` and keeps the per-layer top fraction.
inline SubgraphAnnotation prune_global(const ModelGraph& model, const Dataset& data,
                                       const std::map<std::size_t, double>& retention,
                                       Criterion criterion = Criterion::dcs, const ScoringConfig& scoring = {}) {
  require(!retention.empty(), "prune_global: empty retention map");
  require(data.size() > 0, "prune_global: empty dataset");
  for (const auto& [layer, rate] : retention) {
    require(layer < model.size() && model.layers[layer].kind == LayerKind::conv2d,
            "prune_global: layer " + std::to_string(layer) + " is not a conv layer");
    require_rate(rate, "retention");
  }
  const std::size_t split = retention.begin()->first;
  for (auto c : model.conv_layers())
    require(c < split || retention.count(c), "prune_global: retention map misses conv layer " + std::to_string(c));
  ExtractionConfig config;
  config.split_layer = split;
  config.criterion = criterion;
  config.scoring = scoring;
  const auto scores = score_layers(model, data, SubgraphAnnotation::kAllClusters, config);
  auto a = annotation_from_scores(model, split, scores, retention, SubgraphAnnotation::kAllClusters);
  a.r_L = retention.rbegin()->second;
  a.r_M = retention.begin()->second;
  return a;
}

}  // namespace seminf
