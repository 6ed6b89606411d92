#pragma once

// Filter-activation analyses, per-cluster evaluation, threshold and latency
// benchmarking, and feature export.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "seminf/data.hpp"
#include "seminf/errors.hpp"
#include "seminf/extract.hpp"
#include "seminf/model.hpp"
#include "seminf/router.hpp"
#include "seminf/serialize.hpp"
#include "seminf/train.hpp"

namespace seminf {

namespace detail {

inline void require_class_present(const Dataset& data, std::size_t c, const char* op) {
  require(std::find(data.labels.begin(), data.labels.end(), c) != data.labels.end(),
          std::string(op) + ": class " + std::to_string(c) + " has no samples");
}

}  // namespace detail

/// Per-sample, per-filter spatial mean of the rectified output of conv `layer`: [N, C_out].
inline Tensor filter_means(const ModelGraph& model, std::size_t layer, const Dataset& data) {
  require(layer < model.size() && model.layers[layer].kind == LayerKind::conv2d,
          "filter_means: layer " + std::to_string(layer) + " is not a conv layer");
  return collect_features(model, activation_layer(model, layer), data, 1).rows;
}

/// Class-averaged filter means, min-max scaled across filters. A constant
/// vector maps to 0.5 everywhere.
inline std::vector<double> activation_pattern(const ModelGraph& model, std::size_t layer, std::size_t class_id,
                                              const Dataset& data) {
  detail::require_class_present(data, class_id, "activation_pattern");
  const Tensor means = filter_means(model, layer, data.filter_classes({class_id}));
  const std::size_t n = means.dim(0), c = means.dim(1);
  std::vector<double> p(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < c; ++f) p[f] += means.at(i, f);
  for (auto& v : p) v /= static_cast<double>(n);
  const auto [lo, hi] = std::minmax_element(p.begin(), p.end());
  const double min = *lo, range = *hi - *lo;
  for (auto& v : p) v = range > 0.0 ? (v - min) / range : 0.5;
  return p;
}

/// Per-filter class tags: a filter fires on a sample when its spatial mean
/// exceeds min + quantile * (max - min) over the dataset; each filter is
/// tagged with the `top_k` classes it fires on most often.
struct FilterTags {
  std::size_t layer = 0;
  std::size_t num_classes = 0;
  std::vector<std::vector<double>> frequency;  // [filter][class], fraction of class samples firing
  std::vector<std::vector<std::size_t>> tags;  // [filter] -> sorted class ids

  bool tagged(std::size_t filter, std::size_t c) const {
    return std::binary_search(tags[filter].begin(), tags[filter].end(), c);
  }
};

inline std::size_t default_top_k(std::size_t num_classes) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(num_classes))));
}

inline FilterTags filter_tags(const ModelGraph& model, std::size_t layer, const Dataset& data,
                              double activation_quantile = 0.7, std::optional<std::size_t> top_k = std::nullopt) {
  const std::size_t classes = model.num_classes;
  const std::size_t k = top_k.value_or(default_top_k(classes));
  require(k >= 1 && k < classes, "filter_sharing: top_k must be in [1, num_classes)");
  require(activation_quantile >= 0.0 && activation_quantile < 1.0, "filter_sharing: quantile must be in [0,1)");
  data.validate(classes);
  const Tensor means = filter_means(model, layer, data);
  const std::size_t n = means.dim(0), filters = means.dim(1);

  std::vector<std::size_t> class_count(classes, 0);
  for (auto l : data.labels) ++class_count[l];

  FilterTags out;
  out.layer = layer;
  out.num_classes = classes;
  out.frequency.assign(filters, std::vector<double>(classes, 0.0));
  out.tags.resize(filters);
  for (std::size_t f = 0; f < filters; ++f) {
    float lo = means.at(0, f), hi = lo;
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, means.at(i, f));
      hi = std::max(hi, means.at(i, f));
    }
    const double threshold = lo + activation_quantile * (static_cast<double>(hi) - lo);
    auto& freq = out.frequency[f];
    if (hi > lo)
      for (std::size_t i = 0; i < n; ++i)
        if (means.at(i, f) > threshold) freq[data.labels[i]] += 1.0;
    for (std::size_t c = 0; c < classes; ++c)
      if (class_count[c]) freq[c] /= static_cast<double>(class_count[c]);

    std::vector<std::size_t> order(classes);
    for (std::size_t c = 0; c < classes; ++c) order[c] = c;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return freq[a] > freq[b]; });
    for (std::size_t r = 0; r < k; ++r)
      if (freq[order[r]] > 0.0) out.tags[f].push_back(order[r]);
    std::sort(out.tags[f].begin(), out.tags[f].end());
  }
  return out;
}

/// |filters tagged with both| / |filters tagged with either|; 1 for a == b,
/// 0 when no filter is tagged with either class.
inline double filter_sharing(const FilterTags& tags, std::size_t class_a, std::size_t class_b) {
  require(class_a < tags.num_classes && class_b < tags.num_classes, "filter_sharing: class out of range");
  if (class_a == class_b) return 1.0;
  std::size_t both = 0, either = 0;
  for (std::size_t f = 0; f < tags.tags.size(); ++f) {
    const bool a = tags.tagged(f, class_a), b = tags.tagged(f, class_b);
    both += a && b;
    either += a || b;
  }
  return either ? static_cast<double>(both) / static_cast<double>(either) : 0.0;
}

inline double filter_sharing(const ModelGraph& model, std::size_t layer, std::size_t class_a, std::size_t class_b,
                             const Dataset& data, double activation_quantile = 0.7,
                             std::optional<std::size_t> top_k = std::nullopt) {
  detail::require_class_present(data, class_a, "filter_sharing");
  detail::require_class_present(data, class_b, "filter_sharing");
  return filter_sharing(filter_tags(model, layer, data, activation_quantile, top_k), class_a, class_b);
}

struct SharingSummary {
  std::size_t layer = 0;
  double within = 0.0;  // mean over distinct class pairs in the same cluster
  double across = 0.0;  // mean over pairs in different clusters
  std::size_t within_pairs = 0;
  std::size_t across_pairs = 0;
};

inline SharingSummary sharing_summary(const FilterTags& tags, const ClusterMap& clusters) {
  const auto owner = clusters.class_to_cluster();
  SharingSummary s;
  s.layer = tags.layer;
  for (std::size_t a = 0; a < tags.num_classes; ++a)
    for (std::size_t b = a + 1; b < tags.num_classes; ++b) {
      const double v = filter_sharing(tags, a, b);
      if (owner[a] == owner[b]) {
        s.within += v;
        ++s.within_pairs;
      } else {
        s.across += v;
        ++s.across_pairs;
      }
    }
  if (s.within_pairs) s.within /= static_cast<double>(s.within_pairs);
  if (s.across_pairs) s.across /= static_cast<double>(s.across_pairs);
  return s;
}

// ---------------------------------------------------------------------------
// per-cluster evaluation

/// Argmax restricted to `classes` for each row of [N, K] logits.
inline std::vector<std::size_t> restricted_argmax(const Tensor& logits, const std::vector<std::size_t>& classes) {
  require(!classes.empty(), "restricted_argmax: empty class set");
  std::vector<std::size_t> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = classes.front();
    for (auto c : classes)
      if (logits.at(i, c) > logits.at(i, best)) best = c;
    out[i] = best;
  }
  return out;
}

struct ClusterEvalRow {
  std::size_t cluster = 0;
  bool present = false;  // an annotation exists for this cluster
  std::size_t samples = 0;
  double base_accuracy = 0.0;
  double subgraph_accuracy = 0.0;
  double base_restricted = 0.0;
  double subgraph_restricted = 0.0;
  double param_fraction = 1.0;

  double delta() const noexcept { return subgraph_accuracy - base_accuracy; }
  double delta_restricted() const noexcept { return subgraph_restricted - base_restricted; }
};

/// Base and subgraph accuracy on each cluster's samples, under all-class and
/// cluster-restricted argmax.
inline std::vector<ClusterEvalRow> per_cluster_eval(const ModelGraph& model,
                                                    const std::map<std::size_t, SubgraphAnnotation>& annotations,
                                                    const Dataset& data, const ClusterMap& clusters) {
  clusters.validate(model.num_classes);
  data.validate(model.num_classes);
  const double total_params = static_cast<double>(param_count(model));
  std::vector<ClusterEvalRow> rows;
  for (const auto& cluster : clusters.clusters) {
    ClusterEvalRow r;
    r.cluster = cluster.id;
    const Dataset d = data.filter_classes(cluster.classes);
    r.samples = d.size();
    const auto it = annotations.find(cluster.id);
    r.present = it != annotations.end();
    if (d.size() == 0) {
      rows.push_back(r);
      continue;
    }
    const Tensor base = batched_logits(model, d.images);
    r.base_accuracy = accuracy(argmax_rows(base), d.labels);
    r.base_restricted = accuracy(restricted_argmax(base, cluster.classes), d.labels);
    if (r.present) {
      std::vector<float> values;
      for (std::size_t b = 0; b < d.size(); b += detail::kEvalChunk) {
        const Tensor l = forward_masked(model, d.images.slice(b, std::min(d.size(), b + detail::kEvalChunk)), it->second);
        values.insert(values.end(), l.values().begin(), l.values().end());
      }
      const Tensor sub({d.size(), model.num_classes}, std::move(values));
      r.subgraph_accuracy = accuracy(argmax_rows(sub), d.labels);
      r.subgraph_restricted = accuracy(restricted_argmax(sub, cluster.classes), d.labels);
      r.param_fraction = static_cast<double>(param_count(model, &it->second)) / total_params;
    }
    rows.push_back(r);
  }
  return rows;
}

inline std::string cluster_eval_csv(const std::vector<ClusterEvalRow>& rows) {
  std::string out =
      "cluster,present,samples,base_accuracy,subgraph_accuracy,delta,base_restricted,subgraph_restricted,"
      "delta_restricted,param_fraction\n";
  for (const auto& r : rows) {
    out += std::to_string(r.cluster) + "," + (r.present ? "1" : "0") + "," + std::to_string(r.samples) + "," +
           format_number(r.base_accuracy) + "," + format_number(r.subgraph_accuracy) + "," + format_number(r.delta()) +
           "," + format_number(r.base_restricted) + "," + format_number(r.subgraph_restricted) + "," +
           format_number(r.delta_restricted()) + "," + format_number(r.param_fraction) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// timing and threshold sweeps

struct TimingConfig {
  std::size_t warmup = 3;
  std::size_t repetitions = 30;
  std::size_t max_samples = 0;  // inputs per timed batch; 0 = whole dataset

  void validate() const {
    require(warmup >= 3, "timing: at least 3 warm-up runs are required");
    require(repetitions >= 30, "timing: at least 30 repetitions are required");
  }
};

struct TimingStats {
  double median = 0.0;  // seconds
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t repetitions = 0;
};

/// Wall-clock statistics of `fn` after warm-up.
inline TimingStats time_runs(const std::function<void()>& fn, const TimingConfig& config = {}) {
  config.validate();
  for (std::size_t i = 0; i < config.warmup; ++i) fn();
  std::vector<double> t(config.repetitions);
  for (auto& v : t) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    v = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  std::sort(t.begin(), t.end());
  TimingStats s;
  s.repetitions = t.size();
  s.min = t.front();
  s.max = t.back();
  const std::size_t m = t.size() / 2;
  s.median = t.size() % 2 ? t[m] : 0.5 * (t[m - 1] + t[m]);
  for (double v : t) s.mean += v;
  s.mean /= static_cast<double>(t.size());
  return s;
}

struct BenchmarkRecord {
  std::string scenario;
  double alpha = 0.0;
  double accuracy = 0.0;
  double routed_fraction = 0.0;
  double mean_macs = 0.0;  // per input
  TimingStats latency;     // per input, seconds
  json config;
};

/// Empirical CDF of confidence values: sorted distinct values with F(v) = P(c <= v).
struct ConfidenceCdf {
  std::vector<double> values;
  std::vector<double> cdf;

  double at(double x) const {
    const auto it = std::upper_bound(values.begin(), values.end(), x);
    return it == values.begin() ? 0.0 : cdf[static_cast<std::size_t>(it - values.begin()) - 1];
  }
};

inline ConfidenceCdf confidence_cdf(std::vector<double> confidences) {
  require(!confidences.empty(), "confidence_cdf: no values");
  std::sort(confidences.begin(), confidences.end());
  ConfidenceCdf out;
  const double n = static_cast<double>(confidences.size());
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    if (i + 1 < confidences.size() && confidences[i + 1] == confidences[i]) continue;
    out.values.push_back(confidences[i]);
    out.cdf.push_back(static_cast<double>(i + 1) / n);
  }
  return out;
}

struct ThresholdSweep {
  std::vector<BenchmarkRecord> records;
  std::vector<std::vector<InferenceRecord>> traces;  // one per alpha, raw per-input records
  ConfidenceCdf cdf;
};

/// Accuracy, routed fraction, expected MACs and per-input latency at each alpha.
/// Latency times a batch pass (the first `timing.max_samples` inputs) and
/// divides by the batch size.
inline ThresholdSweep threshold_sweep(const Router& router, const std::vector<double>& alpha_grid,
                                      const Dataset& data, const TimingConfig& timing = {}) {
  require(!alpha_grid.empty(), "threshold_sweep: empty alpha grid");
  require(data.size() > 0, "threshold_sweep: empty dataset");
  timing.validate();
  data.validate(router.model().num_classes);
  ThresholdSweep out;
  const double n = static_cast<double>(data.size());
  const std::size_t timed = timing.max_samples ? std::min(timing.max_samples, data.size()) : data.size();
  const Tensor timed_images = data.images.slice(0, timed);
  for (double alpha : alpha_grid) {
    const Router r = router.with_alpha(alpha);
    auto trace = r.infer(data.images);
    BenchmarkRecord rec;
    rec.scenario = "alpha=" + format_number(alpha);
    rec.alpha = alpha;
    std::size_t hit = 0, routed = 0;
    double macs = 0.0;
    for (std::size_t i = 0; i < trace.size(); ++i) {
      hit += trace[i].prediction == data.labels[i];
      routed += trace[i].decision.routed;
      macs += static_cast<double>(trace[i].total_macs());
    }
    rec.accuracy = static_cast<double>(hit) / n;
    rec.routed_fraction = static_cast<double>(routed) / n;
    rec.mean_macs = macs / n;
    auto t = time_runs([&] { r.infer(timed_images); }, timing);
    for (double* v : {&t.median, &t.mean, &t.min, &t.max}) *v /= static_cast<double>(timed);
    rec.latency = t;
    rec.config = {{"alpha", alpha},
                  {"split_layer", r.split()},
                  {"samples", data.size()},
                  {"timed_samples", timed},
                  {"warmup", timing.warmup},
                  {"repetitions", timing.repetitions}};
    out.records.push_back(std::move(rec));
    out.traces.push_back(std::move(trace));
  }
  std::vector<double> conf;
  for (const auto& r : out.traces.front()) conf.push_back(r.decision.confidence);
  out.cdf = confidence_cdf(std::move(conf));
  return out;
}

inline std::string benchmark_csv(const std::vector<BenchmarkRecord>& records) {
  std::string out =
      "scenario,alpha,accuracy,routed_fraction,mean_macs,latency_median_s,latency_mean_s,latency_min_s,"
      "latency_max_s,repetitions\n";
  for (const auto& r : records)
    out += r.scenario + "," + format_number(r.alpha) + "," + format_number(r.accuracy) + "," +
           format_number(r.routed_fraction) + "," + format_number(r.mean_macs) + "," +
           format_number(r.latency.median) + "," + format_number(r.latency.mean) + "," +
           format_number(r.latency.min) + "," + format_number(r.latency.max) + "," +
           std::to_string(r.latency.repetitions) + "\n";
  return out;
}

inline std::string cdf_csv(const ConfidenceCdf& cdf) {
  std::string out = "confidence,cdf\n";
  for (std::size_t i = 0; i < cdf.values.size(); ++i)
    out += format_number(cdf.values[i]) + "," + format_number(cdf.cdf[i]) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// feature export

/// label,cluster,f0,...: pooled output of `layer` per sample.
inline std::string features_csv(const ModelGraph& model, std::size_t layer, const Dataset& data,
                                const ClusterMap& clusters, std::size_t k_prime = 2) {
  clusters.validate(model.num_classes);
  const auto owner = clusters.class_to_cluster();
  const auto f = collect_features(model, layer, data, k_prime);
  std::string out = "label,cluster";
  for (std::size_t j = 0; j < f.feature_dim(); ++j) out += ",f" + std::to_string(j);
  out += "\n";
  for (std::size_t i = 0; i < f.size(); ++i) {
    out += std::to_string(data.labels[i]) + "," + std::to_string(owner.at(data.labels[i]));
    for (std::size_t j = 0; j < f.feature_dim(); ++j) out += "," + format_number(f.rows.at(i, j));
    out += "\n";
  }
  return out;
}

inline void export_features(const ModelGraph& model, std::size_t layer, const Dataset& data,
                            const ClusterMap& clusters, const std::filesystem::path& path, std::size_t k_prime = 2) {
  detail::write_file(path, features_csv(model, layer, data, clusters, k_prime));
}

}  // namespace seminf
