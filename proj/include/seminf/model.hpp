#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "seminf/errors.hpp"
#include "seminf/ops.hpp"
#include "seminf/tensor.hpp"

namespace seminf {

enum class LayerKind { conv2d, relu, maxpool2, dense, flatten, adaptive_avg_pool, softmax };

inline const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2: return "maxpool2";
    case LayerKind::dense: return "dense";
    case LayerKind::flatten: return "flatten";
    case LayerKind::adaptive_avg_pool: return "adaptive_avg_pool";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

inline LayerKind kind_from_name(const std::string& name) {
  for (auto k : {LayerKind::conv2d, LayerKind::relu, LayerKind::maxpool2, LayerKind::dense,
                 LayerKind::flatten, LayerKind::adaptive_avg_pool, LayerKind::softmax})
    if (name == kind_name(k)) return k;
  throw ValidationError("unknown layer kind '" + name + "'");
}

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t out_size = 0;  // adaptive_avg_pool only
  Tensor weights;            // conv2d: [C_out,C_in,kh,kw]; dense: [O,D]
  Tensor bias;

  bool has_params() const noexcept {
    return kind == LayerKind::conv2d || kind == LayerKind::dense;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Sequential network. Layer indices 0..L-1 are the canonical addressing.
struct ModelGraph {
  std::vector<LayerSpec> layers;
  Shape input_shape;  // [C,H,W]
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;

  std::size_t size() const noexcept { return layers.size(); }

  std::vector<std::size_t> conv_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].kind == LayerKind::conv2d) out.push_back(i);
    return out;
  }

  friend bool operator==(const ModelGraph&, const ModelGraph&) = default;
};

// ---------------------------------------------------------------------------
// layer constructors

inline LayerSpec make_conv(std::string name, std::size_t in_c, std::size_t out_c, std::size_t k,
                           std::size_t stride = 1, std::size_t padding = 0) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::conv2d;
  l.stride = stride;
  l.padding = padding;
  l.weights = Tensor({out_c, in_c, k, k});
  l.bias = Tensor({out_c});
  return l;
}

inline LayerSpec make_dense(std::string name, std::size_t in_dim, std::size_t out_dim) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::dense;
  l.weights = Tensor({out_dim, in_dim});
  l.bias = Tensor({out_dim});
  return l;
}

inline LayerSpec make_layer(std::string name, LayerKind kind, std::size_t out_size = 0) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = kind;
  l.out_size = out_size;
  return l;
}

/// He-normal weights, zero biases.
inline void init_he(ModelGraph& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& layer : model.layers) {
    if (!layer.has_params()) continue;
    const std::size_t fan_in = layer.weights.size() / layer.weights.dim(0);
    std::normal_distribution<float> dist(0.0F, std::sqrt(2.0F / static_cast<float>(fan_in)));
    for (float& w : layer.weights.data()) w = dist(rng);
    std::fill(layer.bias.data().begin(), layer.bias.data().end(), 0.0F);
  }
}

// ---------------------------------------------------------------------------
// shape inference

inline Shape layer_output_shape(const LayerSpec& layer, const Shape& in) {
  auto need3 = [&](const char* what) {
    require(in.size() == 3, layer.name + " (" + what + "): expected [C,H,W] input, got " +
                                shape_str(in));
  };
  switch (layer.kind) {
    case LayerKind::conv2d: {
      need3("conv2d");
      const auto& w = layer.weights.shape();
      require(w.size() == 4 && w[1] == in[0],
              layer.name + ": weights " + shape_str(w) + " incompatible with input " + shape_str(in));
      require(layer.bias.shape() == Shape{w[0]}, layer.name + ": bias shape mismatch");
      require(layer.stride >= 1, layer.name + ": stride must be >= 1");
      require(in[1] + 2 * layer.padding >= w[2] && in[2] + 2 * layer.padding >= w[3],
              layer.name + ": kernel does not fit input " + shape_str(in));
      return {w[0], (in[1] + 2 * layer.padding - w[2]) / layer.stride + 1,
              (in[2] + 2 * layer.padding - w[3]) / layer.stride + 1};
    }
    case LayerKind::maxpool2:
      need3("maxpool2");
      require(in[1] >= 2 && in[2] >= 2, layer.name + ": input too small for maxpool2");
      return {in[0], in[1] / 2, in[2] / 2};
    case LayerKind::adaptive_avg_pool:
      need3("adaptive_avg_pool");
      require(layer.out_size >= 1 && layer.out_size <= std::min(in[1], in[2]),
              layer.name + ": invalid adaptive pool size");
      return {in[0], layer.out_size, layer.out_size};
    case LayerKind::flatten:
      return {shape_size(in)};
    case LayerKind::dense: {
      const auto& w = layer.weights.shape();
      require(in.size() == 1 && w.size() == 2 && w[1] == in[0],
              layer.name + ": weights " + shape_str(w) + " incompatible with input " + shape_str(in));
      require(layer.bias.shape() == Shape{w[0]}, layer.name + ": bias shape mismatch");
      return {w[0]};
    }
    case LayerKind::relu:
    case LayerKind::softmax:
      return in;
  }
  return in;
}

/// Per-layer output shapes (index i = output of layer i) for a single sample.
inline std::vector<Shape> infer_shapes(const ModelGraph& model) {
  std::vector<Shape> shapes;
  Shape cur = model.input_shape;
  for (const auto& layer : model.layers) {
    cur = layer_output_shape(layer, cur);
    shapes.push_back(cur);
  }
  return shapes;
}

inline void validate_model(const ModelGraph& model) {
  require(model.input_shape.size() == 3, "model input shape must be [C,H,W]");
  require(!model.layers.empty(), "model has no layers");
  const auto shapes = infer_shapes(model);
  require(shapes.back() == Shape{model.num_classes},
          "last layer outputs " + shape_str(shapes.back()) + " but num_classes is " +
              std::to_string(model.num_classes));
  for (const auto& layer : model.layers)
    if (layer.has_params())
      require(layer.weights.all_finite() && layer.bias.all_finite(),
              layer.name + ": non-finite parameters");
  require(model.class_names.empty() || model.class_names.size() == model.num_classes,
          "class_names length does not match num_classes");
}

/// Index whose output is the post-activation map of a conv layer: the ReLU
/// directly following it when present, otherwise the conv itself.
inline std::size_t activation_layer(const ModelGraph& model, std::size_t conv_index) {
  require(conv_index < model.size() && model.layers[conv_index].kind == LayerKind::conv2d,
          "layer " + std::to_string(conv_index) + " is not a conv layer");
  if (conv_index + 1 < model.size() && model.layers[conv_index + 1].kind == LayerKind::relu)
    return conv_index + 1;
  return conv_index;
}

// ---------------------------------------------------------------------------
// execution

/// Counts how often each layer is evaluated; used to verify single execution
/// of the shared feature extractor.
struct ExecStats {
  std::vector<std::size_t> layer_runs;

  void record(std::size_t layer, std::size_t samples) {
    if (layer_runs.size() <= layer) layer_runs.resize(layer + 1, 0);
    layer_runs[layer] += samples;
  }
};

/// Number of samples in `x` when it is the input of layer `layer`.
inline std::size_t samples_at(const ModelGraph& model, const Tensor& x, std::size_t layer) {
  const std::size_t sample_rank =
      layer == 0 ? model.input_shape.size() : infer_shapes(model)[layer - 1].size();
  return x.rank() > sample_rank ? x.dim(0) : 1;
}

inline Tensor apply_layer(const LayerSpec& layer, const Tensor& x) {
  switch (layer.kind) {
    case LayerKind::conv2d: return conv2d(x, layer.weights, layer.bias, layer.stride, layer.padding);
    case LayerKind::relu: return relu(x);
    case LayerKind::maxpool2: return maxpool2(x);
    case LayerKind::adaptive_avg_pool: return adaptive_avg_pool(x, layer.out_size);
    case LayerKind::dense: return dense(x, layer.weights, layer.bias);
    case LayerKind::softmax: return softmax(x);
    case LayerKind::flatten: {
      // [C,H,W] -> [D]; [N,C,H,W] -> [N,D]
      if (x.rank() == 4) return x.reshaped({x.dim(0), x.size() / x.dim(0)});
      require(x.rank() == 3, "flatten: expected [C,H,W] or [N,C,H,W], got " + shape_str(x.shape()));
      return x.reshaped({x.size()});
    }
  }
  return x;
}

/// Runs layers [begin, end) on `x`. Taps receive the output of the requested layers.
inline Tensor forward_range(const ModelGraph& model, Tensor x, std::size_t begin, std::size_t end,
                            std::map<std::size_t, Tensor>* taps = nullptr,
                            const std::set<std::size_t>* tap_layers = nullptr,
                            ExecStats* stats = nullptr) {
  require(begin <= end && end <= model.size(), "forward_range: invalid layer range");
  for (std::size_t i = begin; i < end; ++i) {
    if (stats) stats->record(i, samples_at(model, x, i));
    x = apply_layer(model.layers[i], x);
    if (taps && tap_layers && tap_layers->count(i)) (*taps)[i] = x;
  }
  return x;
}

struct ForwardResult {
  Tensor logits;
  std::map<std::size_t, Tensor> taps;
};

inline void check_batch(const ModelGraph& model, const Tensor& batch) {
  const auto& in = model.input_shape;
  const bool single = batch.rank() == 3 && batch.shape() == in;
  const bool batched = batch.rank() == 4 && Shape(batch.shape().begin() + 1, batch.shape().end()) == in;
  require(single || batched, "input " + shape_str(batch.shape()) + " does not match model input " +
                                 shape_str(in));
}

inline ForwardResult forward_full(const ModelGraph& model, const Tensor& batch,
                                  const std::set<std::size_t>& tap_layers = {}) {
  check_batch(model, batch);
  for (auto t : tap_layers)
    require(t < model.size(), "tap layer " + std::to_string(t) + " out of range (model has " +
                                  std::to_string(model.size()) + " layers)");
  ForwardResult result;
  result.logits = forward_range(model, batch, 0, model.size(), &result.taps, &tap_layers);
  return result;
}

/// Activations saved during a forward pass: inputs[i] is the input of layer i,
/// inputs[L] the final output.
struct ForwardTrace {
  std::vector<Tensor> inputs;
  const Tensor& output() const { return inputs.back(); }
};

inline ForwardTrace forward_trace(const ModelGraph& model, const Tensor& batch) {
  ForwardTrace trace;
  trace.inputs.reserve(model.size() + 1);
  trace.inputs.push_back(batch);
  for (const auto& layer : model.layers) trace.inputs.push_back(apply_layer(layer, trace.inputs.back()));
  return trace;
}

struct LayerGrads {
  Tensor weights;
  Tensor bias;
};

struct BackwardResult {
  std::vector<std::optional<LayerGrads>> params;  // one slot per layer
  std::map<std::size_t, Tensor> output_grads;     // gradient w.r.t. output of tapped layers
  Tensor input_grad;
};

/// Back-propagates `upstream` (gradient w.r.t. the final output) through the
/// layers [begin, L). `trace` must come from forward_trace on the same model.
inline BackwardResult backward(const ModelGraph& model, const ForwardTrace& trace, Tensor upstream,
                               const std::set<std::size_t>& grad_taps = {},
                               std::size_t begin = 0) {
  require(trace.inputs.size() == model.size() + 1, "backward: trace does not match model");
  require(upstream.shape() == trace.output().shape(), "backward: upstream " +
                                                          shape_str(upstream.shape()) +
                                                          " vs output " +
                                                          shape_str(trace.output().shape()));
  BackwardResult result;
  result.params.resize(model.size());
  for (std::size_t i = model.size(); i-- > begin;) {
    if (grad_taps.count(i)) result.output_grads[i] = upstream;
    const auto& layer = model.layers[i];
    const Tensor& in = trace.inputs[i];
    switch (layer.kind) {
      case LayerKind::conv2d: {
        auto g = conv2d_backward(upstream, in, layer.weights, layer.stride, layer.padding);
        result.params[i] = LayerGrads{std::move(g.weight_grad), std::move(g.bias_grad)};
        upstream = std::move(g.input_grad);
        break;
      }
      case LayerKind::dense: {
        auto g = dense_backward(upstream, in, layer.weights);
        result.params[i] = LayerGrads{std::move(g.weight_grad), std::move(g.bias_grad)};
        upstream = std::move(g.input_grad);
        break;
      }
      case LayerKind::relu: upstream = relu_backward(upstream, in); break;
      case LayerKind::maxpool2: upstream = maxpool2_backward(upstream, in); break;
      case LayerKind::adaptive_avg_pool:
        upstream = adaptive_avg_pool_backward(upstream, in, layer.out_size);
        break;
      case LayerKind::softmax: upstream = softmax_backward(upstream, trace.inputs[i + 1]); break;
      case LayerKind::flatten: upstream = std::move(upstream).reshaped(in.shape()); break;
    }
  }
  result.input_grad = std::move(upstream);
  return result;
}

// ---------------------------------------------------------------------------
// subgraph annotations and masked execution

/// Per-cluster set of retained conv filters from the split layer onward.
/// Annotations reference the base model's weights; they never copy them.
struct SubgraphAnnotation {
  static constexpr std::int64_t kAllClusters = -1;

  std::int64_t cluster_id = 0;
  std::size_t split_layer = 0;  // first layer after the common feature extractor
  std::map<std::size_t, std::vector<std::size_t>> retained;  // conv layer -> filter ids
  double r_L = 1.0;
  double r_M = 1.0;
  double recorded_accuracy = 0.0;

  friend bool operator==(const SubgraphAnnotation&, const SubgraphAnnotation&) = default;
};

inline void validate_annotation(const ModelGraph& model, const SubgraphAnnotation& a) {
  require(a.split_layer < model.size(), "annotation split layer " + std::to_string(a.split_layer) +
                                            " outside model with " + std::to_string(model.size()) +
                                            " layers");
  require(a.r_L > 0.0 && a.r_L <= 1.0 && a.r_M > 0.0 && a.r_M <= 1.0,
          "annotation retention fractions must lie in (0,1]");
  for (const auto& [layer, filters] : a.retained) {
    require(layer < model.size(), "annotation references unknown layer " + std::to_string(layer));
    require(model.layers[layer].kind == LayerKind::conv2d,
            "annotation references non-conv layer " + std::to_string(layer));
    require(layer >= a.split_layer, "annotation references layer " + std::to_string(layer) +
                                        " before split layer " + std::to_string(a.split_layer));
    require(!filters.empty(), "annotation retains no filters in layer " + std::to_string(layer));
    const std::size_t c_out = model.layers[layer].weights.dim(0);
    for (std::size_t i = 0; i < filters.size(); ++i) {
      require(filters[i] < c_out, "annotation filter index " + std::to_string(filters[i]) +
                                      " out of range for layer " + std::to_string(layer) +
                                      " with " + std::to_string(c_out) + " filters");
      require(i == 0 || filters[i] > filters[i - 1],
              "annotation filter indices for layer " + std::to_string(layer) +
                  " must be strictly increasing");
    }
  }
  for (auto conv : model.conv_layers())
    if (conv >= a.split_layer)
      require(a.retained.count(conv), "annotation is missing conv layer " + std::to_string(conv));
}

/// Annotation retaining every filter from `split_layer` on.
inline SubgraphAnnotation full_annotation(const ModelGraph& model, std::size_t split_layer,
                                          std::int64_t cluster_id = 0) {
  SubgraphAnnotation a;
  a.cluster_id = cluster_id;
  a.split_layer = split_layer;
  for (auto conv : model.conv_layers()) {
    if (conv < split_layer) continue;
    std::vector<std::size_t> all(model.layers[conv].weights.dim(0));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    a.retained[conv] = std::move(all);
  }
  return a;
}

namespace detail {

inline Tensor gather_conv_weights(const Tensor& w, const std::vector<std::size_t>& out_idx,
                                  const std::optional<std::vector<std::size_t>>& in_idx) {
  const std::size_t ci_full = w.dim(1);
  const std::size_t kk = w.dim(2) * w.dim(3);
  const std::size_t ci = in_idx ? in_idx->size() : ci_full;
  Tensor out({out_idx.size(), ci, w.dim(2), w.dim(3)});
  float* dst = out.raw();
  for (auto o : out_idx) {
    for (std::size_t j = 0; j < ci; ++j) {
      const std::size_t src_c = in_idx ? (*in_idx)[j] : j;
      const float* src = w.raw() + (o * ci_full + src_c) * kk;
      dst = std::copy(src, src + kk, dst);
    }
  }
  return out;
}

inline Tensor gather_vector(const Tensor& v, const std::vector<std::size_t>& idx) {
  Tensor out({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
  return out;
}

inline Tensor gather_columns(const Tensor& w, const std::vector<std::size_t>& cols) {
  const std::size_t rows = w.dim(0);
  const std::size_t width = w.dim(1);
  Tensor out({rows, cols.size()});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols.size(); ++j) out.at(r, j) = w.raw()[r * width + cols[j]];
  return out;
}

}  // namespace detail

/// Executes the subgraph described by `annotation`. Dropped filters are never
/// computed: retained kernels are gathered into compact buffers and the
/// activation carries only retained channels. The first dense layer after a
/// flatten reads only the surviving features. `features_from_split` is the
/// output of layer split-1 (or the raw input when split is 0).
inline Tensor forward_masked(const ModelGraph& model, const Tensor& batch,
                             const SubgraphAnnotation& annotation,
                             const std::optional<Tensor>& features_from_split = std::nullopt,
                             ExecStats* stats = nullptr) {
  validate_annotation(model, annotation);
  const std::size_t split = annotation.split_layer;
  Tensor x;
  if (features_from_split) {
    x = *features_from_split;
  } else {
    check_batch(model, batch);
    x = forward_range(model, batch, 0, split, nullptr, nullptr, stats);
  }

  std::optional<std::vector<std::size_t>> channels;  // retained channels of x; nullopt = all
  std::optional<std::vector<std::size_t>> features;  // retained flat features after flatten
  for (std::size_t i = split; i < model.size(); ++i) {
    const auto& layer = model.layers[i];
    if (stats) stats->record(i, samples_at(model, x, i));
    switch (layer.kind) {
      case LayerKind::conv2d: {
        const auto& keep = annotation.retained.at(i);
        if (channels)
          require(x.shape()[x.rank() - 3] == channels->size(), "masked execution channel mismatch");
        const Tensor w = detail::gather_conv_weights(layer.weights, keep, channels);
        const Tensor b = detail::gather_vector(layer.bias, keep);
        x = conv2d(x, w, b, layer.stride, layer.padding);
        channels = keep;
        break;
      }
      case LayerKind::flatten: {
        if (channels) {
          const std::size_t spatial = x.shape()[x.rank() - 1] * x.shape()[x.rank() - 2];
          std::vector<std::size_t> f;
          f.reserve(channels->size() * spatial);
          for (auto c : *channels)
            for (std::size_t s = 0; s < spatial; ++s) f.push_back(c * spatial + s);
          features = std::move(f);
          channels.reset();
        }
        x = apply_layer(layer, x);
        break;
      }
      case LayerKind::dense: {
        require(!channels, "masked execution: dense layer fed by unflattened pruned channels");
        if (features) {
          x = dense(x, detail::gather_columns(layer.weights, *features), layer.bias);
          features.reset();
        } else {
          x = apply_layer(layer, x);
        }
        break;
      }
      default:
        x = apply_layer(layer, x);
        break;
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// analytic cost

struct CostBreakdown {
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
};

/// MAC and parameter counts of layers [begin, end), restricted by `annotation`
/// when given. Counts are exact integers.
inline CostBreakdown cost_range(const ModelGraph& model, const SubgraphAnnotation* annotation,
                                std::size_t begin, std::size_t end) {
  if (annotation) validate_annotation(model, *annotation);
  Shape cur = model.input_shape;
  std::size_t live_channels = cur[0];
  std::size_t live_features = 0;  // after flatten
  bool flattened = false;
  CostBreakdown cost;
  for (std::size_t i = 0; i < end; ++i) {
    const auto& layer = model.layers[i];
    const Shape out = layer_output_shape(layer, cur);
    const bool counted = i >= begin;
    switch (layer.kind) {
      case LayerKind::conv2d: {
        const auto& w = layer.weights.shape();
        std::size_t out_c = w[0];
        if (annotation && annotation->retained.count(i)) out_c = annotation->retained.at(i).size();
        if (counted) {
          cost.macs += static_cast<std::uint64_t>(out_c) * live_channels * w[2] * w[3] * out[1] * out[2];
          cost.params += static_cast<std::uint64_t>(out_c) * (live_channels * w[2] * w[3] + 1);
        }
        live_channels = out_c;
        break;
      }
      case LayerKind::flatten:
        flattened = true;
        live_features = live_channels * cur[1] * cur[2];
        break;
      case LayerKind::dense: {
        const std::size_t in_dim = flattened ? live_features : layer.weights.dim(1);
        if (counted) {
          cost.macs += static_cast<std::uint64_t>(layer.weights.dim(0)) * in_dim;
          cost.params += static_cast<std::uint64_t>(layer.weights.dim(0)) * (in_dim + 1);
        }
        flattened = false;
        live_features = 0;
        break;
      }
      default:
        break;
    }
    cur = out;
  }
  return cost;
}

inline std::uint64_t mac_count(const ModelGraph& model,
                               const SubgraphAnnotation* annotation = nullptr) {
  return cost_range(model, annotation, 0, model.size()).macs;
}

inline std::uint64_t param_count(const ModelGraph& model,
                                 const SubgraphAnnotation* annotation = nullptr) {
  return cost_range(model, annotation, 0, model.size()).params;
}

}  // namespace seminf
