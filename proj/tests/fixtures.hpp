#pragma once

// Random tiny models and annotations for property tests.

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "reference.hpp"
#include "seminf/data.hpp"
#include "seminf/model.hpp"

namespace seminf::testing {

/// conv/relu/(maxpool) blocks followed by flatten and one or two dense layers.
inline ModelGraph random_tiny_model(std::uint64_t seed, std::size_t num_classes = 0) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng() % (hi - lo + 1)); };
  ModelGraph m;
  std::size_t c = pick(1, 3);
  std::size_t h = pick(6, 10);
  m.input_shape = {c, h, h};
  const std::size_t blocks = pick(2, 3);
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t out = pick(2, 6);
    const std::size_t k = pick(1, 3);
    const std::size_t pad = k == 3 ? 1 : 0;
    m.layers.push_back(make_conv("conv" + std::to_string(b), c, out, k, 1, pad));
    m.layers.push_back(make_layer("relu" + std::to_string(b), LayerKind::relu));
    h = (h + 2 * pad - k) + 1;
    if (h >= 4 && rng() % 2) {
      m.layers.push_back(make_layer("pool" + std::to_string(b), LayerKind::maxpool2));
      h /= 2;
    }
    c = out;
  }
  if (rng() % 2) {
    m.layers.push_back(make_layer("gap", LayerKind::adaptive_avg_pool, std::min<std::size_t>(2, h)));
    h = std::min<std::size_t>(2, h);
  }
  m.layers.push_back(make_layer("flatten", LayerKind::flatten));
  std::size_t d = c * h * h;
  m.num_classes = pick(2, 5);
  if (num_classes) m.num_classes = num_classes;
  if (rng() % 2) {
    const std::size_t hidden = pick(3, 8);
    m.layers.push_back(make_dense("fc0", d, hidden));
    m.layers.push_back(make_layer("fc0_relu", LayerKind::relu));
    d = hidden;
  }
  m.layers.push_back(make_dense("fc_out", d, m.num_classes));
  init_he(m, seed ^ 0x9E3779B97F4A7C15ULL);
  // non-zero biases so dropped filters are distinguishable from zero output
  std::uniform_real_distribution<float> bias(-0.2F, 0.2F);
  for (auto& l : m.layers)
    if (l.has_params())
      for (float& v : l.bias.data()) v = bias(rng);
  return m;
}

/// Annotation retaining a random non-empty subset of each conv layer's filters
/// from `split` on; `fraction` near 1 keeps nearly everything.
inline SubgraphAnnotation random_annotation(const ModelGraph& m, std::size_t split, std::mt19937_64& rng,
                                            double fraction = 0.5) {
  SubgraphAnnotation a;
  a.split_layer = split;
  for (auto conv : m.conv_layers()) {
    if (conv < split) continue;
    const std::size_t n = m.layers[conv].weights.dim(0);
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    std::shuffle(all.begin(), all.end(), rng);
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(n) + 0.5));
    std::vector<std::size_t> kept(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(std::min(keep, n)));
    std::sort(kept.begin(), kept.end());
    a.retained[conv] = kept;
  }
  return a;
}

inline std::vector<std::size_t> split_candidates(const ModelGraph& m) { return m.conv_layers(); }

/// Uniform random images with labels cycling through the model's classes.
inline Dataset random_dataset(const ModelGraph& m, std::size_t n, std::mt19937_64& rng, std::string split = "train") {
  Shape s = m.input_shape;
  s.insert(s.begin(), n);
  Dataset d{random_tensor(s, rng), {}, std::move(split)};
  for (std::size_t i = 0; i < n; ++i) d.labels.push_back(i % m.num_classes);
  return d;
}

/// Consecutive classes grouped into clusters of `per_cluster`.
inline ClusterMap block_clusters(std::size_t num_classes, std::size_t per_cluster) {
  ClusterMap map;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (c % per_cluster == 0) map.clusters.push_back({map.size(), "cluster" + std::to_string(map.size()), {}});
    map.clusters.back().classes.push_back(c);
  }
  return map;
}

}  // namespace seminf::testing
