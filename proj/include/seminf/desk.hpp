#pragma once

// Synthetic 32x32 RGB benchmark: 20 classes in 5 clusters. A cluster fixes
// the colour palette and background texture; a class fixes the foreground
// shape. Also builds the matching three-block CNN.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "seminf/data.hpp"
#include "seminf/errors.hpp"
#include "seminf/model.hpp"

namespace seminf {

struct DeskConfig {
  std::size_t train_per_class = 150;
  std::size_t val_per_class = 50;
  std::size_t test_per_class = 50;
  std::size_t image_size = 32;
  double noise = 0.3;
  double color_jitter = 0.12;
  std::uint64_t seed = 7;

  void validate() const {
    require(train_per_class > 0 && val_per_class > 0 && test_per_class > 0, "desk: split sizes must be positive");
    require(image_size >= 16, "desk: image size must be at least 16");
    require(noise >= 0.0 && color_jitter >= 0.0, "desk: noise and jitter must be >= 0");
  }
};

struct DeskData {
  Dataset train;
  Dataset val;
  Dataset test;
  ClusterMap clusters;
};

inline constexpr std::size_t kDeskClusters = 5;
inline constexpr std::size_t kDeskShapes = 4;
inline constexpr std::size_t kDeskClasses = kDeskClusters * kDeskShapes;

namespace detail {

struct DeskPalette {
  std::array<float, 3> background;
  std::array<float, 3> foreground;
  double stripe_angle;  // radians
  double stripe_period;  // pixels
  const char* name;
};

inline const std::array<DeskPalette, kDeskClusters>& desk_palettes() {
  static const std::array<DeskPalette, kDeskClusters> p{{
      {{0.85F, 0.75F, 0.55F}, {0.75F, 0.20F, 0.10F}, 0.0, 4.0, "desert"},
      {{0.25F, 0.45F, 0.80F}, {0.95F, 0.95F, 0.90F}, std::numbers::pi / 2, 6.0, "ocean"},
      {{0.20F, 0.55F, 0.25F}, {0.90F, 0.80F, 0.20F}, std::numbers::pi / 4, 5.0, "forest"},
      {{0.35F, 0.35F, 0.40F}, {0.30F, 0.90F, 0.95F}, 3 * std::numbers::pi / 4, 3.0, "city"},
      {{0.55F, 0.25F, 0.60F}, {0.15F, 0.15F, 0.15F}, std::numbers::pi / 3, 8.0, "dusk"},
  }};
  return p;
}

/// Foreground membership for shape s at offset (dx, dy) from the centre, radius r.
inline bool desk_shape(std::size_t s, double dx, double dy, double r) {
  switch (s) {
    case 0: return dx * dx + dy * dy <= r * r;                                       // disk
    case 1: return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;               // square
    case 2: return dy >= -r && dy <= 0.7 * r && std::abs(dx) <= 0.6 * (dy + r);      // triangle
    default:
      return (std::abs(dx) <= 0.3 * r && std::abs(dy) <= r) || (std::abs(dy) <= 0.3 * r && std::abs(dx) <= r);  // cross
  }
}

inline void render_desk_image(std::size_t label, const DeskConfig& cfg, std::mt19937_64& rng, float* out) {
  const auto& pal = desk_palettes()[label / kDeskShapes];
  const std::size_t shape = label % kDeskShapes;
  const std::size_t n = cfg.image_size;
  const double size = static_cast<double>(n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  std::uniform_real_distribution<double> jitter(-cfg.color_jitter, cfg.color_jitter);

  const double cx = size * (0.35 + 0.3 * unit(rng)), cy = size * (0.35 + 0.3 * unit(rng));
  const double r = size * (0.14 + 0.1 * unit(rng));
  const double phase = 2 * std::numbers::pi * unit(rng);
  const double angle = pal.stripe_angle + 0.2 * (unit(rng) - 0.5);
  std::array<double, 3> bg{}, fg{};
  for (std::size_t c = 0; c < 3; ++c) {
    bg[c] = pal.background[c] + jitter(rng);
    fg[c] = pal.foreground[c] + jitter(rng);
  }
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      const bool inside = desk_shape(shape, dx, dy, r);
      const double stripe =
          0.2 * std::sin(2 * std::numbers::pi * (static_cast<double>(x) * ca + static_cast<double>(y) * sa) /
                             pal.stripe_period +
                         phase);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = (inside ? fg[c] : bg[c] + stripe) + noise(rng);
        out[(c * n + y) * n + x] = static_cast<float>(v - 0.5);
      }
    }
}

inline Dataset make_desk_split(std::size_t per_class, const DeskConfig& cfg, std::uint64_t stream, std::string name) {
  const std::size_t n = per_class * kDeskClasses, pixels = 3 * cfg.image_size * cfg.image_size;
  Dataset d{Tensor({n, 3, cfg.image_size, cfg.image_size}), {}, std::move(name)};
  std::seed_seq seq{cfg.seed, stream};
  std::mt19937_64 rng(seq);
  d.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % kDeskClasses;
    d.labels.push_back(label);
    render_desk_image(label, cfg, rng, d.images.raw() + i * pixels);
  }
  return d;
}

}  // namespace detail

inline ClusterMap desk_cluster_map() {
  ClusterMap map;
  for (std::size_t k = 0; k < kDeskClusters; ++k) {
    SemanticCluster c{k, detail::desk_palettes()[k].name, {}};
    for (std::size_t s = 0; s < kDeskShapes; ++s) c.classes.push_back(k * kDeskShapes + s);
    map.clusters.push_back(std::move(c));
  }
  return map;
}

/// Deterministic in `config.seed`; each split draws from its own stream.
inline DeskData make_desk_data(const DeskConfig& config = {}) {
  config.validate();
  return {detail::make_desk_split(config.train_per_class, config, 1, "train"),
          detail::make_desk_split(config.val_per_class, config, 2, "val"),
          detail::make_desk_split(config.test_per_class, config, 3, "test"), desk_cluster_map()};
}

/// Three conv(3x3, pad 1)/relu/maxpool blocks (8, 16, 32 filters), then
/// dense(64)/relu and dense(classes).
inline ModelGraph make_desk_model(std::uint64_t seed, std::size_t image_size = 32,
                                  std::size_t num_classes = kDeskClasses) {
  require(image_size % 8 == 0, "desk model: image size must be a multiple of 8");
  ModelGraph m;
  m.input_shape = {3, image_size, image_size};
  m.num_classes = num_classes;
  std::size_t in = 3;
  for (std::size_t b = 0; b < 3; ++b) {
    const std::size_t out = 8U << b;
    const auto id = std::to_string(b);
    m.layers.push_back(make_conv("conv" + id, in, out, 3, 1, 1));
    m.layers.push_back(make_layer("relu" + id, LayerKind::relu));
    m.layers.push_back(make_layer("pool" + id, LayerKind::maxpool2));
    in = out;
  }
  const std::size_t side = image_size / 8;
  m.layers.push_back(make_layer("flatten", LayerKind::flatten));
  m.layers.push_back(make_dense("fc0", in * side * side, 64));
  m.layers.push_back(make_layer("fc0_relu", LayerKind::relu));
  m.layers.push_back(make_dense("fc1", 64, num_classes));
  init_he(m, seed);
  validate_model(m);
  return m;
}

}  // namespace seminf
