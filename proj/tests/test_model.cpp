#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "reference.hpp"
#include "seminf/model.hpp"

using namespace seminf;
using seminf::testing::random_annotation;
using seminf::testing::random_tensor;
using seminf::testing::random_tiny_model;
using seminf::testing::reference_forward;

namespace {

ModelGraph identity_model(std::size_t c, std::size_t h) {
  ModelGraph m;
  m.input_shape = {c, h, h};
  auto conv = make_conv("id_conv", c, c, 1);
  for (std::size_t i = 0; i < c; ++i) conv.weights[(i * c + i)] = 1.0F;
  m.layers.push_back(conv);
  m.layers.push_back(make_layer("flatten", LayerKind::flatten));
  const std::size_t d = c * h * h;
  auto fc = make_dense("id_dense", d, d);
  for (std::size_t i = 0; i < d; ++i) fc.weights.at(i, i) = 1.0F;
  m.layers.push_back(fc);
  m.num_classes = d;
  return m;
}

Tensor random_batch(const ModelGraph& m, std::size_t n, std::mt19937_64& rng) {
  Shape s = m.input_shape;
  s.insert(s.begin(), n);
  return random_tensor(s, rng);
}

}  // namespace

TEST(ForwardFull, IdentityModelReturnsFlattenedInput) {
  const auto m = identity_model(2, 3);
  validate_model(m);
  std::mt19937_64 rng(1);
  const Tensor x = random_batch(m, 4, rng);
  const auto out = forward_full(m, x);
  EXPECT_EQ(out.logits.shape(), (Shape{4, 18}));
  EXPECT_EQ(out.logits.values(), x.values());
}

TEST(ForwardFull, EmptyTapsLeaveLogitsUnchanged) {
  const auto m = random_tiny_model(2);
  std::mt19937_64 rng(2);
  const Tensor x = random_batch(m, 3, rng);
  const auto plain = forward_full(m, x);
  EXPECT_TRUE(plain.taps.empty());
  const auto tapped = forward_full(m, x, {0, 1});
  EXPECT_EQ(plain.logits, tapped.logits);
  EXPECT_EQ(tapped.taps.size(), 2U);
  EXPECT_EQ(tapped.taps.at(1), relu(tapped.taps.at(0)));
}

TEST(ForwardFull, MatchesReferenceComposition) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = random_tiny_model(100 + seed);
    std::mt19937_64 rng(seed);
    const Tensor x = random_batch(m, 2, rng);
    const auto out = forward_full(m, x);
    for (std::size_t n = 0; n < 2; ++n) {
      const Tensor ref = reference_forward(m, x.sample(n));
      for (std::size_t i = 0; i < ref.size(); ++i)
        EXPECT_NEAR(out.logits[n * ref.size() + i], ref[i], 1e-5) << "seed " << seed;
    }
  }
}

TEST(ForwardFull, RejectsBadTapsAndShapes) {
  const auto m = random_tiny_model(3);
  std::mt19937_64 rng(3);
  const Tensor x = random_batch(m, 1, rng);
  EXPECT_THROW(forward_full(m, x, {m.size()}), ValidationError);
  EXPECT_THROW(forward_full(m, Tensor({1, 99, 2, 2})), ValidationError);
}

TEST(ForwardMasked, FullRetentionReproducesBaseLogits) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = random_tiny_model(200 + seed);
    std::mt19937_64 rng(seed);
    const Tensor x = random_batch(m, 3, rng);
    const auto base = forward_full(m, x).logits;
    for (auto split : m.conv_layers()) {
      const Tensor masked = forward_masked(m, x, full_annotation(m, split));
      for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(masked[i], base[i], 1e-6);
    }
  }
}

TEST(ForwardMasked, MatchesZeroFilterOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto m = random_tiny_model(300 + seed);
    std::mt19937_64 rng(seed);
    const auto convs = m.conv_layers();
    const std::size_t split = convs[rng() % convs.size()];
    const auto ann = random_annotation(m, split, rng, 0.5);
    const Tensor x = random_batch(m, 2, rng);
    const Tensor masked = forward_masked(m, x, ann);
    for (std::size_t n = 0; n < 2; ++n) {
      const Tensor ref = reference_forward(m, x.sample(n), &ann);
      for (std::size_t i = 0; i < ref.size(); ++i)
        ASSERT_NEAR(masked[n * ref.size() + i], ref[i], 1e-5) << "seed " << seed;
    }
  }
}

TEST(ForwardMasked, SingleFilterPerLayer) {
  const auto m = random_tiny_model(17);
  std::mt19937_64 rng(17);
  const auto ann = random_annotation(m, m.conv_layers().front(), rng, 0.0);
  for (const auto& [layer, kept] : ann.retained) EXPECT_EQ(kept.size(), 1U);
  const Tensor x = random_batch(m, 1, rng);
  const Tensor masked = forward_masked(m, x, ann);
  const Tensor ref = reference_forward(m, x.sample(0), &ann);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(masked[i], ref[i], 1e-5);
}

TEST(ForwardMasked, PrecomputedFeaturesGiveSameLogits) {
  const auto m = random_tiny_model(23);
  std::mt19937_64 rng(23);
  const std::size_t split = m.conv_layers().back();
  const auto ann = random_annotation(m, split, rng, 0.5);
  const Tensor x = random_batch(m, 3, rng);
  const Tensor cfe = forward_range(m, x, 0, split);
  EXPECT_EQ(forward_masked(m, x, ann), forward_masked(m, x, ann, cfe));
}

TEST(ForwardMasked, RestrictingAnAnnotationEqualsApplyingItDirectly) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = random_tiny_model(400 + seed);
    std::mt19937_64 rng(seed);
    const std::size_t split = m.conv_layers().front();
    const auto wide = random_annotation(m, split, rng, 0.8);
    SubgraphAnnotation narrow = wide;
    for (auto& [layer, kept] : narrow.retained)
      if (kept.size() > 1) kept.resize(kept.size() / 2 + 1);
    const Tensor x = random_batch(m, 2, rng);
    const Tensor cfe = forward_range(m, x, 0, split);
    const Tensor via_features = forward_masked(m, x, narrow, cfe);
    const Tensor direct = forward_masked(m, x, narrow);
    EXPECT_EQ(via_features, direct);
  }
}

TEST(ForwardMasked, RejectsMismatchedAnnotations) {
  const auto m = random_tiny_model(5);
  const std::size_t split = m.conv_layers().front();
  std::mt19937_64 rng(5);
  const Tensor x = random_batch(m, 1, rng);
  auto bad_layer = full_annotation(m, split);
  bad_layer.retained[m.size() + 3] = {0};
  EXPECT_THROW(forward_masked(m, x, bad_layer), ValidationError);
  auto bad_filter = full_annotation(m, split);
  bad_filter.retained.begin()->second.push_back(1000);
  EXPECT_THROW(forward_masked(m, x, bad_filter), ValidationError);
  auto missing = full_annotation(m, split);
  missing.retained.erase(missing.retained.begin());
  EXPECT_THROW(forward_masked(m, x, missing), ValidationError);
  auto unsorted = full_annotation(m, split);
  auto& kept = unsorted.retained.begin()->second;
  if (kept.size() > 1) {
    std::swap(kept[0], kept[1]);
    EXPECT_THROW(forward_masked(m, x, unsorted), ValidationError);
  }
}

TEST(ForwardMasked, SkipsDroppedFilterComputation) {
  const auto m = random_tiny_model(29);
  const std::size_t split = m.conv_layers().front();
  std::mt19937_64 rng(29);
  const auto ann = random_annotation(m, split, rng, 0.3);
  EXPECT_LT(mac_count(m, &ann), mac_count(m));
}

TEST(MacCount, SingleConvLayer) {
  ModelGraph m;
  m.input_shape = {3, 32, 32};
  m.layers.push_back(make_conv("conv", 3, 8, 3, 1, 1));
  m.layers.push_back(make_layer("gap", LayerKind::adaptive_avg_pool, 1));
  m.layers.push_back(make_layer("flatten", LayerKind::flatten));
  m.num_classes = 8;
  m.layers.push_back(make_dense("fc", 8, 8));
  validate_model(m);
  // dense adds 8*8
  EXPECT_EQ(mac_count(m), 221184U + 64U);
  SubgraphAnnotation half;
  half.split_layer = 0;
  half.retained[0] = {0, 2, 4, 6};
  EXPECT_EQ(mac_count(m, &half), 221184U / 2 + 32U);
}

TEST(MacCount, MatchesLiteralCountingOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = random_tiny_model(500 + seed);
    std::mt19937_64 rng(seed);
    EXPECT_EQ(mac_count(m), seminf::testing::reference_mac_count(m, nullptr));
    const auto ann = random_annotation(m, m.conv_layers()[rng() % m.conv_layers().size()], rng, 0.5);
    EXPECT_EQ(mac_count(m, &ann), seminf::testing::reference_mac_count(m, &ann));
  }
}

TEST(MacCount, MonotoneInRetainedSets) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = random_tiny_model(600 + seed);
    std::mt19937_64 rng(seed);
    const auto big = random_annotation(m, m.conv_layers().front(), rng, 0.7);
    for (const auto& [layer, kept] : big.retained) {
      auto small = big;
      if (kept.size() < 2) continue;
      small.retained[layer].pop_back();
      EXPECT_LE(mac_count(m, &small), mac_count(m, &big));
    }
    EXPECT_LE(mac_count(m, &big), mac_count(m));
  }
}
