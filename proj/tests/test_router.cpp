#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "reference.hpp"
#include "seminf/router.hpp"

using namespace seminf;
using seminf::testing::block_clusters;
using seminf::testing::random_annotation;
using seminf::testing::random_dataset;
using seminf::testing::random_tiny_model;

namespace {

struct RouterFixture {
  ModelGraph model;
  ModelGraph srp;
  std::size_t split = 0;
  std::vector<SubgraphAnnotation> annotations;
};

/// Random tiny model with 4 classes in 2 clusters, split at its second conv.
RouterFixture make_fixture(std::uint64_t seed, double fraction = 0.5) {
  RouterFixture f;
  f.model = random_tiny_model(seed, 4);
  f.split = f.model.conv_layers()[1];
  f.srp = make_srp(infer_shapes(f.model)[f.split - 1], 2, seed + 1);
  std::mt19937_64 rng(seed);
  for (int k = 0; k < 2; ++k) {
    auto a = random_annotation(f.model, f.split, rng, fraction);
    a.cluster_id = k;
    f.annotations.push_back(std::move(a));
  }
  return f;
}

Router make_router(const RouterFixture& f, double alpha) {
  return Router(f.model, f.srp, f.split, f.annotations, alpha);
}

/// Makes the SRP output a (numerically) one-hot distribution on `cluster`.
void force_one_hot(ModelGraph& srp, std::size_t cluster) {
  auto& last = srp.layers.back();
  std::ranges::fill(last.weights.data(), 0.0F);
  std::ranges::fill(last.bias.data(), 0.0F);
  last.bias.data()[cluster] = 200.0F;
}

std::vector<std::size_t> base_predictions(const ModelGraph& m, const Tensor& images) {
  return argmax_rows(batched_logits(m, images));
}

double routed_fraction(const std::vector<InferenceRecord>& r) {
  std::size_t n = 0;
  for (const auto& x : r) n += x.decision.routed;
  return static_cast<double>(n) / static_cast<double>(r.size());
}

}  // namespace

TEST(Confidence, DirectFormula) {
  const std::vector<float> p{0.7F, 0.2F, 0.1F};
  EXPECT_NEAR(confidence(p), 0.5, 1e-7);
  const std::vector<float> u{0.25F, 0.25F, 0.25F, 0.25F};
  EXPECT_EQ(confidence(u), 0.0);
  const std::vector<float> one{0.0F, 1.0F, 0.0F};
  EXPECT_EQ(confidence(one), 1.0);
  const std::vector<float> tie{0.4F, 0.4F, 0.2F};
  EXPECT_NEAR(confidence(tie), 0.0, 1e-7);
}

TEST(Confidence, Rejections) {
  const std::vector<float> single{1.0F};
  EXPECT_THROW(confidence(single), ValidationError);
  const std::vector<float> bad{0.5F, 0.6F};
  EXPECT_THROW(confidence(bad), ValidationError);
}

TEST(SelectSplit, ZeroTargetPicksFirstConv) {
  const auto m = random_tiny_model(3, 3);
  std::mt19937_64 rng(3);
  const auto train = random_dataset(m, 30, rng), val = random_dataset(m, 15, rng, "val");
  TrainConfig probe;
  probe.epochs = 2;
  const auto s = select_split_layer(m, train, val, 0.0, probe, 1);
  EXPECT_EQ(s.layer, m.conv_layers().front());
  EXPECT_FALSE(s.fallback);
  EXPECT_EQ(s.candidates.size(), 1U);
}

TEST(SelectSplit, UnreachableTargetFallsBackToDeepestConv) {
  const auto m = random_tiny_model(4, 3);
  std::mt19937_64 rng(4);
  const auto train = random_dataset(m, 30, rng), val = random_dataset(m, 15, rng, "val");
  TrainConfig probe;
  probe.epochs = 2;
  const auto s = select_split_layer(m, train, val, 1.01, probe, 1);
  EXPECT_EQ(s.layer, m.conv_layers().back());
  EXPECT_TRUE(s.fallback);
  EXPECT_EQ(s.candidates.size(), m.conv_layers().size());
}

TEST(SelectSplit, ReturnsMinimalLayerReachingTarget) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const auto m = random_tiny_model(10 + seed, 3);
    std::mt19937_64 rng(seed);
    const auto train = random_dataset(m, 60, rng), val = random_dataset(m, 30, rng, "val");
    TrainConfig probe;
    probe.epochs = 5;
    const auto all = select_split_layer(m, train, val, 1.01, probe, 1);
    const double target = all.candidates.back().accuracy;
    const auto s = select_split_layer(m, train, val, target, probe, 1);
    // independent pass: probe accuracy per candidate
    std::size_t expected = m.conv_layers().back();
    for (auto c : m.conv_layers()) {
      const auto tf = collect_input_features(m, c, train, 1);
      const auto vf = collect_input_features(m, c, val, 1);
      const auto fit = fit_probe(tf, probe);
      if (accuracy(probe_predict(fit.probe, vf, tf.classes), val.labels) >= target) {
        expected = c;
        break;
      }
    }
    EXPECT_EQ(s.layer, expected) << "seed " << seed;
    EXPECT_FALSE(s.fallback);
    for (std::size_t i = 0; i + 1 < s.candidates.size(); ++i) EXPECT_LT(s.candidates[i].accuracy, target);
    EXPECT_GE(s.candidates.back().accuracy, target);
  }
}

TEST(Srp, ArchitectureMatchesInputAndClusterCount) {
  const auto srp = make_srp({6, 4, 4}, 5, 1);
  EXPECT_EQ(srp.conv_layers().size(), 2U);
  EXPECT_EQ(srp.layers[0].weights.shape(), (Shape{6, 6, 3, 3}));
  EXPECT_EQ(srp.layers[2].weights.shape(), (Shape{3, 6, 3, 3}));
  EXPECT_EQ(infer_shapes(srp).back(), (Shape{5}));
  std::size_t dense = 0;
  for (const auto& l : srp.layers) dense += l.kind == LayerKind::dense;
  EXPECT_EQ(dense, 3U);
  EXPECT_THROW(make_srp({6, 4, 4}, 1, 1), ValidationError);
  EXPECT_THROW(make_srp({6, 1, 1}, 2, 1), ValidationError);
}

TEST(Srp, TrainingLeavesBaseModelBitIdentical) {
  const auto m = random_tiny_model(21, 4);
  const ModelGraph before = m;
  std::mt19937_64 rng(21);
  const auto train = random_dataset(m, 24, rng), val = random_dataset(m, 12, rng, "val");
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto fit = train_srp(m, m.conv_layers()[1], train, val, block_clusters(4, 2), cfg);
  ASSERT_EQ(m.layers.size(), before.layers.size());
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    EXPECT_TRUE(std::ranges::equal(m.layers[i].weights.data(), before.layers[i].weights.data()));
    EXPECT_TRUE(std::ranges::equal(m.layers[i].bias.data(), before.layers[i].bias.data()));
  }
  EXPECT_EQ(fit.srp.num_classes, 2U);
  EXPECT_GE(fit.val_accuracy, 0.0);
  EXPECT_LE(fit.val_accuracy, 1.0);
}

TEST(Srp, RejectsSingleCluster) {
  const auto m = random_tiny_model(22, 4);
  std::mt19937_64 rng(22);
  const auto d = random_dataset(m, 8, rng);
  EXPECT_THROW(train_srp(m, m.conv_layers()[0], d, d, block_clusters(4, 4), {}), ValidationError);
}

TEST(Srp, SeparableClustersAreLearned) {
  auto m = random_tiny_model(23, 4);
  std::mt19937_64 rng(23);
  auto make = [&](std::size_t n, const char* split) {
    auto d = random_dataset(m, n, rng, split);
    const std::size_t stride = d.images.size() / n;
    for (std::size_t i = 0; i < n; ++i) {
      const float shift = d.labels[i] < 2 ? 1.5F : -1.5F;
      for (std::size_t j = 0; j < stride; ++j) d.images.data()[i * stride + j] += shift;
    }
    return d;
  };
  const auto train = make(200, "train"), val = make(100, "val");
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 0.02;
  cfg.batch_size = 16;
  const auto fit = train_srp(m, m.conv_layers()[0], train, val, block_clusters(4, 2), cfg);
  EXPECT_GE(fit.val_accuracy, 0.95);
}

TEST(Router, HighAlphaReproducesBaseModel) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto f = make_fixture(30 + seed);
    std::mt19937_64 rng(seed);
    const auto d = random_dataset(f.model, 40, rng);
    const auto base = base_predictions(f.model, d.images);
    for (double alpha : {1.0, 1.5}) {
      const auto records = make_router(f, alpha).infer(d.images);
      for (std::size_t i = 0; i < records.size(); ++i) {
        EXPECT_FALSE(records[i].decision.routed);
        EXPECT_EQ(records[i].prediction, base[i]);
      }
    }
  }
}

TEST(Router, OneHotSrpAtZeroAlphaAlwaysRoutes) {
  auto f = make_fixture(40);
  force_one_hot(f.srp, 1);
  std::mt19937_64 rng(40);
  const auto d = random_dataset(f.model, 20, rng);
  for (const auto& r : make_router(f, 0.0).infer(d.images)) {
    EXPECT_TRUE(r.decision.routed);
    EXPECT_EQ(r.decision.predicted_cluster, 1U);
    EXPECT_EQ(r.decision.confidence, 1.0);
    EXPECT_EQ(r.decision.path(), "cluster1");
  }
}

TEST(Router, StrictThresholdAndMissingAnnotationFallBack) {
  auto f = make_fixture(41);
  std::mt19937_64 rng(41);
  const auto d = random_dataset(f.model, 10, rng);
  // uniform SRP: confidence 0 is not > 0
  auto& last = f.srp.layers.back();
  std::ranges::fill(last.weights.data(), 0.0F);
  std::ranges::fill(last.bias.data(), 0.0F);
  for (const auto& r : make_router(f, 0.0).infer(d.images)) {
    EXPECT_FALSE(r.decision.routed);
    EXPECT_EQ(r.decision.path(), "FULL");
  }
  // confident but the predicted cluster has no accepted subgraph
  force_one_hot(f.srp, 0);
  f.annotations.erase(f.annotations.begin());
  for (const auto& r : make_router(f, 0.0).infer(d.images)) EXPECT_FALSE(r.decision.routed);
}

TEST(Router, FullRetentionRoutedMatchesForwardFull) {
  auto f = make_fixture(42);
  for (auto& a : f.annotations) {
    const int id = a.cluster_id;
    a = full_annotation(f.model, f.split);
    a.cluster_id = id;
  }
  force_one_hot(f.srp, 0);
  std::mt19937_64 rng(42);
  const auto d = random_dataset(f.model, 25, rng);
  const auto base = base_predictions(f.model, d.images);
  const auto records = make_router(f, 0.5).infer(d.images);
  for (std::size_t i = 0; i < records.size(); ++i) {
    EXPECT_TRUE(records[i].decision.routed);
    EXPECT_EQ(records[i].prediction, base[i]);
  }
}

TEST(Router, RoutedPredictionsMatchZeroFilterOracle) {
  auto f = make_fixture(43);
  force_one_hot(f.srp, 1);
  std::mt19937_64 rng(43);
  const auto d = random_dataset(f.model, 15, rng);
  const auto records = make_router(f, 0.2).infer(d.images);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Tensor logits = seminf::testing::reference_forward(f.model, d.images.sample(i), &f.annotations[1]);
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.size(); ++j)
      if (logits[j] > logits[best]) best = j;
    EXPECT_EQ(records[i].prediction, best);
  }
}

TEST(Router, FeatureExtractorRunsOncePerInput) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto f = make_fixture(50 + seed);
    std::mt19937_64 rng(seed);
    const auto d = random_dataset(f.model, 37, rng);
    // alpha at the median confidence so both paths are taken
    auto probe = make_router(f, 0.0).infer(d.images);
    std::vector<double> conf;
    for (const auto& r : probe) conf.push_back(r.decision.confidence);
    std::nth_element(conf.begin(), conf.begin() + static_cast<std::ptrdiff_t>(conf.size() / 2), conf.end());
    const Router router = make_router(f, conf[conf.size() / 2]);
    ExecStats stats;
    const auto records = router.infer(d.images, &stats);
    const double routed = routed_fraction(records);
    EXPECT_GT(routed, 0.0);
    EXPECT_LT(routed, 1.0);
    for (std::size_t l = 0; l < f.model.size(); ++l) {
      ASSERT_LT(l, stats.layer_runs.size());
      EXPECT_EQ(stats.layer_runs[l], d.size()) << "layer " << l;
    }
  }
}

TEST(Router, RoutedFractionNonIncreasingInAlpha) {
  const auto f = make_fixture(60);
  std::mt19937_64 rng(60);
  const auto d = random_dataset(f.model, 60, rng);
  const Router base = make_router(f, 0.0);
  double previous = 1.1;
  for (int i = 0; i <= 10; ++i) {
    const double frac = routed_fraction(base.with_alpha(i / 10.0).infer(d.images));
    EXPECT_LE(frac, previous);
    previous = frac;
  }
}

TEST(Router, FeaturePathMatchesImagePath) {
  const auto f = make_fixture(61);
  std::mt19937_64 rng(61);
  const auto d = random_dataset(f.model, 30, rng);
  const Router r = make_router(f, 0.1);
  const auto a = r.infer(d.images);
  const auto b = r.infer_from_features(cfe_features(f.model, f.split, d.images));
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].prediction, b[i].prediction);
    EXPECT_EQ(a[i].decision.routed, b[i].decision.routed);
    EXPECT_EQ(a[i].tail_macs, b[i].tail_macs);
  }
}

TEST(Router, Deterministic) {
  const auto f = make_fixture(62);
  std::mt19937_64 rng(62);
  const auto d = random_dataset(f.model, 30, rng);
  const auto a = make_router(f, 0.1).infer(d.images);
  const auto b = make_router(f, 0.1).infer(d.images);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].prediction, b[i].prediction);
    EXPECT_EQ(a[i].decision.confidence, b[i].decision.confidence);
    EXPECT_EQ(a[i].decision.predicted_cluster, b[i].decision.predicted_cluster);
  }
}

TEST(Router, MacAccountingPerStage) {
  auto f = make_fixture(63);
  force_one_hot(f.srp, 0);
  std::mt19937_64 rng(63);
  const auto d = random_dataset(f.model, 5, rng);
  const auto routed = make_router(f, 0.0).infer(d.images);
  const auto full = make_router(f, 1.0).infer(d.images);
  const auto expect_cfe = cost_range(f.model, nullptr, 0, f.split).macs;
  EXPECT_EQ(routed[0].cfe_macs, expect_cfe);
  EXPECT_EQ(routed[0].srp_macs, mac_count(f.srp));
  EXPECT_EQ(routed[0].tail_macs, cost_range(f.model, &f.annotations[0], f.split, f.model.size()).macs);
  EXPECT_EQ(full[0].tail_macs, cost_range(f.model, nullptr, f.split, f.model.size()).macs);
  EXPECT_EQ(full[0].cfe_macs + full[0].tail_macs, mac_count(f.model));
  EXPECT_LT(routed[0].total_macs(), full[0].total_macs());
}

TEST(Router, RejectsInconsistentComponents) {
  auto f = make_fixture(64);
  auto bad = f.annotations;
  bad[0].split_layer = f.model.conv_layers()[0];
  std::mt19937_64 rng(1);
  bad[0].retained = random_annotation(f.model, bad[0].split_layer, rng).retained;
  EXPECT_THROW(Router(f.model, f.srp, f.split, bad, 0.5), ValidationError);
  auto dup = f.annotations;
  dup[1].cluster_id = 0;
  EXPECT_THROW(Router(f.model, f.srp, f.split, dup, 0.5), ValidationError);
  EXPECT_THROW(Router(f.model, f.srp, f.split, f.annotations, -0.1), ValidationError);
  EXPECT_THROW(Router(f.model, f.srp, f.split + 1, f.annotations, 0.5), ValidationError);
  const Router r = make_router(f, 0.5);
  EXPECT_THROW(r.infer(Tensor({2, 1, 3, 3})), ValidationError);
}

TEST(Router, TraceCsvHasOneRowPerInput) {
  const auto f = make_fixture(65);
  std::mt19937_64 rng(65);
  const auto d = random_dataset(f.model, 12, rng);
  const auto records = make_router(f, 0.1).infer(d.images);
  const auto csv = routing_trace_csv(records, d.labels, block_clusters(4, 2));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line,
            "index,true_class,true_cluster,predicted_cluster,confidence,routed,prediction,cfe_macs,srp_macs,tail_macs");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 9);
    ++rows;
  }
  EXPECT_EQ(rows, d.size());
}
