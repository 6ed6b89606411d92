#pragma once

// End-to-end desk pipeline: base training, split selection, SRP training,
// retention sweep and threshold benchmark. Also JSON forms of the configs.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "seminf/analysis.hpp"
#include "seminf/desk.hpp"
#include "seminf/extract.hpp"
#include "seminf/router.hpp"
#include "seminf/serialize.hpp"
#include "seminf/train.hpp"

namespace seminf {

inline TrainConfig default_base_training() {
  TrainConfig c;
  c.learning_rate = 0.02;
  c.epochs = 15;
  c.batch_size = 32;
  c.weight_decay = 5e-4;
  c.momentum = 0.9;
  c.seed = 1;
  return c;
}

inline TrainConfig default_srp_training() {
  TrainConfig c = default_base_training();
  c.learning_rate = 0.01;
  c.seed = 2;
  return c;
}

inline std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

struct PipelineConfig {
  DeskConfig desk;
  std::uint64_t model_seed = 1;
  TrainConfig base = default_base_training();
  double split_target = 0.75;
  std::size_t split_k_prime = 2;
  TrainConfig split_probe;
  TrainConfig srp = default_srp_training();
  SweepGrid grid;
  ExtractionConfig extraction;
  std::vector<double> alpha_grid = default_alpha_grid();
  TimingConfig timing{3, 30, 256};
};

struct PipelineResult {
  ModelGraph base;
  TrainTrace base_trace;
  double base_test_accuracy = 0.0;
  SplitSelection split;
  SrpFit srp;
  SweepResult sweep;
  std::vector<SubgraphAnnotation> annotations;  // accepted at the sweep's best point
  ThresholdSweep bench;
};

inline ClassifierFit train_base_model(const Dataset& train, const TrainConfig& config, std::uint64_t model_seed,
                                      std::size_t image_size = 32) {
  return train_classifier(make_desk_model(model_seed, image_size), train, config);
}

/// Runs every stage on `data`: scores on train, acceptance and SRP
/// validation on val, benchmark on test.
inline PipelineResult run_pipeline(const DeskData& data, const PipelineConfig& config) {
  PipelineResult r;
  auto fit = train_base_model(data.train, config.base, config.model_seed, config.desk.image_size);
  r.base = std::move(fit.model);
  r.base_trace = std::move(fit.trace);
  r.base_test_accuracy = evaluate_accuracy(r.base, data.test.images, data.test.labels);

  r.split = select_split_layer(r.base, data.train, data.val, config.split_target, config.split_probe,
                               config.split_k_prime);
  r.srp = train_srp(r.base, r.split.layer, data.train, data.val, data.clusters, config.srp);

  ExtractionConfig extraction = config.extraction;
  extraction.split_layer = r.split.layer;
  r.sweep = sweep_extract(r.base, data.clusters, data.train, data.val, config.grid, extraction);
  if (r.sweep.best) r.annotations = r.sweep.accepted_annotations(*r.sweep.best);

  const Router router(r.base, r.srp.srp, r.split.layer, r.annotations, 0.0);
  r.bench = threshold_sweep(router, config.alpha_grid, data.test, config.timing);
  return r;
}

// ---------------------------------------------------------------------------
// JSON forms

inline json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs},   {"batch_size", c.batch_size},
          {"weight_decay", c.weight_decay},   {"momentum", c.momentum}, {"seed", c.seed}};
}

inline json to_json(const DeskConfig& c) {
  return {{"train_per_class", c.train_per_class}, {"val_per_class", c.val_per_class},
          {"test_per_class", c.test_per_class},   {"image_size", c.image_size},
          {"noise", c.noise},                     {"color_jitter", c.color_jitter},
          {"seed", c.seed}};
}

inline json to_json(const ExtractionConfig& c) {
  json j{{"r_L", c.r_L},
         {"r_M", c.r_M},
         {"epsilon", c.epsilon},
         {"split_layer", c.split_layer},
         {"criterion", criterion_name(c.criterion)},
         {"k_prime", c.scoring.k_prime},
         {"scoring_seed", c.scoring.seed},
         {"probe", to_json(c.scoring.probe)}};
  j["tau_acc"] = c.tau_acc ? json(*c.tau_acc) : json(nullptr);
  return j;
}

inline json to_json(const PipelineConfig& c) {
  return {{"desk", to_json(c.desk)},
          {"model_seed", c.model_seed},
          {"base", to_json(c.base)},
          {"split_target", c.split_target},
          {"split_k_prime", c.split_k_prime},
          {"split_probe", to_json(c.split_probe)},
          {"srp", to_json(c.srp)},
          {"grid", {{"r_L", c.grid.r_L}, {"r_M", c.grid.r_M}}},
          {"extraction", to_json(c.extraction)},
          {"alpha_grid", c.alpha_grid},
          {"timing",
           {{"warmup", c.timing.warmup},
            {"repetitions", c.timing.repetitions},
            {"max_samples", c.timing.max_samples}}}};
}

inline json to_json(const SplitSelection& s) {
  json candidates = json::array();
  for (const auto& c : s.candidates) candidates.push_back({{"layer", c.layer}, {"accuracy", c.accuracy}});
  return {{"layer", s.layer}, {"fallback", s.fallback}, {"candidates", candidates}};
}

/// Everything a rerun must reproduce exactly: annotations and accuracies.
inline json pipeline_fingerprint(const PipelineResult& r) {
  json annotations = json::array();
  for (const auto& a : r.annotations) annotations.push_back(annotation_to_json(a));
  json points = json::array();
  for (const auto& p : r.sweep.points) {
    json accs = json::array();
    for (const auto& e : p.clusters) accs.push_back(e.accuracy);
    points.push_back({{"r_L", p.r_L}, {"r_M", p.r_M}, {"accuracy", accs}, {"accepted", p.accepted}});
  }
  json bench = json::array();
  for (const auto& b : r.bench.records)
    bench.push_back({{"alpha", b.alpha}, {"accuracy", b.accuracy}, {"routed_fraction", b.routed_fraction}});
  return {{"base_test_accuracy", r.base_test_accuracy},
          {"base_final_loss", r.base_trace.empty() ? 0.0 : r.base_trace.back().loss},
          {"split", to_json(r.split)},
          {"srp_val_accuracy", r.srp.val_accuracy},
          {"sweep_points", points},
          {"annotations", annotations},
          {"bench", bench}};
}

}  // namespace seminf
