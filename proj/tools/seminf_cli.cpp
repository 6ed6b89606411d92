// seminf command-line interface. Every run writes <command>.config.json into
// its output directory; that file can be fed back through --config.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "json_config.hpp"
#include "seminf/analysis.hpp"
#include "seminf/desk.hpp"
#include "seminf/extract.hpp"
#include "seminf/pipeline.hpp"
#include "seminf/router.hpp"
#include "seminf/serialize.hpp"

namespace fs = std::filesystem;
using namespace seminf;
using seminf::cli::JsonConfig;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

// ---------------------------------------------------------------------------
// shared option blocks

struct DataOptions {
  std::string dir;

  void add(CLI::App* app) { app->add_option("--data", dir, "dataset directory (train/val/test .bin + clusters.json)")->required(); }
  Dataset split(const std::string& name) const { return load_dataset(fs::path(dir) / (name + ".bin"), name); }
  ClusterMap clusters() const { return load_cluster_map(fs::path(dir) / "clusters.json"); }
};

struct TrainOptions {
  TrainConfig config;

  void add(CLI::App* app, const std::string& prefix = "") {
    app->add_option("--" + prefix + "lr", config.learning_rate, "learning rate")->capture_default_str();
    app->add_option("--" + prefix + "epochs", config.epochs, "training epochs")->capture_default_str();
    app->add_option("--" + prefix + "batch-size", config.batch_size, "mini-batch size")->capture_default_str();
    app->add_option("--" + prefix + "weight-decay", config.weight_decay, "L2 weight decay")->capture_default_str();
    app->add_option("--" + prefix + "momentum", config.momentum, "SGD momentum")->capture_default_str();
    app->add_option("--" + prefix + "seed", config.seed, "shuffling seed")->capture_default_str();
  }
};

struct SplitOption {
  std::optional<std::size_t> layer;
  std::string file;

  void add(CLI::App* app) {
    auto* a = app->add_option("--split", layer, "split layer index M");
    auto* b = app->add_option("--split-file", file, "split.json written by select-split");
    a->excludes(b);
    b->excludes(a);
  }

  std::size_t resolve() const {
    if (layer) return *layer;
    require(!file.empty(), "one of --split or --split-file is required");
    const json doc = detail::parse_json(file);
    require(doc.contains("layer") && doc["layer"].is_number_unsigned(), file + ": missing \"layer\"");
    return doc["layer"].get<std::size_t>();
  }
};

struct ScoringOptions {
  std::string criterion = "dcs";
  ScoringConfig config;

  void add(CLI::App* app) {
    app->add_option("--criterion", criterion, "dcs|taylor|apoz|sensitivity|l1|random")->capture_default_str();
    app->add_option("--k-prime", config.k_prime, "feature pooling size k'")->capture_default_str();
    app->add_option("--score-seed", config.seed, "seed for the random criterion")->capture_default_str();
    app->add_option("--probe-epochs", config.probe.epochs, "probe training epochs")->capture_default_str();
    app->add_option("--probe-lr", config.probe.learning_rate, "probe learning rate")->capture_default_str();
  }

  Criterion parsed() const { return criterion_from_name(criterion); }
};

std::int64_t parse_cluster(const std::string& s) {
  if (s == "ALL" || s == "all") return SubgraphAnnotation::kAllClusters;
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used == s.size() && v >= 0) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError("--cluster must be a non-negative id or ALL, got " + s);
}

std::vector<SubgraphAnnotation> load_annotation_dir(const std::string& dir) {
  std::vector<fs::path> files;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(dir, ec))
    if (e.path().extension() == ".json" && !e.path().stem().string().ends_with(".config")) files.push_back(e.path());
  if (ec) throw IoError("cannot list annotation directory " + dir + ": " + ec.message());
  std::sort(files.begin(), files.end());
  std::vector<SubgraphAnnotation> out;
  for (const auto& f : files) out.push_back(load_annotation(f));
  return out;
}

std::string trace_csv(const TrainTrace& trace) {
  std::string out = "epoch,loss,accuracy,learning_rate\n";
  for (const auto& e : trace)
    out += std::to_string(e.epoch) + "," + format_number(e.loss) + "," + format_number(e.accuracy) + "," +
           format_number(e.learning_rate) + "\n";
  return out;
}

void write_json(const fs::path& path, const json& doc) { detail::write_file(path, doc.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// command table

struct Command {
  CLI::App* app = nullptr;
  std::function<void(const fs::path&)> run;
};

class Cli {
 public:
  Cli() : app_("Semantic subgraph extraction and routed inference for sequential CNNs", "seminf") {
    app_.config_formatter(std::make_shared<JsonConfig>());
    app_.set_config("--config", "", "JSON file with option values, keyed by subcommand");
    app_.require_subcommand(1);
    app_.failure_message(CLI::FailureMessage::help);
    add_gen_desk();
    add_train_base();
    add_select_split();
    add_train_srp();
    add_score();
    add_extract();
    add_sweep();
    add_prune();
    add_infer();
    add_bench();
    add_analyze();
    add_export_features();
  }

  int main(int argc, char** argv) {
    try {
      app_.parse(argc, argv);
    } catch (const IoError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitIo;
    } catch (const CLI::FileError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitIo;
    } catch (const CLI::ParseError& e) {
      const int code = app_.exit(e);
      return code == 0 ? 0 : kExitValidation;
    }
    try {
      for (auto& [name, cmd] : commands_) {
        if (!cmd.app->parsed()) continue;
        const fs::path out = output_dir();
        fs::create_directories(out);
        detail::write_file(out / (name + ".config.json"), app_.config_to_str(true, false));
        cmd.run(out);
      }
    } catch (const ValidationError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitValidation;
    } catch (const IoError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitIo;
    } catch (const fs::filesystem_error& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitIo;
    }
    return 0;
  }

 private:
  fs::path output_dir() const {
    if (const char* env = std::getenv("SEMINF_OUTPUT_DIR"); env && *env) return env;
    return out_;
  }

  CLI::App* add(const std::string& name, const std::string& help, std::function<void(const fs::path&)> run) {
    CLI::App* sub = app_.add_subcommand(name, help);
    sub->add_option("--out", out_, "output directory (SEMINF_OUTPUT_DIR overrides)")->capture_default_str();
    commands_[name] = {sub, std::move(run)};
    return sub;
  }

  void add_gen_desk() {
    auto* s = add("gen-desk", "write the synthetic 20-class desk dataset", [this](const fs::path& out) {
      const auto d = make_desk_data(desk_);
      save_dataset(d.train, out / "train.bin");
      save_dataset(d.val, out / "val.bin");
      save_dataset(d.test, out / "test.bin");
      save_cluster_map(d.clusters, out / "clusters.json");
      std::cout << "wrote " << d.train.size() << "/" << d.val.size() << "/" << d.test.size()
                << " train/val/test samples to " << out << "\n";
    });
    s->add_option("--seed", desk_.seed, "generator seed")->capture_default_str();
    s->add_option("--train-per-class", desk_.train_per_class)->capture_default_str();
    s->add_option("--val-per-class", desk_.val_per_class)->capture_default_str();
    s->add_option("--test-per-class", desk_.test_per_class)->capture_default_str();
    s->add_option("--image-size", desk_.image_size)->capture_default_str();
    s->add_option("--noise", desk_.noise, "pixel noise standard deviation")->capture_default_str();
    s->add_option("--color-jitter", desk_.color_jitter, "per-image palette jitter")->capture_default_str();
  }

  void add_train_base() {
    train_.config = default_base_training();
    auto* s = add("train-base", "train the desk CNN", [this](const fs::path& out) {
      const auto train = data_.split("train"), val = data_.split("val"), test = data_.split("test");
      const std::size_t side = train.images.dim(2);
      const auto fit = train_base_model(train, train_.config, model_seed_, side);
      save_model(fit.model, out / "model");
      detail::write_file(out / "train_trace.csv", trace_csv(fit.trace));
      const json metrics{{"val_accuracy", evaluate_accuracy(fit.model, val.images, val.labels)},
                         {"test_accuracy", evaluate_accuracy(fit.model, test.images, test.labels)},
                         {"macs", mac_count(fit.model)},
                         {"params", param_count(fit.model)}};
      write_json(out / "train_base.json", metrics);
      std::cout << metrics.dump() << "\n";
    });
    data_.add(s);
    train_.add(s);
    s->add_option("--model-seed", model_seed_, "weight initialisation seed")->capture_default_str();
  }

  void add_select_split() {
    auto* s = add("select-split", "earliest conv layer whose input supports the target probe accuracy",
                  [this](const fs::path& out) {
                    const auto model = load_model(model_dir_);
                    const auto sel = select_split_layer(model, data_.split("train"), data_.split("val"),
                                                        split_target_, probe_.config, split_k_prime_);
                    write_json(out / "split.json", to_json(sel));
                    if (sel.fallback)
                      std::cerr << "warning: no layer reached target " << split_target_
                                << "; using deepest conv layer " << sel.layer << "\n";
                    std::cout << to_json(sel).dump() << "\n";
                  });
    s->add_option("--model", model_dir_, "model directory")->required();
    data_.add(s);
    s->add_option("--target", split_target_, "held-out probe accuracy target")->capture_default_str();
    s->add_option("--k-prime", split_k_prime_, "feature pooling size k'")->capture_default_str();
    probe_.add(s, "probe-");
  }

  void add_train_srp() {
    srp_.config = default_srp_training();
    auto* s = add("train-srp", "train the cluster route predictor on frozen CFE activations",
                  [this](const fs::path& out) {
                    const auto model = load_model(model_dir_);
                    const std::size_t split = split_.resolve();
                    const auto fit = train_srp(model, split, data_.split("train"), data_.split("val"),
                                               data_.clusters(), srp_.config);
                    save_model(fit.srp, out / "srp");
                    detail::write_file(out / "srp_trace.csv", trace_csv(fit.trace));
                    const json metrics{{"split_layer", split}, {"val_accuracy", fit.val_accuracy}};
                    write_json(out / "srp.json", metrics);
                    std::cout << metrics.dump() << "\n";
                  });
    s->add_option("--model", model_dir_, "model directory")->required();
    data_.add(s);
    split_.add(s);
    srp_.add(s);
  }

  void add_score() {
    auto* s = add("score", "per-filter scores of one conv layer for one cluster", [this](const fs::path& out) {
      const auto model = load_model(model_dir_);
      const std::int64_t cluster = parse_cluster(cluster_);
      Dataset data = data_.split(score_split_);
      if (cluster != SubgraphAnnotation::kAllClusters) data = data.filter_classes(data_.clusters().at(static_cast<std::size_t>(cluster)).classes);
      ScoringConfig cfg = scoring_.config;
      auto table = score_layer(model, layer_, data, scoring_.parsed(), cfg);
      table.cluster_id = cluster;
      const fs::path path = out / ("score_" + scoring_.criterion + "_" + cluster_ + "_" + std::to_string(layer_) + ".json");
      save_score_tables({table}, path);
      std::cout << "wrote " << path.string() << "\n";
    });
    s->add_option("--model", model_dir_, "model directory")->required();
    data_.add(s);
    s->add_option("--cluster", cluster_, "cluster id or ALL")->required();
    s->add_option("--layer", layer_, "conv layer index")->required();
    s->add_option("--data-split", score_split_, "split used for scoring")->capture_default_str();
    scoring_.add(s);
  }

  ExtractionConfig extraction_config(std::size_t split) const {
    ExtractionConfig c;
    c.r_L = r_L_;
    c.r_M = r_M_;
    c.split_layer = split;
    c.criterion = scoring_.parsed();
    c.scoring = scoring_.config;
    c.epsilon = epsilon_;
    if (tau_ >= 0.0) c.tau_acc = tau_;
    return c;
  }

  void add_extract() {
    auto* s = add("extract", "extract one cluster's subgraph at (r_L, r_M)", [this](const fs::path& out) {
      const auto model = load_model(model_dir_);
      const auto clusters = data_.clusters();
      const auto k = parse_cluster(cluster_);
      require(k >= 0, "extract: use prune for the all-class subgraph");
      const auto& classes = clusters.at(static_cast<std::size_t>(k)).classes;
      const auto e = extract_subgraph(model, data_.split("train").filter_classes(classes),
                                      data_.split("val").filter_classes(classes), k, extraction_config(split_.resolve()));
      save_annotation(e.annotation, out / ("cluster" + std::to_string(k) + ".json"));
      std::cout << json{{"cluster", k}, {"accuracy", e.accuracy}, {"accepted", e.accepted}, {"macs", e.macs}}.dump()
                << "\n";
    });
    s->add_option("--model", model_dir_, "model directory")->required();
    data_.add(s);
    s->add_option("--cluster", cluster_, "cluster id")->required();
    split_.add(s);
    s->add_option("--r-L", r_L_, "retention at the last conv layer")->capture_default_str();
    s->add_option("--r-M", r_M_, "retention at the split layer")->capture_default_str();
    s->add_option("--tau", tau_, "accuracy threshold (negative = none)")->capture_default_str();
    scoring_.add(s);
  }

  void add_sweep() {
    auto* s = add("sweep", "extract every cluster over the (r_L, r_M) grid", [this](const fs::path& out) {
      const auto model = load_model(model_dir_);
      const auto clusters = data_.clusters();
      auto cfg = extraction_config(split_.resolve());
      const auto result = sweep_extract(model, clusters, data_.split("train"), data_.split("val"), grid_, cfg);
      detail::write_file(out / "sweep.csv", sweep_csv(result));
      json summary{{"tau_acc", result.tau_acc},
                   {"epsilon", result.epsilon},
                   {"base_accuracy", result.base_accuracy},
                   {"pareto", result.pareto}};
      summary["best"] = result.best ? json(*result.best) : json(nullptr);
      if (result.best) {
        const auto& p = result.points[*result.best];
        summary["best_point"] = {{"r_L", p.r_L}, {"r_M", p.r_M}, {"mean_accuracy", p.mean_accuracy},
                                 {"mean_macs", p.mean_macs}};
        for (const auto& a : result.accepted_annotations(*result.best))
          save_annotation(a, out / "annotations" / ("cluster" + std::to_string(a.cluster_id) + ".json"));
      }
      write_json(out / "sweep.json", summary);
      std::cout << summary.dump() << "\n";
    });
    s->add_option("--model", model_dir_, "model directory")->required();
    data_.add(s);
    split_.add(s);
    s->add_option("--r-L", grid_.r_L, "r_L grid")->capture_default_str()->expected(1, -1);
    s->add_option("--r-M", grid_.r_M, "r_M grid")->capture_default_str()->expected(1, -1);
    s->add_option("--epsilon", epsilon_, "accuracy margin")->capture_default_str();
    s->add_option("--tau", tau_, "accuracy threshold (negative = mean base accuracy - epsilon)")->capture_default_str();
    scoring_.add(s);
  }

  void add_prune() {
    auto* s = add("prune", "single all-class subgraph (global pruning)", [this](const fs::path& out) {
      const auto model = load_model(model_dir_);
      const std::size_t split = split_.resolve();
      const auto schedule = retention_schedule(model, split, r_L_, r_M_);
      const auto a = prune_global(model, data_.split("train"), schedule, scoring_.parsed(), scoring_.config);
      save_annotation(a, out / "pruned_all.json");
      const auto test = data_.split("test");
      const json metrics{{"base_accuracy", evaluate_accuracy(model, test.images, test.labels)},
                         {"pruned_accuracy", masked_accuracy(model, a, test)},
                         {"base_macs", mac_count(model)},
                         {"pruned_macs", mac_count(model, &a)}};
      write_json(out / "prune.json", metrics);
      std::cout << metrics.dump() << "\n";
    });
    s->add_option("--model", model_dir_, "model directory")->required();
    data_.add(s);
    split_.add(s);
    s->add_option("--r-L", r_L_, "retention at the last conv layer")->capture_default_str();
    s->add_option("--r-M", r_M_, "retention at the split layer")->capture_default_str();
    scoring_.add(s);
  }

  Router make_router(double alpha) const {
    const auto model = load_model(model_dir_);
    auto srp = load_model(srp_dir_);
    std::vector<SubgraphAnnotation> anns;
    if (!annotation_dir_.empty()) anns = load_annotation_dir(annotation_dir_);
    return Router(model, std::move(srp), split_.resolve(), std::move(anns), alpha);
  }

  void add_router_options(CLI::App* s) {
    s->add_option("--model", model_dir_, "model directory")->required();
    s->add_option("--srp", srp_dir_, "route predictor directory")->required();
    s->add_option("--annotations", annotation_dir_, "directory of accepted cluster annotations");
    data_.add(s);
    split_.add(s);
    s->add_option("--data-split", eval_split_, "split to run on")->capture_default_str();
  }

  void add_infer() {
    auto* s = add("infer", "routed inference with a per-input trace", [this](const fs::path& out) {
      const Router router = make_router(alpha_);
      const auto data = data_.split(eval_split_);
      const auto records = router.infer(data.images);
      detail::write_file(out / "routing_trace.csv", routing_trace_csv(records, data.labels, data_.clusters()));
      std::size_t hit = 0, routed = 0;
      double macs = 0.0;
      for (std::size_t i = 0; i < records.size(); ++i) {
        hit += records[i].prediction == data.labels[i];
        routed += records[i].decision.routed;
        macs += static_cast<double>(records[i].total_macs());
      }
      const double n = static_cast<double>(records.size());
      const json summary{{"alpha", alpha_},
                         {"accuracy", static_cast<double>(hit) / n},
                         {"routed_fraction", static_cast<double>(routed) / n},
                         {"mean_macs", macs / n},
                         {"base_macs", mac_count(router.model())}};
      write_json(out / "infer.json", summary);
      std::cout << summary.dump() << "\n";
    });
    add_router_options(s);
    s->add_option("--alpha", alpha_, "confidence threshold")->capture_default_str();
  }

  void add_bench() {
    auto* s = add("bench", "accuracy, routed fraction and latency over a threshold grid", [this](const fs::path& out) {
      const Router router = make_router(0.0);
      const auto data = data_.split(eval_split_);
      const auto sweep = threshold_sweep(router, alphas_, data, timing_);
      detail::write_file(out / "benchmark.csv", benchmark_csv(sweep.records));
      detail::write_file(out / "confidence_cdf.csv", cdf_csv(sweep.cdf));
      const auto clusters = data_.clusters();
      for (std::size_t i = 0; i < sweep.records.size(); ++i)
        detail::write_file(out / "traces" / ("alpha_" + format_number(sweep.records[i].alpha) + ".csv"),
                           routing_trace_csv(sweep.traces[i], data.labels, clusters));
      json records = json::array();
      for (const auto& r : sweep.records)
        records.push_back({{"scenario", r.scenario}, {"accuracy", r.accuracy}, {"routed_fraction", r.routed_fraction},
                           {"mean_macs", r.mean_macs}, {"latency_median_s", r.latency.median}, {"config", r.config}});
      write_json(out / "benchmark.json", records);
      std::cout << benchmark_csv(sweep.records);
    });
    add_router_options(s);
    s->add_option("--alphas", alphas_, "threshold grid")->capture_default_str()->expected(1, -1);
    s->add_option("--warmup", timing_.warmup, "warm-up runs (>= 3)")->capture_default_str();
    s->add_option("--repetitions", timing_.repetitions, "timed runs (>= 30)")->capture_default_str();
    s->add_option("--max-samples", timing_.max_samples, "inputs per timed batch (0 = all)")->capture_default_str();
  }

  void add_analyze() {
    auto* s = add("analyze", "activation patterns, filter sharing and per-cluster evaluation",
                  [this](const fs::path& out) {
                    const auto model = load_model(model_dir_);
                    const auto data = data_.split(eval_split_);
                    const auto clusters = data_.clusters();
                    std::vector<std::size_t> layers = layers_.empty() ? model.conv_layers() : layers_;
                    std::string patterns = "layer,class,filter,value\n";
                    std::string sharing = "layer,class_a,class_b,same_cluster,similarity\n";
                    std::string summary = "layer,within,across,within_pairs,across_pairs\n";
                    const auto owner = clusters.class_to_cluster();
                    const std::optional<std::size_t> top_k =
                        top_k_ > 0 ? std::optional<std::size_t>(top_k_) : std::nullopt;
                    for (auto layer : layers) {
                      for (std::size_t c = 0; c < model.num_classes; ++c) {
                        if (std::find(data.labels.begin(), data.labels.end(), c) == data.labels.end()) continue;
                        const auto p = activation_pattern(model, layer, c, data);
                        for (std::size_t f = 0; f < p.size(); ++f)
                          patterns += std::to_string(layer) + "," + std::to_string(c) + "," + std::to_string(f) +
                                      "," + format_number(p[f]) + "\n";
                      }
                      const auto tags = filter_tags(model, layer, data, quantile_, top_k);
                      for (std::size_t a = 0; a < model.num_classes; ++a)
                        for (std::size_t b = a + 1; b < model.num_classes; ++b)
                          sharing += std::to_string(layer) + "," + std::to_string(a) + "," + std::to_string(b) + "," +
                                     (owner[a] == owner[b] ? "1" : "0") + "," +
                                     format_number(filter_sharing(tags, a, b)) + "\n";
                      const auto s = sharing_summary(tags, clusters);
                      summary += std::to_string(layer) + "," + format_number(s.within) + "," +
                                 format_number(s.across) + "," + std::to_string(s.within_pairs) + "," +
                                 std::to_string(s.across_pairs) + "\n";
                    }
                    detail::write_file(out / "activation_patterns.csv", patterns);
                    detail::write_file(out / "filter_sharing.csv", sharing);
                    detail::write_file(out / "sharing_summary.csv", summary);
                    if (!annotation_dir_.empty()) {
                      std::map<std::size_t, SubgraphAnnotation> anns;
                      for (auto& a : load_annotation_dir(annotation_dir_)) {
                        require(a.cluster_id >= 0, "analyze: all-class annotation is not a cluster subgraph");
                        anns.emplace(static_cast<std::size_t>(a.cluster_id), std::move(a));
                      }
                      detail::write_file(out / "cluster_eval.csv",
                                         cluster_eval_csv(per_cluster_eval(model, anns, data, clusters)));
                    }
                    std::cout << summary;
                  });
    s->add_option("--model", model_dir_, "model directory")->required();
    data_.add(s);
    s->add_option("--data-split", eval_split_, "split to analyse")->capture_default_str();
    s->add_option("--layers", layers_, "conv layers (default: all)")->expected(1, -1);
    s->add_option("--quantile", quantile_, "firing threshold as a fraction of the range")->capture_default_str();
    s->add_option("--top-k", top_k_, "classes tagged per filter (0 = ceil(0.2 * classes))")->capture_default_str();
    s->add_option("--annotations", annotation_dir_, "cluster annotations for per-cluster evaluation");
  }

  void add_export_features() {
    auto* s = add("export-features", "pooled features of one layer as CSV", [this](const fs::path& out) {
      const auto model = load_model(model_dir_);
      const auto data = data_.split(eval_split_);
      const fs::path path = out / ("features_" + eval_split_ + "_" + std::to_string(layer_) + ".csv");
      export_features(model, layer_, data, data_.clusters(), path, scoring_.config.k_prime);
      std::cout << "wrote " << path.string() << "\n";
    });
    s->add_option("--model", model_dir_, "model directory")->required();
    data_.add(s);
    s->add_option("--layer", layer_, "layer index")->required();
    s->add_option("--data-split", eval_split_, "split to export")->capture_default_str();
    s->add_option("--k-prime", scoring_.config.k_prime, "feature pooling size k'")->capture_default_str();
  }

  CLI::App app_;
  std::map<std::string, Command> commands_;
  std::string out_ = "seminf_out";

  DeskConfig desk_;
  DataOptions data_;
  TrainOptions train_;
  TrainOptions probe_;
  TrainOptions srp_;
  SplitOption split_;
  ScoringOptions scoring_;
  SweepGrid grid_;
  TimingConfig timing_{3, 30, 256};
  std::vector<double> alphas_ = default_alpha_grid();
  std::vector<std::size_t> layers_;
  std::string model_dir_, srp_dir_, annotation_dir_, cluster_ = "0", score_split_ = "train", eval_split_ = "test";
  std::uint64_t model_seed_ = 1;
  std::size_t layer_ = 0, split_k_prime_ = 2, top_k_ = 0;
  double split_target_ = 0.75, r_L_ = 0.5, r_M_ = 0.5, epsilon_ = 0.02, tau_ = -1.0, alpha_ = 0.5, quantile_ = 0.7;
};

}  // namespace

int main(int argc, char** argv) { return Cli().main(argc, argv); }
