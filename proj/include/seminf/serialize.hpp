#pragma once

// On-disk formats.
//
// Tensor file: 8-byte magic "SINFTNSR", u8 dtype (0 = f32), u8 ndim, 6 zero
// bytes, ndim x u32 extents, then the row-major f32 payload. All integers and
// floats little-endian.
//
// Model archive: a directory holding manifest.json plus one tensor file per
// weight/bias. Annotation and cluster-map files are JSON. Dataset file:
// u32 N, C, H, W, N*C*H*W f32, then N u16 labels.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seminf/data.hpp"
#include "seminf/errors.hpp"
#include "seminf/model.hpp"
#include "seminf/scoring.hpp"
#include "seminf/tensor.hpp"

namespace seminf {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;
inline constexpr std::array<char, 8> kTensorMagic{'S', 'I', 'N', 'F', 'T', 'N', 'S', 'R'};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::string& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.append(bytes.data(), bytes.size());
}

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::array<char, sizeof(T)> raw;
    std::memcpy(raw.data(), bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void read_floats(float* dst, std::size_t count) {
    need(count * sizeof(float));
    for (std::size_t i = 0; i < count; ++i) dst[i] = get<float>();
  }

  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  const std::string& origin() const noexcept { return origin_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw IoError(origin_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                    std::to_string(pos_) + ", file has " + std::to_string(bytes_.size()) + ")");
  }

  std::string bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return buf.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline json parse_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": malformed JSON: " + e.what());
  }
}

inline void check_version(const json& doc, const fs::path& path) {
  if (!doc.contains("format_version") || !doc["format_version"].is_number_integer())
    throw IoError(path.string() + ": missing format_version");
  const int v = doc["format_version"].get<int>();
  if (v != kFormatVersion)
    throw IoError(path.string() + ": format_version " + std::to_string(v) + " unsupported (expected " +
                  std::to_string(kFormatVersion) + ")");
}

template <typename T>
T field(const json& doc, const char* key, const fs::path& path) {
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": bad or missing field '" + key + "': " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// tensors

inline std::string encode_tensor(const Tensor& t) {
  require(t.rank() <= 255, "tensor rank too large to encode");
  std::string out(kTensorMagic.begin(), kTensorMagic.end());
  out.push_back(static_cast<char>(0));  // dtype f32
  out.push_back(static_cast<char>(t.rank()));
  out.append(6, '\0');
  for (auto extent : t.shape()) {
    require(extent <= 0xFFFFFFFFULL, "tensor extent exceeds u32");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(extent));
  }
  out.reserve(out.size() + t.size() * sizeof(float));
  for (float v : t.data()) detail::put_le<float>(out, v);
  return out;
}

inline Tensor decode_tensor(std::string bytes, const std::string& origin) {
  detail::ByteReader in(std::move(bytes), origin);
  const std::string magic = in.take(8);
  if (!std::equal(magic.begin(), magic.end(), kTensorMagic.begin()))
    throw IoError(origin + ": bad tensor magic");
  const auto dtype = in.get<std::uint8_t>();
  if (dtype != 0) throw IoError(origin + ": unsupported dtype code " + std::to_string(dtype));
  const auto ndim = in.get<std::uint8_t>();
  const std::string reserved = in.take(6);
  if (reserved != std::string(6, '\0')) throw IoError(origin + ": reserved header bytes are not zero");
  Shape shape(ndim);
  for (auto& e : shape) e = in.get<std::uint32_t>();
  Tensor t(shape);
  in.read_floats(t.raw(), t.size());
  if (!in.at_end()) throw IoError(origin + ": trailing bytes after tensor payload");
  return t;
}

inline void save_tensor(const fs::path& path, const Tensor& t) { detail::write_file(path, encode_tensor(t)); }

inline Tensor load_tensor(const fs::path& path) {
  return decode_tensor(detail::read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// model archive

inline void save_model(const ModelGraph& model, const fs::path& dir) {
  validate_model(model);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create model directory " + dir.string() + ": " + ec.message());
  json layers = json::array();
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto& l = model.layers[i];
    json entry{{"name", l.name}, {"kind", kind_name(l.kind)}};
    if (l.kind == LayerKind::conv2d) {
      entry["stride"] = l.stride;
      entry["padding"] = l.padding;
      entry["kernel"] = {l.weights.dim(2), l.weights.dim(3)};
    }
    if (l.kind == LayerKind::adaptive_avg_pool) entry["out_size"] = l.out_size;
    if (l.has_params()) {
      const std::string stem = std::to_string(i) + "_" + l.name;
      entry["weights"] = stem + ".weight.tnsr";
      entry["bias"] = stem + ".bias.tnsr";
      save_tensor(dir / entry["weights"].get<std::string>(), l.weights);
      save_tensor(dir / entry["bias"].get<std::string>(), l.bias);
    }
    layers.push_back(std::move(entry));
  }
  json manifest{{"format_version", kFormatVersion},
                {"input_shape", model.input_shape},
                {"num_classes", model.num_classes},
                {"layers", std::move(layers)}};
  if (!model.class_names.empty()) manifest["class_names"] = model.class_names;
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline ModelGraph load_model(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  const json doc = detail::parse_json(manifest_path);
  detail::check_version(doc, manifest_path);
  ModelGraph model;
  model.input_shape = detail::field<Shape>(doc, "input_shape", manifest_path);
  model.num_classes = detail::field<std::size_t>(doc, "num_classes", manifest_path);
  if (doc.contains("class_names"))
    model.class_names = detail::field<std::vector<std::string>>(doc, "class_names", manifest_path);
  for (const auto& entry : detail::field<json>(doc, "layers", manifest_path)) {
    LayerSpec l;
    l.name = detail::field<std::string>(entry, "name", manifest_path);
    l.kind = kind_from_name(detail::field<std::string>(entry, "kind", manifest_path));
    if (l.kind == LayerKind::conv2d) {
      l.stride = detail::field<std::size_t>(entry, "stride", manifest_path);
      l.padding = detail::field<std::size_t>(entry, "padding", manifest_path);
    }
    if (l.kind == LayerKind::adaptive_avg_pool)
      l.out_size = detail::field<std::size_t>(entry, "out_size", manifest_path);
    if (l.has_params()) {
      l.weights = load_tensor(dir / detail::field<std::string>(entry, "weights", manifest_path));
      l.bias = load_tensor(dir / detail::field<std::string>(entry, "bias", manifest_path));
      if (l.kind == LayerKind::conv2d && entry.contains("kernel")) {
        const auto k = detail::field<std::vector<std::size_t>>(entry, "kernel", manifest_path);
        require(l.weights.rank() == 4 && k.size() == 2 && k[0] == l.weights.dim(2) &&
                    k[1] == l.weights.dim(3),
                l.name + ": declared kernel extents do not match weight tensor");
      }
    }
    model.layers.push_back(std::move(l));
  }
  validate_model(model);
  return model;
}

// ---------------------------------------------------------------------------
// annotations

inline json annotation_to_json(const SubgraphAnnotation& a) {
  json retained = json::object();
  for (const auto& [layer, filters] : a.retained) retained[std::to_string(layer)] = filters;
  json doc{{"format_version", kFormatVersion},
           {"split_layer_M", a.split_layer},
           {"r_L", a.r_L},
           {"r_M", a.r_M},
           {"recorded_accuracy", a.recorded_accuracy},
           {"retained", std::move(retained)}};
  if (a.cluster_id == SubgraphAnnotation::kAllClusters)
    doc["cluster_id"] = "ALL";
  else
    doc["cluster_id"] = a.cluster_id;
  return doc;
}

inline SubgraphAnnotation annotation_from_json(const json& doc, const fs::path& origin) {
  detail::check_version(doc, origin);
  SubgraphAnnotation a;
  const auto& id = doc.at("cluster_id");
  if (id.is_string()) {
    if (id.get<std::string>() != "ALL") throw IoError(origin.string() + ": bad cluster_id");
    a.cluster_id = SubgraphAnnotation::kAllClusters;
  } else {
    a.cluster_id = detail::field<std::int64_t>(doc, "cluster_id", origin);
  }
  a.split_layer = detail::field<std::size_t>(doc, "split_layer_M", origin);
  a.r_L = detail::field<double>(doc, "r_L", origin);
  a.r_M = detail::field<double>(doc, "r_M", origin);
  a.recorded_accuracy = detail::field<double>(doc, "recorded_accuracy", origin);
  const json retained = detail::field<json>(doc, "retained", origin);
  if (!retained.is_object()) throw IoError(origin.string() + ": 'retained' must be an object");
  for (const auto& [key, filters] : retained.items()) {
    std::size_t layer = 0;
    try {
      std::size_t used = 0;
      layer = std::stoul(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      throw IoError(origin.string() + ": bad layer key '" + key + "'");
    }
    if (!filters.is_array()) throw IoError(origin.string() + ": retained list for layer " + key + " is not an array");
    try {
      a.retained[layer] = filters.get<std::vector<std::size_t>>();
    } catch (const json::exception&) {
      throw IoError(origin.string() + ": bad retained list for layer " + key);
    }
  }
  for (const auto& [layer, filters] : a.retained) {
    require(!filters.empty(), origin.string() + ": empty retained list for layer " + std::to_string(layer));
    for (std::size_t i = 1; i < filters.size(); ++i)
      require(filters[i] > filters[i - 1],
              origin.string() + ": retained indices must be strictly increasing");
  }
  require(a.r_L > 0.0 && a.r_L <= 1.0 && a.r_M > 0.0 && a.r_M <= 1.0,
          origin.string() + ": retention fractions must lie in (0,1]");
  return a;
}

inline void save_annotation(const SubgraphAnnotation& a, const fs::path& path) {
  detail::write_file(path, annotation_to_json(a).dump(2) + "\n");
}

inline SubgraphAnnotation load_annotation(const fs::path& path) {
  return annotation_from_json(detail::parse_json(path), path);
}

// ---------------------------------------------------------------------------
// cluster maps

inline json cluster_map_to_json(const ClusterMap& map) {
  json clusters = json::array();
  for (const auto& c : map.clusters) clusters.push_back({{"id", c.id}, {"name", c.name}, {"classes", c.classes}});
  return json{{"clusters", std::move(clusters)}};
}

inline ClusterMap cluster_map_from_json(const json& doc, const fs::path& origin) {
  ClusterMap map;
  const json clusters = detail::field<json>(doc, "clusters", origin);
  if (!clusters.is_array()) throw IoError(origin.string() + ": 'clusters' must be an array");
  for (const auto& entry : clusters) {
    SemanticCluster c;
    c.id = detail::field<std::size_t>(entry, "id", origin);
    c.name = entry.value("name", std::string{});
    c.classes = detail::field<std::vector<std::size_t>>(entry, "classes", origin);
    map.clusters.push_back(std::move(c));
  }
  map.validate(map.num_classes());
  return map;
}

inline void save_cluster_map(const ClusterMap& map, const fs::path& path) {
  detail::write_file(path, cluster_map_to_json(map).dump(2) + "\n");
}

inline ClusterMap load_cluster_map(const fs::path& path) {
  return cluster_map_from_json(detail::parse_json(path), path);
}

// ---------------------------------------------------------------------------
// datasets

inline void save_dataset(const Dataset& data, const fs::path& path) {
  require(data.images.rank() == 4 && data.images.dim(0) == data.labels.size(),
          "save_dataset: images/labels mismatch");
  std::string out;
  out.reserve(16 + data.images.size() * 4 + data.labels.size() * 2);
  for (std::size_t d = 0; d < 4; ++d) {
    require(data.images.dim(d) <= 0xFFFFFFFFULL, "dataset extent exceeds u32");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.images.dim(d)));
  }
  for (float v : data.images.data()) detail::put_le<float>(out, v);
  for (auto l : data.labels) {
    require(l <= 0xFFFF, "dataset label exceeds u16");
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(l));
  }
  detail::write_file(path, out);
}

inline Dataset load_dataset(const fs::path& path, std::string split = "") {
  detail::ByteReader in(detail::read_file(path), path.string());
  Shape shape(4);
  for (auto& e : shape) e = in.get<std::uint32_t>();
  Dataset data;
  data.images = Tensor(shape);
  in.read_floats(data.images.raw(), data.images.size());
  data.labels.resize(shape[0]);
  for (auto& l : data.labels) l = in.get<std::uint16_t>();
  if (!in.at_end()) throw IoError(path.string() + ": trailing bytes after dataset labels");
  data.split = split.empty() ? path.stem().string() : std::move(split);
  return data;
}

// ---------------------------------------------------------------------------
// score tables

inline json cluster_id_json(std::int64_t id) {
  return id == SubgraphAnnotation::kAllClusters ? json("ALL") : json(id);
}

inline json score_table_to_json(const ScoreTable& t) {
  return json{{"criterion", t.criterion}, {"layer", t.layer},     {"cluster", cluster_id_json(t.cluster_id)},
              {"k_prime", t.k_prime},     {"seed", t.seed},       {"scores", t.scores}};
}

inline ScoreTable score_table_from_json(const json& doc, const fs::path& origin) {
  ScoreTable t;
  t.criterion = detail::field<std::string>(doc, "criterion", origin);
  t.layer = detail::field<std::size_t>(doc, "layer", origin);
  const json c = detail::field<json>(doc, "cluster", origin);
  t.cluster_id = c.is_string() ? SubgraphAnnotation::kAllClusters : detail::field<std::int64_t>(doc, "cluster", origin);
  t.k_prime = doc.value("k_prime", std::size_t{0});
  t.seed = doc.value("seed", std::uint64_t{0});
  t.scores = detail::field<std::vector<double>>(doc, "scores", origin);
  return t;
}

inline void save_score_tables(const std::vector<ScoreTable>& tables, const fs::path& path) {
  json doc = json::array();
  for (const auto& t : tables) doc.push_back(score_table_to_json(t));
  detail::write_file(path, doc.dump(2) + "\n");
}

inline std::vector<ScoreTable> load_score_tables(const fs::path& path) {
  const json doc = detail::parse_json(path);
  if (!doc.is_array()) throw IoError(path.string() + ": expected an array of score tables");
  std::vector<ScoreTable> out;
  for (const auto& t : doc) out.push_back(score_table_from_json(t, path));
  return out;
}

}  // namespace seminf
