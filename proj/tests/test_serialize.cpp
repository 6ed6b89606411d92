#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "seminf/serialize.hpp"

using namespace seminf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("seminf_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST(TensorFile, HeaderLayoutIsBitExact) {
  const Tensor t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  const std::string bytes = encode_tensor(t);
  ASSERT_EQ(bytes.size(), 8U + 1 + 1 + 6 + 2 * 4 + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 8), "SINFTNSR");
  EXPECT_EQ(bytes[8], '\0');
  EXPECT_EQ(bytes[9], '\2');
  EXPECT_EQ(bytes.substr(10, 6), std::string(6, '\0'));
  EXPECT_EQ(bytes.substr(16, 4), std::string("\x02\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(20, 4), std::string("\x03\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(24, 4), std::string("\x00\x00\x80\x3f", 4));  // 1.0f
  EXPECT_EQ(decode_tensor(bytes, "mem"), t);
}

TEST(TensorFile, RejectsCorruption) {
  const std::string good = encode_tensor(Tensor({4}, 1.0F));
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_tensor(bad_magic, "mem"), IoError);
  std::string bad_dtype = good;
  bad_dtype[8] = 3;
  EXPECT_THROW(decode_tensor(bad_dtype, "mem"), IoError);
  EXPECT_THROW(decode_tensor(good.substr(0, good.size() - 1), "mem"), IoError);
  EXPECT_THROW(decode_tensor(good + "x", "mem"), IoError);
}

TEST(ModelArchive, RoundTripGivesBitIdenticalLogits) {
  const auto dir = scratch("model");
  const auto m = seminf::testing::random_tiny_model(7);
  save_model(m, dir / "m");
  const auto loaded = load_model(dir / "m");
  EXPECT_EQ(loaded, m);
  std::mt19937_64 rng(7);
  Shape s = m.input_shape;
  s.insert(s.begin(), 3);
  const Tensor x = seminf::testing::random_tensor(s, rng);
  EXPECT_EQ(forward_full(loaded, x).logits, forward_full(m, x).logits);
  // re-save is byte-identical
  save_model(loaded, dir / "m2");
  EXPECT_EQ(bytes_of(dir / "m" / "manifest.json"), bytes_of(dir / "m2" / "manifest.json"));
  fs::remove_all(dir);
}

TEST(ModelArchive, CorruptedTensorHeaderIsRejected) {
  const auto dir = scratch("corrupt");
  const auto m = seminf::testing::random_tiny_model(8);
  save_model(m, dir);
  fs::path victim;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".tnsr") victim = e.path();
  ASSERT_FALSE(victim.empty());
  std::string bytes = bytes_of(victim);
  bytes[3] ^= 0x55;
  std::ofstream(victim, std::ios::binary | std::ios::trunc) << bytes;
  EXPECT_THROW(load_model(dir), IoError);
  fs::remove_all(dir);
}

TEST(ModelArchive, VersionMismatchAndInvariantViolationAreRejected) {
  const auto dir = scratch("version");
  const auto m = seminf::testing::random_tiny_model(9);
  save_model(m, dir);
  auto manifest = json::parse(bytes_of(dir / "manifest.json"));
  manifest["format_version"] = 99;
  std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump();
  EXPECT_THROW(load_model(dir), IoError);
  manifest["format_version"] = kFormatVersion;
  manifest["num_classes"] = 1234;
  std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump();
  EXPECT_THROW(load_model(dir), ValidationError);
  EXPECT_THROW(load_model(dir / "missing"), IoError);
  fs::remove_all(dir);
}

TEST(AnnotationFile, RoundTripIsStructurallyEqual) {
  const auto dir = scratch("annotation");
  const auto m = seminf::testing::random_tiny_model(10);
  std::mt19937_64 rng(10);
  auto a = seminf::testing::random_annotation(m, m.conv_layers().front(), rng, 0.5);
  a.cluster_id = 3;
  a.r_L = 0.7;
  a.r_M = 0.1;
  a.recorded_accuracy = 0.8125;
  save_annotation(a, dir / "a.json");
  EXPECT_EQ(load_annotation(dir / "a.json"), a);
  a.cluster_id = SubgraphAnnotation::kAllClusters;
  save_annotation(a, dir / "all.json");
  EXPECT_EQ(json::parse(bytes_of(dir / "all.json"))["cluster_id"], "ALL");
  EXPECT_EQ(load_annotation(dir / "all.json"), a);
  fs::remove_all(dir);
}

TEST(AnnotationFile, RejectsInvalidContent) {
  const auto dir = scratch("annotation_bad");
  json doc{{"format_version", 1}, {"cluster_id", 0}, {"split_layer_M", 0}, {"r_L", 0.5}, {"r_M", 0.5},
           {"recorded_accuracy", 0.5}, {"retained", {{"0", {2, 1}}}}};
  std::ofstream(dir / "a.json") << doc.dump();
  EXPECT_THROW(load_annotation(dir / "a.json"), ValidationError);
  doc["retained"] = {{"zero", {1}}};
  std::ofstream(dir / "a.json", std::ios::trunc) << doc.dump();
  EXPECT_THROW(load_annotation(dir / "a.json"), IoError);
  fs::remove_all(dir);
}

TEST(ClusterMapFile, RoundTripAndPartitionCheck) {
  const auto dir = scratch("clusters");
  ClusterMap map{{{0, "Fishes", {2, 3, 4, 5, 6}}, {1, "Rest", {0, 1}}}};
  save_cluster_map(map, dir / "c.json");
  const auto loaded = load_cluster_map(dir / "c.json");
  ASSERT_EQ(loaded.size(), 2U);
  EXPECT_EQ(loaded.clusters[0].name, "Fishes");
  EXPECT_EQ(loaded.clusters[0].classes, (std::vector<std::size_t>{2, 3, 4, 5, 6}));
  EXPECT_EQ(loaded.class_to_cluster()[4], 0U);
  ClusterMap overlapping{{{0, "a", {0, 1}}, {1, "b", {1, 2}}}};
  EXPECT_THROW(overlapping.validate(3), ValidationError);
  ClusterMap gap{{{0, "a", {0}}, {1, "b", {2}}}};
  EXPECT_THROW(gap.validate(3), ValidationError);
  fs::remove_all(dir);
}

TEST(DatasetFile, LayoutAndRoundTrip) {
  const auto dir = scratch("dataset");
  std::mt19937_64 rng(11);
  Dataset d{seminf::testing::random_tensor({3, 2, 2, 2}, rng), {0, 7, 65535}, "train"};
  save_dataset(d, dir / "train.bin");
  const std::string bytes = bytes_of(dir / "train.bin");
  EXPECT_EQ(bytes.size(), 16U + 24 * 4 + 3 * 2);
  EXPECT_EQ(bytes.substr(0, 4), std::string("\x03\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(bytes.size() - 2), std::string("\xff\xff", 2));
  const auto loaded = load_dataset(dir / "train.bin");
  EXPECT_EQ(loaded.images, d.images);
  EXPECT_EQ(loaded.labels, d.labels);
  EXPECT_EQ(loaded.split, "train");
  std::ofstream(dir / "short.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  EXPECT_THROW(load_dataset(dir / "short.bin"), IoError);
  fs::remove_all(dir);
}
