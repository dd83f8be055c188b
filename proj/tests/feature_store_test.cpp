#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "hypermatch/feature_store.hpp"
#include "test_util.hpp"

namespace {

using namespace hypermatch;

FeatureSet zero_set(std::uint32_t h, std::uint32_t w, std::uint32_t d, std::vector<std::uint32_t> layers) {
  FeatureSet fs;
  fs.image_id = "zeros";
  fs.grid = {h, w};
  for (auto idx : layers) {
    LayerFeatures l;
    l.layer_index = idx;
    l.patches = RowMatrixF::Zero(static_cast<Eigen::Index>(h) * w, d);
    l.cls = Eigen::VectorXf::Zero(d);
    fs.layers.push_back(std::move(l));
  }
  return fs;
}

std::uintmax_t header_bytes(const FeatureSet& fs) {
  // magic, version, layer count, H, W, D, indices, id (length + bytes), source h, w
  return 8 + 4 * 5 + 4 * fs.layers.size() + 4 + fs.image_id.size() + 8;
}

ErrorCategory category_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.category();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCategory::argument;
}

TEST(FeatureStore, ZeroTensorFileHasHeaderPlusFifteenFloats) {
  testutil::TempDir dir;
  const auto fs = zero_set(2, 2, 3, {1});
  const auto path = dir / "z.hfs";
  write_feature_file(fs, path);
  EXPECT_EQ(std::filesystem::file_size(path), header_bytes(fs) + 15 * sizeof(float));
  EXPECT_TRUE(bitwise_equal(read_feature_file(path), fs));
}

TEST(FeatureStore, FullScalePayloadSize) {
  testutil::TempDir dir;
  auto fs = zero_set(28, 28, 768, {1, 7, 9, 10});
  const auto path = dir / "big.hfs";
  write_feature_file(fs, path);
  EXPECT_EQ(std::filesystem::file_size(path) - header_bytes(fs), 4u * (784u * 768u + 768u) * sizeof(float));
  const auto h = read_feature_header(path);
  EXPECT_EQ(h.grid.height, 28u);
  EXPECT_EQ(h.grid.width, 28u);
  EXPECT_EQ(h.dim, 768u);
  EXPECT_EQ(h.layer_indices, (std::vector<std::uint32_t>{1, 7, 9, 10}));
}

TEST(FeatureStore, NanIsRejected) {
  testutil::TempDir dir;
  auto fs = zero_set(2, 2, 3, {1});
  fs.layers[0].patches(1, 2) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_EQ(category_of([&] { validate(fs); }), ErrorCategory::validation);
  EXPECT_EQ(category_of([&] { write_feature_file(fs, dir / "nan.hfs"); }), ErrorCategory::validation);
  EXPECT_FALSE(std::filesystem::exists(dir / "nan.hfs"));
}

TEST(FeatureStore, InvariantViolations) {
  auto fs = zero_set(2, 2, 3, {1, 2});
  auto bad_rows = fs;
  bad_rows.layers[1].patches = RowMatrixF::Zero(3, 3);
  EXPECT_EQ(category_of([&] { validate(bad_rows); }), ErrorCategory::validation);
  auto bad_dim = fs;
  bad_dim.layers[1].cls = Eigen::VectorXf::Zero(4);
  EXPECT_EQ(category_of([&] { validate(bad_dim); }), ErrorCategory::validation);
  auto zero_index = fs;
  zero_index.layers[0].layer_index = 0;
  EXPECT_EQ(category_of([&] { validate(zero_index); }), ErrorCategory::validation);
  auto no_layers = fs;
  no_layers.layers.clear();
  EXPECT_EQ(category_of([&] { validate(no_layers); }), ErrorCategory::validation);
}

TEST(FeatureStore, RandomRoundTripIsBitExact) {
  testutil::TempDir dir;
  std::mt19937_64 rng(7);
  auto fs = testutil::random_feature_set(rng, 3, 5, 11, 3, "query/α");
  fs.layers[0].patches(0, 0) = -0.0f;
  fs.source_resolution = {48, 80};
  write_feature_file(fs, dir / "r.hfs");
  const auto back = read_feature_file(dir / "r.hfs");
  EXPECT_TRUE(bitwise_equal(back, fs));
  EXPECT_TRUE(std::signbit(back.layers[0].patches(0, 0)));
  EXPECT_EQ(read_feature_header(dir / "r.hfs").image_id, "query/α");
}

TEST(FeatureStore, BadMagic) {
  testutil::TempDir dir;
  write_feature_file(zero_set(2, 2, 3, {1}), dir / "a.hfs");
  auto bytes = slurp(dir / "a.hfs");
  std::fill_n(bytes.begin(), 8, 'X');
  EXPECT_EQ(category_of([&] { parse_feature_bytes(bytes, "x"); }), ErrorCategory::bad_magic);
}

TEST(FeatureStore, BadVersion) {
  testutil::TempDir dir;
  write_feature_file(zero_set(2, 2, 3, {1}), dir / "a.hfs");
  auto bytes = slurp(dir / "a.hfs");
  bytes[8] = 9;
  EXPECT_EQ(category_of([&] { parse_feature_bytes(bytes, "x"); }), ErrorCategory::bad_version);
}

TEST(FeatureStore, TruncatedPayload) {
  testutil::TempDir dir;
  std::mt19937_64 rng(1);
  const auto fs = testutil::random_feature_set(rng, 28, 28, 8, 1);
  const auto path = dir / "t.hfs";
  write_feature_file(fs, path);
  // Keep the header and 700 of the 784 patch rows.
  std::filesystem::resize_file(path, header_bytes(fs) + 700u * 8u * sizeof(float));
  try {
    read_feature_file(path);
    FAIL() << "expected truncation";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::truncated);
    EXPECT_NE(std::string(e.what()).find("t.hfs"), std::string::npos);
  }
  std::filesystem::resize_file(path, 20);
  EXPECT_EQ(category_of([&] { read_feature_file(path); }), ErrorCategory::truncated);
}

TEST(FeatureStore, TrailingBytesAreRejected) {
  testutil::TempDir dir;
  write_feature_file(zero_set(2, 2, 3, {1}), dir / "a.hfs");
  {
    std::ofstream out(dir / "a.hfs", std::ios::binary | std::ios::app);
    out.put('\0');
  }
  EXPECT_EQ(category_of([&] { read_feature_file(dir / "a.hfs"); }), ErrorCategory::dimension_mismatch);
}

TEST(FeatureStore, MissingFile) {
  testutil::TempDir dir;
  EXPECT_EQ(category_of([&] { read_feature_file(dir / "nope.hfs"); }), ErrorCategory::io);
}

TEST(FeatureStore, NonFinitePayloadIsFormatError) {
  testutil::TempDir dir;
  const auto fs = zero_set(2, 2, 3, {1});
  write_feature_file(fs, dir / "a.hfs");
  auto bytes = slurp(dir / "a.hfs");
  const float inf = std::numeric_limits<float>::infinity();
  std::memcpy(bytes.data() + header_bytes(fs), &inf, sizeof inf);
  EXPECT_EQ(category_of([&] { parse_feature_bytes(bytes, "x"); }), ErrorCategory::format);
}

}  // namespace
