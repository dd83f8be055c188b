#pragma once

// On-disk and in-memory representation of per-image multi-layer ViT tokens.
//
// File layout (all integers u32 little-endian, all reals binary32 LE):
//   magic "HYPFSAD\0" | version | layer_count | H_p | W_p | D
//   | layer_indices[layer_count] | image_id (u32 length + UTF-8 bytes)
//   | source_height | source_width
//   then per layer: patches (H_p*W_p rows x D, row-major) followed by CLS (D).
// Patch rows are in row-major grid order (top-left to bottom-right).

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "hypermatch/binary_io.hpp"
#include "hypermatch/error.hpp"
#include "hypermatch/file_util.hpp"

namespace hypermatch {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::array<char, 8> kFeatureMagic{'H', 'Y', 'P', 'F', 'S', 'A', 'D', '\0'};
inline constexpr std::uint32_t kFeatureFormatVersion = 1;

struct GridShape {
  std::uint32_t height = 0;  // H_p
  std::uint32_t width = 0;   // W_p

  std::size_t cells() const { return std::size_t{height} * width; }
  bool operator==(const GridShape&) const = default;
};

struct LayerFeatures {
  std::uint32_t layer_index = 1;  // 1-based backbone layer
  RowMatrixF patches;             // N_p x D
  Eigen::VectorXf cls;            // D
};

struct FeatureSet {
  std::string image_id;
  GridShape grid;
  std::vector<LayerFeatures> layers;
  std::pair<std::uint32_t, std::uint32_t> source_resolution{0, 0};  // (height, width) px

  std::size_t dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().cls.size()); }
  std::size_t patch_count() const { return grid.cells(); }

  std::vector<std::uint32_t> layer_indices() const {
    std::vector<std::uint32_t> out;
    out.reserve(layers.size());
    for (const auto& l : layers) out.push_back(l.layer_index);
    return out;
  }
};

namespace detail {

inline bool all_finite(const float* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) return false;
  }
  return true;
}

}  // namespace detail

/// Throws a validation error describing the first violated FeatureSet invariant.
inline void validate(const FeatureSet& fs) {
  const std::string who = "feature set '" + fs.image_id + "'";
  if (fs.layers.empty()) fail(ErrorCategory::validation, who + ": no layers");
  if (fs.grid.height == 0 || fs.grid.width == 0) fail(ErrorCategory::validation, who + ": empty grid");
  const auto n_p = static_cast<Eigen::Index>(fs.grid.cells());
  const auto d = fs.layers.front().cls.size();
  if (d == 0) fail(ErrorCategory::validation, who + ": zero token dimension");
  for (const auto& layer : fs.layers) {
    const std::string where = who + " layer " + std::to_string(layer.layer_index);
    if (layer.layer_index == 0) fail(ErrorCategory::validation, where + ": layer index must be 1-based");
    if (layer.patches.rows() != n_p) {
      fail(ErrorCategory::validation, where + ": expected " + std::to_string(n_p) + " patch rows, got " +
                                          std::to_string(layer.patches.rows()));
    }
    if (layer.patches.cols() != d || layer.cls.size() != d) {
      fail(ErrorCategory::validation, where + ": token dimension differs across layers");
    }
    if (!detail::all_finite(layer.patches.data(), static_cast<std::size_t>(layer.patches.size())) ||
        !detail::all_finite(layer.cls.data(), static_cast<std::size_t>(layer.cls.size()))) {
      fail(ErrorCategory::validation, where + ": non-finite token value");
    }
  }
}

/// Bit-exact comparison (distinguishes +0/-0, unlike operator== on floats).
inline bool bitwise_equal(const FeatureSet& a, const FeatureSet& b) {
  if (a.image_id != b.image_id || a.grid != b.grid || a.source_resolution != b.source_resolution ||
      a.layers.size() != b.layers.size()) {
    return false;
  }
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    if (x.layer_index != y.layer_index || x.patches.rows() != y.patches.rows() ||
        x.patches.cols() != y.patches.cols() || x.cls.size() != y.cls.size()) {
      return false;
    }
    if (std::memcmp(x.patches.data(), y.patches.data(), sizeof(float) * x.patches.size()) != 0 ||
        std::memcmp(x.cls.data(), y.cls.data(), sizeof(float) * x.cls.size()) != 0) {
      return false;
    }
  }
  return true;
}

inline void write_feature_file(const FeatureSet& fs, const std::filesystem::path& path) {
  validate(fs);
  write_atomically(path, [&](std::ostream& os) {
    os.write(kFeatureMagic.data(), kFeatureMagic.size());
    binary::put_u32(os, kFeatureFormatVersion);
    binary::put_u32(os, static_cast<std::uint32_t>(fs.layers.size()));
    binary::put_u32(os, fs.grid.height);
    binary::put_u32(os, fs.grid.width);
    binary::put_u32(os, static_cast<std::uint32_t>(fs.dim()));
    for (const auto& l : fs.layers) binary::put_u32(os, l.layer_index);
    binary::put_string(os, fs.image_id);
    binary::put_u32(os, fs.source_resolution.first);
    binary::put_u32(os, fs.source_resolution.second);
    for (const auto& l : fs.layers) {
      binary::put_f32s(os, {l.patches.data(), static_cast<std::size_t>(l.patches.size())});
      binary::put_f32s(os, {l.cls.data(), static_cast<std::size_t>(l.cls.size())});
    }
  });
}

inline FeatureSet parse_feature_bytes(std::span<const char> bytes, const std::string& source) {
  binary::Reader in(bytes, source);
  std::array<char, 8> magic{};
  in.bytes(magic.data(), magic.size());
  if (magic != kFeatureMagic) fail(ErrorCategory::bad_magic, source + ": not a feature file (bad magic)");
  const auto version = in.u32();
  if (version != kFeatureFormatVersion) {
    fail(ErrorCategory::bad_version, source + ": unsupported format version " + std::to_string(version));
  }
  const auto layer_count = in.u32();
  FeatureSet fs;
  fs.grid.height = in.u32();
  fs.grid.width = in.u32();
  const auto dim = in.u32();
  if (layer_count == 0 || fs.grid.height == 0 || fs.grid.width == 0 || dim == 0) {
    fail(ErrorCategory::dimension_mismatch, source + ": header declares a zero dimension");
  }
  if (layer_count > 4096) fail(ErrorCategory::dimension_mismatch, source + ": implausible layer count");
  std::vector<std::uint32_t> indices(layer_count);
  for (auto& i : indices) i = in.u32();
  fs.image_id = in.string();
  fs.source_resolution.first = in.u32();
  fs.source_resolution.second = in.u32();

  const std::uint64_t n_p = std::uint64_t{fs.grid.height} * fs.grid.width;
  const std::uint64_t per_layer = (n_p * dim + dim) * sizeof(float);
  const std::uint64_t expected = per_layer * layer_count;
  if (in.remaining() < expected) {
    fail(ErrorCategory::truncated, source + ": payload has " + std::to_string(in.remaining()) + " bytes, header implies " +
                                       std::to_string(expected));
  }
  if (in.remaining() > expected) {
    fail(ErrorCategory::dimension_mismatch, source + ": payload larger than header dimensions imply");
  }
  fs.layers.resize(layer_count);
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    auto& layer = fs.layers[l];
    layer.layer_index = indices[l];
    layer.patches.resize(static_cast<Eigen::Index>(n_p), dim);
    layer.cls.resize(dim);
    in.f32s({layer.patches.data(), static_cast<std::size_t>(layer.patches.size())});
    in.f32s({layer.cls.data(), static_cast<std::size_t>(layer.cls.size())});
  }
  try {
    validate(fs);
  } catch (const Error& e) {
    fail(ErrorCategory::format, source + ": " + e.what());
  }
  return fs;
}

struct FeatureFileHeader {
  std::uint32_t format_version = kFeatureFormatVersion;
  GridShape grid;
  std::uint32_t dim = 0;
  std::vector<std::uint32_t> layer_indices;
  std::string image_id;
  std::pair<std::uint32_t, std::uint32_t> source_resolution{0, 0};
};

/// Reads only the header; the payload is not checked.
inline FeatureFileHeader read_feature_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCategory::io, "cannot open " + path.string());
  std::vector<char> head(1u << 16);
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  binary::Reader r(head, path.string());
  std::array<char, 8> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kFeatureMagic) fail(ErrorCategory::bad_magic, path.string() + ": not a feature file (bad magic)");
  FeatureFileHeader h;
  h.format_version = r.u32();
  if (h.format_version != kFeatureFormatVersion) {
    fail(ErrorCategory::bad_version, path.string() + ": unsupported format version " + std::to_string(h.format_version));
  }
  const auto layers = r.u32();
  h.grid.height = r.u32();
  h.grid.width = r.u32();
  h.dim = r.u32();
  if (layers == 0 || layers > 4096 || h.grid.height == 0 || h.grid.width == 0 || h.dim == 0) {
    fail(ErrorCategory::dimension_mismatch, path.string() + ": header declares an invalid dimension");
  }
  h.layer_indices.resize(layers);
  for (auto& i : h.layer_indices) i = r.u32();
  h.image_id = r.string();
  h.source_resolution.first = r.u32();
  h.source_resolution.second = r.u32();
  return h;
}

inline FeatureSet read_feature_file(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  return parse_feature_bytes(bytes, path.string());
}

}  // namespace hypermatch
