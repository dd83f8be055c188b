#pragma once

// Multi-layer memory bank of normal support tokens, hyperedge reconstruction
// of query patches and the patch-grid anomaly map.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "hypermatch/binary_io.hpp"
#include "hypermatch/error.hpp"
#include "hypermatch/feature_store.hpp"
#include "hypermatch/file_util.hpp"
#include "hypermatch/simplex_lookup.hpp"

namespace hypermatch {

enum class Normalization : std::uint32_t { none = 0, l2 = 1 };

inline std::string to_string(Normalization n) { return n == Normalization::l2 ? "l2" : "none"; }

inline Normalization parse_normalization(const std::string& s) {
  if (s == "l2") return Normalization::l2;
  if (s == "none") return Normalization::none;
  fail(ErrorCategory::argument, "unknown normalization '" + s + "' (expected l2|none)");
}

struct BankLayer {
  std::uint32_t layer_index = 0;
  RowMatrixF patches;  // (K * N_p) x D, image-major then row-major grid order
  RowMatrixF cls;      // K x D
};

struct MemoryBank {
  std::vector<BankLayer> layers;
  std::size_t shot_count = 0;
  GridShape grid;
  Normalization normalization = Normalization::l2;
  std::vector<std::string> support_ids;

  std::size_t dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().patches.cols()); }
  std::vector<std::uint32_t> layer_indices() const {
    std::vector<std::uint32_t> out;
    for (const auto& l : layers) out.push_back(l.layer_index);
    return out;
  }
};

struct AnomalyMap {
  std::string image_id;
  RowMatrixD grid;  // H_p x W_p cosine distances in [0, 2]
  std::vector<std::uint32_t> layer_set;
};

/// Scales every row to unit Euclidean norm (norm taken in binary64).
/// All-zero rows are left as they are.
inline void l2_normalize_rows(RowMatrixF& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double norm = m.row(r).cast<double>().norm();
    if (norm > 0.0) m.row(r) = (m.row(r).cast<double>() / norm).cast<float>();
  }
}

/// Returns a copy of `fs` with tokens normalized the way a bank with
/// `normalization` stores them.
inline FeatureSet normalized(const FeatureSet& fs, Normalization normalization) {
  FeatureSet out = fs;
  if (normalization == Normalization::l2) {
    for (auto& layer : out.layers) {
      l2_normalize_rows(layer.patches);
      RowMatrixF cls = layer.cls.transpose();
      l2_normalize_rows(cls);
      layer.cls = cls.transpose();
    }
  }
  return out;
}

/// Concatenates support tokens per layer, in input order.
inline MemoryBank build_memory_bank(std::span<const FeatureSet> supports, Normalization normalization) {
  if (supports.empty()) fail(ErrorCategory::argument, "build_memory_bank: empty support list");
  const auto& first = supports.front();
  validate(first);
  const auto n_p = static_cast<Eigen::Index>(first.patch_count());
  const auto dim = static_cast<Eigen::Index>(first.dim());
  const auto k = static_cast<Eigen::Index>(supports.size());
  for (const auto& s : supports) {
    validate(s);
    if (s.grid != first.grid || static_cast<Eigen::Index>(s.dim()) != dim ||
        s.layer_indices() != first.layer_indices()) {
      fail(ErrorCategory::dimension_mismatch, "build_memory_bank: support '" + s.image_id +
                                                  "' differs from '" + first.image_id +
                                                  "' in grid, token dimension or layer set");
    }
  }
  MemoryBank bank;
  bank.shot_count = supports.size();
  bank.grid = first.grid;
  bank.normalization = normalization;
  for (const auto& s : supports) bank.support_ids.push_back(s.image_id);
  bank.layers.resize(first.layers.size());
  for (std::size_t l = 0; l < first.layers.size(); ++l) {
    auto& layer = bank.layers[l];
    layer.layer_index = first.layers[l].layer_index;
    layer.patches.resize(k * n_p, dim);
    layer.cls.resize(k, dim);
    for (Eigen::Index i = 0; i < k; ++i) {
      const auto& src = supports[static_cast<std::size_t>(i)].layers[l];
      layer.patches.middleRows(i * n_p, n_p) = src.patches;
      layer.cls.row(i) = src.cls.transpose();
    }
    if (normalization == Normalization::l2) {
      l2_normalize_rows(layer.patches);
      l2_normalize_rows(layer.cls);
    }
  }
  return bank;
}

namespace detail {

inline double cosine(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

// Row-wise reconstruction against one bank layer; `query` already in the
// bank's normalization. Calls sink(row, reconstruction) for each query row.
template <typename Sink>
void reconstruct_rows(const RowMatrixD& query, const BankLayer& bank_layer, const LookupStrategy& strategy,
                      Sink&& sink) {
  if (query.cols() != bank_layer.patches.cols()) {
    fail(ErrorCategory::dimension_mismatch, "hyperedge_reconstruct: query D=" + std::to_string(query.cols()) +
                                                " vs bank D=" + std::to_string(bank_layer.patches.cols()));
  }
  const RowMatrixD support = bank_layer.patches.cast<double>();
  const RowMatrixD similarity = query * support.transpose();
  const auto m = static_cast<std::size_t>(support.rows());
  std::vector<double> weights(m);
  LookupScratch scratch;
  Eigen::RowVectorXd edge(support.cols());
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    apply_lookup_into(strategy, {similarity.row(i).data(), m}, weights, scratch);
    edge.setZero();
    for (std::size_t u = 0; u < m; ++u) {
      if (weights[u] > 0.0) edge.noalias() += weights[u] * support.row(static_cast<Eigen::Index>(u));
    }
    sink(i, edge);
  }
}

}  // namespace detail

/// Hyperedge reconstruction E: row i is w_i * P with w_i = strategy(q_i P^T).
/// The query layer is used as given (no normalization is applied here).
inline RowMatrixD hyperedge_reconstruct(const LayerFeatures& query_layer, const BankLayer& bank_layer,
                                        const LookupStrategy& strategy) {
  const RowMatrixD query = query_layer.patches.cast<double>();
  RowMatrixD out(query.rows(), bank_layer.patches.cols());
  detail::reconstruct_rows(query, bank_layer, strategy,
                           [&](Eigen::Index i, const Eigen::RowVectorXd& e) { out.row(i) = e; });
  return out;
}

inline void check_compatible(const FeatureSet& query, const MemoryBank& bank) {
  if (query.layer_indices() != bank.layer_indices()) {
    fail(ErrorCategory::dimension_mismatch, "query '" + query.image_id + "' layer set differs from the bank's");
  }
  if (query.grid != bank.grid) {
    fail(ErrorCategory::dimension_mismatch, "query '" + query.image_id + "' grid differs from the bank's");
  }
  if (query.dim() != bank.dim()) {
    fail(ErrorCategory::dimension_mismatch, "query '" + query.image_id + "' token dimension " +
                                                std::to_string(query.dim()) + " vs bank " + std::to_string(bank.dim()));
  }
}

/// Mean over layers of the cosine distance between each query patch and its
/// hyperedge reconstruction, laid out on the H_p x W_p grid.
inline AnomalyMap anomaly_map(const FeatureSet& query, const MemoryBank& bank, const LookupStrategy& strategy) {
  validate(query);
  check_compatible(query, bank);
  const FeatureSet q = normalized(query, bank.normalization);
  const auto n_p = static_cast<Eigen::Index>(q.patch_count());
  Eigen::VectorXd scores = Eigen::VectorXd::Zero(n_p);
  for (std::size_t l = 0; l < q.layers.size(); ++l) {
    const RowMatrixD patches = q.layers[l].patches.cast<double>();
    detail::reconstruct_rows(patches, bank.layers[l], strategy, [&](Eigen::Index i, const Eigen::RowVectorXd& e) {
      scores[i] += 1.0 - detail::cosine(patches.row(i), e);
    });
  }
  scores /= static_cast<double>(q.layers.size());

  AnomalyMap map;
  map.image_id = query.image_id;
  map.layer_set = query.layer_indices();
  map.grid = Eigen::Map<const RowMatrixD>(scores.data(), q.grid.height, q.grid.width);
  return map;
}

/// Bilinear resize (half-pixel centres, edge clamped) followed by an optional
/// separable Gaussian blur with standard deviation `sigma` pixels.
inline RowMatrixD upsample_map(const RowMatrixD& grid, std::size_t out_h, std::size_t out_w, double sigma) {
  if (out_h == 0 || out_w == 0) fail(ErrorCategory::argument, "upsample_map: output dimensions must be positive");
  if (grid.size() == 0) fail(ErrorCategory::argument, "upsample_map: empty map");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) fail(ErrorCategory::argument, "upsample_map: sigma must be >= 0");
  const auto in_h = grid.rows();
  const auto in_w = grid.cols();

  const auto axis = [](std::size_t out, Eigen::Index in, std::size_t o) {
    double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<Eigen::Index>(std::floor(src));
    const auto hi = std::min<Eigen::Index>(lo + 1, in - 1);
    return std::tuple{lo, hi, src - static_cast<double>(lo)};
  };

  RowMatrixD out(static_cast<Eigen::Index>(out_h), static_cast<Eigen::Index>(out_w));
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto [y0, y1, fy] = axis(out_h, in_h, y);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto [x0, x1, fx] = axis(out_w, in_w, x);
      const double top = grid(y0, x0) * (1.0 - fx) + grid(y0, x1) * fx;
      const double bottom = grid(y1, x0) * (1.0 - fx) + grid(y1, x1) * fx;
      out(static_cast<Eigen::Index>(y), static_cast<Eigen::Index>(x)) = top * (1.0 - fy) + bottom * fy;
    }
  }
  if (sigma == 0.0) return out;

  const auto radius = static_cast<Eigen::Index>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (Eigen::Index i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : kernel) w /= total;

  const auto rows = out.rows();
  const auto cols = out.cols();
  RowMatrixD tmp(rows, cols);
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      double acc = 0.0;
      for (Eigen::Index i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] * out(y, std::clamp<Eigen::Index>(x + i, 0, cols - 1));
      }
      tmp(y, x) = acc;
    }
  }
  for (Eigen::Index y = 0; y < rows; ++y) {
    for (Eigen::Index x = 0; x < cols; ++x) {
      double acc = 0.0;
      for (Eigen::Index i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp(std::clamp<Eigen::Index>(y + i, 0, rows - 1), x);
      }
      out(y, x) = acc;
    }
  }
  return out;
}

// ---- bank file --------------------------------------------------------------
// "HYPBANK\0" | version | layer_count | K | H_p | W_p | D | normalization
// | layer_indices[layer_count] | K support ids (length-prefixed)
// then per layer: patches (K*N_p x D) and CLS (K x D), binary32 LE.

inline constexpr std::array<char, 8> kBankMagic{'H', 'Y', 'P', 'B', 'A', 'N', 'K', '\0'};
inline constexpr std::uint32_t kBankFormatVersion = 1;

inline void write_bank_file(const MemoryBank& bank, const std::filesystem::path& path) {
  if (bank.layers.empty() || bank.shot_count == 0) fail(ErrorCategory::validation, "write_bank_file: empty bank");
  write_atomically(path, [&](std::ostream& os) {
    os.write(kBankMagic.data(), kBankMagic.size());
    binary::put_u32(os, kBankFormatVersion);
    binary::put_u32(os, static_cast<std::uint32_t>(bank.layers.size()));
    binary::put_u32(os, static_cast<std::uint32_t>(bank.shot_count));
    binary::put_u32(os, bank.grid.height);
    binary::put_u32(os, bank.grid.width);
    binary::put_u32(os, static_cast<std::uint32_t>(bank.dim()));
    binary::put_u32(os, static_cast<std::uint32_t>(bank.normalization));
    for (const auto& l : bank.layers) binary::put_u32(os, l.layer_index);
    for (std::size_t k = 0; k < bank.shot_count; ++k) {
      binary::put_string(os, k < bank.support_ids.size() ? bank.support_ids[k] : std::string{});
    }
    for (const auto& l : bank.layers) {
      binary::put_f32s(os, {l.patches.data(), static_cast<std::size_t>(l.patches.size())});
      binary::put_f32s(os, {l.cls.data(), static_cast<std::size_t>(l.cls.size())});
    }
  });
}

inline MemoryBank read_bank_file(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const std::string source = path.string();
  binary::Reader in(bytes, source);
  std::array<char, 8> magic{};
  in.bytes(magic.data(), magic.size());
  if (magic != kBankMagic) fail(ErrorCategory::bad_magic, source + ": not a bank file (bad magic)");
  if (const auto v = in.u32(); v != kBankFormatVersion) {
    fail(ErrorCategory::bad_version, source + ": unsupported bank version " + std::to_string(v));
  }
  const auto layer_count = in.u32();
  MemoryBank bank;
  bank.shot_count = in.u32();
  bank.grid.height = in.u32();
  bank.grid.width = in.u32();
  const auto dim = in.u32();
  const auto norm = in.u32();
  if (layer_count == 0 || layer_count > 4096 || bank.shot_count == 0 || bank.shot_count > (1u << 20) ||
      bank.grid.height == 0 || bank.grid.width == 0 || dim == 0) {
    fail(ErrorCategory::dimension_mismatch, source + ": header declares an invalid dimension");
  }
  if (norm > 1) fail(ErrorCategory::format, source + ": unknown normalization code " + std::to_string(norm));
  bank.normalization = static_cast<Normalization>(norm);
  std::vector<std::uint32_t> indices(layer_count);
  for (auto& i : indices) i = in.u32();
  for (std::size_t k = 0; k < bank.shot_count; ++k) bank.support_ids.push_back(in.string());
  const std::uint64_t rows = std::uint64_t{bank.shot_count} * bank.grid.cells();
  const std::uint64_t expected = (rows * dim + std::uint64_t{bank.shot_count} * dim) * sizeof(float) * layer_count;
  if (in.remaining() < expected) fail(ErrorCategory::truncated, source + ": bank payload truncated");
  if (in.remaining() > expected) fail(ErrorCategory::dimension_mismatch, source + ": bank payload larger than header implies");
  bank.layers.resize(layer_count);
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    auto& layer = bank.layers[l];
    layer.layer_index = indices[l];
    layer.patches.resize(static_cast<Eigen::Index>(rows), dim);
    layer.cls.resize(static_cast<Eigen::Index>(bank.shot_count), dim);
    in.f32s({layer.patches.data(), static_cast<std::size_t>(layer.patches.size())});
    in.f32s({layer.cls.data(), static_cast<std::size_t>(layer.cls.size())});
    if (!layer.patches.allFinite() || !layer.cls.allFinite()) {
      fail(ErrorCategory::format, source + ": non-finite value in layer " + std::to_string(layer.layer_index));
    }
  }
  return bank;
}

// ---- anomaly map file ---------------------------------------------------------
// "HYPAMAP\0" | version | H_p | W_p | layer_count | layer_set | image_id
// then H_p*W_p binary64 LE scores in row-major grid order.

inline constexpr std::array<char, 8> kMapMagic{'H', 'Y', 'P', 'A', 'M', 'A', 'P', '\0'};
inline constexpr std::uint32_t kMapFormatVersion = 1;

inline void write_map_file(const AnomalyMap& map, const std::filesystem::path& path) {
  if (map.grid.size() == 0) fail(ErrorCategory::validation, "write_map_file: empty map");
  write_atomically(path, [&](std::ostream& os) {
    os.write(kMapMagic.data(), kMapMagic.size());
    binary::put_u32(os, kMapFormatVersion);
    binary::put_u32(os, static_cast<std::uint32_t>(map.grid.rows()));
    binary::put_u32(os, static_cast<std::uint32_t>(map.grid.cols()));
    binary::put_u32(os, static_cast<std::uint32_t>(map.layer_set.size()));
    for (auto l : map.layer_set) binary::put_u32(os, l);
    binary::put_string(os, map.image_id);
    binary::put_f64s(os, {map.grid.data(), static_cast<std::size_t>(map.grid.size())});
  });
}

inline AnomalyMap read_map_file(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const std::string source = path.string();
  binary::Reader in(bytes, source);
  std::array<char, 8> magic{};
  in.bytes(magic.data(), magic.size());
  if (magic != kMapMagic) fail(ErrorCategory::bad_magic, source + ": not an anomaly map file (bad magic)");
  if (const auto v = in.u32(); v != kMapFormatVersion) {
    fail(ErrorCategory::bad_version, source + ": unsupported map version " + std::to_string(v));
  }
  const auto h = in.u32();
  const auto w = in.u32();
  const auto layers = in.u32();
  if (h == 0 || w == 0 || layers > 4096) fail(ErrorCategory::dimension_mismatch, source + ": invalid map dimensions");
  AnomalyMap map;
  map.layer_set.resize(layers);
  for (auto& l : map.layer_set) l = in.u32();
  map.image_id = in.string();
  const std::uint64_t expected = std::uint64_t{h} * w * sizeof(double);
  if (in.remaining() < expected) fail(ErrorCategory::truncated, source + ": map payload truncated");
  if (in.remaining() > expected) fail(ErrorCategory::dimension_mismatch, source + ": map payload larger than header implies");
  map.grid.resize(h, w);
  in.f64s({map.grid.data(), static_cast<std::size_t>(map.grid.size())});
  return map;
}

}  // namespace hypermatch
