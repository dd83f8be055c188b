#pragma once

// Synthetic multi-layer feature sets with planted anomalies and exact ground
// truth, plus the ablation runner that sweeps one pipeline knob over them.
//
// Geometry per layer: an orthonormal set of n_clusters normal centres, one
// anomaly direction and one distractor direction. Normal patches are noisy
// copies of a centre; anomalous patches are pushed along the anomaly
// direction; distractor cells in support grids sit on the distractor
// direction. CLS tokens live in the span of the centres and are pushed along
// the anomaly direction for anomalous queries.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hypermatch/error.hpp"
#include "hypermatch/feature_store.hpp"
#include "hypermatch/image_io.hpp"
#include "hypermatch/manifest.hpp"
#include "hypermatch/memory_matching.hpp"
#include "hypermatch/metrics.hpp"
#include "hypermatch/parallel.hpp"
#include "hypermatch/scoring.hpp"

namespace hypermatch {

// Counter-based generator: output i of stream s is splitmix64 applied to a
// key derived from (seed, s) plus i times the golden-ratio increment.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(mix(seed ^ mix(stream + 0x632BE59BD9B4E019ull))) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t next_u64() { return mix(key_ + 0x9E3779B97F4A7C15ull * counter_++); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)); }

  /// Standard normal via Box-Muller (cosine branch only).
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t shots = 2;             // K
  std::uint32_t grid_h = 12;         // H_p
  std::uint32_t grid_w = 12;         // W_p
  std::uint32_t dim = 48;            // D
  std::size_t layer_count = 2;
  std::size_t n_clusters = 6;
  std::size_t query_count = 16;
  double anomaly_rate = 0.5;         // fraction of anomalous queries (rounded)
  std::size_t anomaly_cells = 6;
  double anomaly_shift = 0.6;
  std::size_t distractor_count = 8;  // per support image
  double noise_sigma = 0.4;          // expected Euclidean norm of the patch noise vector
  double cls_shift = 0.45;           // CLS displacement of anomalous queries
  double cls_noise_sigma = 0.5;      // expected Euclidean norm of the CLS noise vector
  double clutter_rate = 0.25;        // probability a query carries one isolated clutter cell
  double clutter_shift = 0.6;        // clutter displacement along a random direction
};

struct SynthCase {
  std::vector<FeatureSet> supports;
  std::vector<FeatureSet> queries;
  std::vector<std::uint8_t> image_labels;
  std::vector<MaskMatrix> pixel_masks;  // patch-grid masks, one per query
  std::vector<std::vector<std::uint8_t>> distractor_cells;  // per support, row-major over the grid
};

inline void validate(const SynthSpec& s) {
  const auto cells = std::size_t{s.grid_h} * s.grid_w;
  const auto bad = [](const std::string& m) { fail(ErrorCategory::argument, "synth: " + m); };
  if (s.shots == 0) bad("shots must be >= 1");
  if (cells == 0 || s.dim == 0 || s.layer_count == 0) bad("grid, dimension and layer count must be positive");
  if (s.n_clusters == 0) bad("n_clusters must be >= 1");
  if (s.n_clusters + 2 > s.dim) bad("n_clusters + 2 must not exceed D for the orthogonal construction");
  if (s.n_clusters + s.distractor_count > cells) bad("n_clusters + distractor_count exceeds the patch count");
  if (!(s.anomaly_rate >= 0.0 && s.anomaly_rate <= 1.0)) bad("anomaly_rate must be in [0, 1]");
  if (!(s.noise_sigma >= 0.0) || !(s.cls_noise_sigma >= 0.0) || !(s.anomaly_shift >= 0.0) || !(s.cls_shift >= 0.0) ||
      !(s.clutter_shift >= 0.0)) {
    bad("magnitudes must be >= 0");
  }
  if (!(s.clutter_rate >= 0.0 && s.clutter_rate <= 1.0)) bad("clutter_rate must be in [0, 1]");
  if (s.anomaly_rate > 0.0 && s.anomaly_cells == 0) bad("anomalous queries need anomaly_cells >= 1");
  const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(s.anomaly_cells))));
  if (s.anomaly_cells > 0 && (side > s.grid_w || (s.anomaly_cells + side - 1) / side > s.grid_h)) {
    bad("anomaly_cells does not fit in the grid");
  }
}

namespace detail {

enum class Stream : std::uint64_t {
  basis = 1, layout, support_noise, query_noise, cls_noise, labels, anomaly_place, distractor_place, clutter
};

inline std::uint64_t stream_id(Stream s, std::uint64_t a = 0, std::uint64_t b = 0) {
  return (static_cast<std::uint64_t>(s) << 48) ^ (a << 24) ^ b;
}

// Orthonormal rows via Gram-Schmidt on Gaussian draws.
inline RowMatrixD orthonormal_basis(std::size_t count, std::size_t dim, CounterRng& rng) {
  RowMatrixD basis(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < basis.rows(); ++i) {
    for (;;) {
      Eigen::RowVectorXd v(basis.cols());
      for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = rng.normal();
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index k = 0; k < i; ++k) v -= v.dot(basis.row(k)) * basis.row(k);
      }
      const double n = v.norm();
      if (n > 1e-6) {
        basis.row(i) = v / n;
        break;
      }
    }
  }
  return basis;
}

inline Eigen::RowVectorXf noisy_unit(const Eigen::RowVectorXd& base, double sigma, CounterRng& rng) {
  Eigen::RowVectorXd v = base;
  if (sigma > 0.0) {
    const double scale = sigma / std::sqrt(static_cast<double>(v.size()));
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] += scale * rng.normal();
  }
  const double n = v.norm();
  if (n > 0.0) v /= n;
  return v.cast<float>();
}

struct LayerGeometry {
  RowMatrixD centres;
  Eigen::RowVectorXd anomaly;
  Eigen::RowVectorXd distractor;
  Eigen::RowVectorXd cls;
};

}  // namespace detail

inline SynthCase generate(const SynthSpec& spec) {
  validate(spec);
  const auto cells = std::size_t{spec.grid_h} * spec.grid_w;
  const GridShape grid{spec.grid_h, spec.grid_w};

  std::vector<detail::LayerGeometry> geometry(spec.layer_count);
  for (std::size_t l = 0; l < spec.layer_count; ++l) {
    CounterRng rng(spec.seed, detail::stream_id(detail::Stream::basis, l));
    const auto basis = detail::orthonormal_basis(spec.n_clusters + 2, spec.dim, rng);
    auto& g = geometry[l];
    g.centres = basis.topRows(static_cast<Eigen::Index>(spec.n_clusters));
    g.anomaly = basis.row(static_cast<Eigen::Index>(spec.n_clusters));
    g.distractor = basis.row(static_cast<Eigen::Index>(spec.n_clusters + 1));
    g.cls = g.centres.colwise().sum().normalized();
  }

  // Cluster layout of one image: diagonal bands with a per-image offset.
  const auto layout = [&](std::uint64_t image_key) {
    CounterRng rng(spec.seed, detail::stream_id(detail::Stream::layout, image_key));
    const auto offset = rng.below(spec.n_clusters);
    std::vector<std::size_t> cluster(cells);
    for (std::size_t r = 0; r < spec.grid_h; ++r) {
      for (std::size_t c = 0; c < spec.grid_w; ++c) cluster[r * spec.grid_w + c] = (r + c + offset) % spec.n_clusters;
    }
    return cluster;
  };

  const auto make_image = [&](const std::string& id, std::uint64_t image_key, detail::Stream noise_stream,
                              const std::vector<std::uint8_t>& anomalous_cells, bool anomalous_cls,
                              const std::vector<std::uint8_t>& distractor_cells, std::ptrdiff_t clutter_cell) {
    const auto cluster = layout(image_key);
    FeatureSet fs;
    fs.image_id = id;
    fs.grid = grid;
    fs.source_resolution = {spec.grid_h * 16, spec.grid_w * 16};
    fs.layers.resize(spec.layer_count);
    for (std::size_t l = 0; l < spec.layer_count; ++l) {
      const auto& g = geometry[l];
      CounterRng rng(spec.seed, detail::stream_id(noise_stream, image_key, l));
      auto& layer = fs.layers[l];
      layer.layer_index = static_cast<std::uint32_t>(l + 1);
      layer.patches.resize(static_cast<Eigen::Index>(cells), spec.dim);
      for (std::size_t i = 0; i < cells; ++i) {
        Eigen::RowVectorXd base;
        if (distractor_cells[i]) {
          base = g.distractor;
        } else {
          base = g.centres.row(static_cast<Eigen::Index>(cluster[i]));
          if (anomalous_cells[i]) base += spec.anomaly_shift * g.anomaly;
          if (static_cast<std::ptrdiff_t>(i) == clutter_cell) {
            CounterRng crng(spec.seed, detail::stream_id(detail::Stream::clutter, image_key, l));
            Eigen::RowVectorXd dir(base.size());
            for (Eigen::Index j = 0; j < dir.size(); ++j) dir[j] = crng.normal();
            base += spec.clutter_shift * dir.normalized();
          }
        }
        layer.patches.row(static_cast<Eigen::Index>(i)) = detail::noisy_unit(base, spec.noise_sigma, rng);
      }
      CounterRng cls_rng(spec.seed, detail::stream_id(detail::Stream::cls_noise, image_key, l));
      Eigen::RowVectorXd cls = g.cls;
      if (anomalous_cls) cls += spec.cls_shift * g.anomaly;
      layer.cls = detail::noisy_unit(cls, spec.cls_noise_sigma, cls_rng).transpose();
    }
    return fs;
  };

  SynthCase out;
  const std::vector<std::uint8_t> none(cells, 0);
  for (std::size_t k = 0; k < spec.shots; ++k) {
    std::vector<std::uint8_t> distractors(cells, 0);
    CounterRng rng(spec.seed, detail::stream_id(detail::Stream::distractor_place, k));
    for (std::size_t placed = 0; placed < spec.distractor_count;) {
      const auto cell = rng.below(cells);
      if (!distractors[cell]) {
        distractors[cell] = 1;
        ++placed;
      }
    }
    out.supports.push_back(
        make_image("support_" + std::to_string(k), k, detail::Stream::support_noise, none, false, distractors, -1));
    out.distractor_cells.push_back(std::move(distractors));
  }

  // Exactly round(rate * count) anomalous queries, positions shuffled.
  const auto n_anomalous = static_cast<std::size_t>(std::lround(spec.anomaly_rate * static_cast<double>(spec.query_count)));
  out.image_labels.assign(spec.query_count, 0);
  std::fill_n(out.image_labels.begin(), n_anomalous, 1);
  {
    CounterRng rng(spec.seed, detail::stream_id(detail::Stream::labels));
    for (std::size_t i = spec.query_count; i > 1; --i) std::swap(out.image_labels[i - 1], out.image_labels[rng.below(i)]);
  }

  const auto side = spec.anomaly_cells > 0
                        ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(spec.anomaly_cells))))
                        : std::size_t{1};
  const auto block_rows = spec.anomaly_cells > 0 ? (spec.anomaly_cells + side - 1) / side : std::size_t{1};
  for (std::size_t q = 0; q < spec.query_count; ++q) {
    const std::uint64_t key = (1ull << 20) + q;
    MaskMatrix mask = MaskMatrix::Zero(spec.grid_h, spec.grid_w);
    if (out.image_labels[q]) {
      CounterRng rng(spec.seed, detail::stream_id(detail::Stream::anomaly_place, q));
      const auto top = rng.below(spec.grid_h - block_rows + 1);
      const auto left = rng.below(spec.grid_w - side + 1);
      for (std::size_t i = 0; i < spec.anomaly_cells; ++i) {
        mask(static_cast<Eigen::Index>(top + i / side), static_cast<Eigen::Index>(left + i % side)) = 1;
      }
    }
    std::ptrdiff_t clutter_cell = -1;
    {
      CounterRng rng(spec.seed, detail::stream_id(detail::Stream::clutter, q));
      if (rng.uniform() < spec.clutter_rate) {
        // Only on cells outside the planted block so masks stay exact.
        for (int tries = 0; tries < 64 && clutter_cell < 0; ++tries) {
          const auto cell = rng.below(cells);
          if (!mask.data()[cell]) clutter_cell = static_cast<std::ptrdiff_t>(cell);
        }
      }
    }
    const std::vector<std::uint8_t> cells_flag(mask.data(), mask.data() + mask.size());
    out.queries.push_back(make_image("query_" + std::to_string(q), key, detail::Stream::query_noise, cells_flag,
                                     out.image_labels[q] != 0, none, clutter_cell));
    out.pixel_masks.push_back(std::move(mask));
  }
  return out;
}

// ---- pipeline over a synthetic case ------------------------------------------

struct PipelineConfig {
  Normalization normalization = Normalization::l2;
  ScoringConfig scoring;
  bool branch_minmax = false;  // min-max each branch across the query set before fusion
  double pro_limit = kDefaultProFprLimit;
  std::size_t threads = 1;
};

struct CaseScores {
  std::vector<ScoreRecord> records;
  std::vector<AnomalyMap> maps;
};

/// Scores every query; with branch_minmax the fused score uses per-set
/// min-max scaled branches.
inline CaseScores score_queries(std::span<const FeatureSet> queries, const MemoryBank& bank, const PipelineConfig& config) {
  CaseScores out;
  out.records.resize(queries.size());
  out.maps.resize(queries.size());
  parallel_for(queries.size(), config.threads, [&](std::size_t i) {
    auto r = score_query(queries[i], bank, config.scoring);
    out.records[i] = std::move(r.record);
    out.maps[i] = std::move(r.map);
  });
  if (config.branch_minmax) {
    std::vector<double> maps;
    std::vector<double> clss;
    for (const auto& r : out.records) {
      maps.push_back(r.s_map);
      clss.push_back(r.s_cls);
    }
    minmax_normalize(maps);
    minmax_normalize(clss);
    for (std::size_t i = 0; i < out.records.size(); ++i) {
      out.records[i].s_image = fuse(maps[i], clss[i], config.scoring.lambda);
    }
  }
  return out;
}

/// Image-level metrics plus patch-grid pixel metrics against the case's masks.
inline EvalReport evaluate_case(const SynthCase& c, const PipelineConfig& config) {
  const auto bank = build_memory_bank(c.supports, config.normalization);
  const auto scored = score_queries(c.queries, bank, config);
  LabeledScores image;
  std::vector<SegmentationCase> seg;
  for (std::size_t i = 0; i < c.queries.size(); ++i) {
    image.scores.push_back(scored.records[i].s_image);
    image.labels.push_back(c.image_labels[i]);
    seg.push_back({scored.maps[i].grid, c.pixel_masks[i]});
  }
  return evaluate(image, seg, config.pro_limit);
}

enum class AblationAxis { lookup, lambda, pooling };

inline AblationAxis parse_axis(const std::string& s) {
  if (s == "lookup") return AblationAxis::lookup;
  if (s == "lambda") return AblationAxis::lambda;
  if (s == "pooling") return AblationAxis::pooling;
  fail(ErrorCategory::argument, "unknown ablation axis '" + s + "' (expected lookup|lambda|pooling)");
}

inline PipelineConfig with_knob(PipelineConfig base, AblationAxis axis, const std::string& value) {
  switch (axis) {
    case AblationAxis::lookup: base.scoring.lookup = parse_lookup(value); break;
    case AblationAxis::pooling: base.scoring.pooling = parse_pooling(value); break;
    case AblationAxis::lambda: {
      double lambda = 0.0;
      try {
        std::size_t used = 0;
        lambda = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        fail(ErrorCategory::argument, "invalid lambda '" + value + "'");
      }
      if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorCategory::argument, "lambda " + value + " outside [0, 1]");
      base.scoring.lambda = lambda;
      break;
    }
  }
  return base;
}

struct AblationRow {
  std::string value;
  EvalReport report;
};

/// One full evaluation per knob value, every other knob taken from `base`.
inline std::vector<AblationRow> run_ablation(const SynthCase& c, AblationAxis axis, std::span<const std::string> values,
                                             const PipelineConfig& base = {}) {
  std::vector<PipelineConfig> configs;
  for (const auto& v : values) configs.push_back(with_knob(base, axis, v));
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < values.size(); ++i) rows.push_back({values[i], evaluate_case(c, configs[i])});
  return rows;
}

// ---- persistence -----------------------------------------------------------

/// Writes feature files, PGM masks, support/query CSV manifests and a JSON
/// label/mask manifest under `dir`.
inline void write_case(const SynthCase& c, const std::filesystem::path& dir, const std::string& category = "synth") {
  std::filesystem::create_directories(dir / "features");
  std::filesystem::create_directories(dir / "masks");
  Manifest support;
  Manifest query;
  nlohmann::json meta;
  meta["category"] = category;
  for (const auto& s : c.supports) {
    const auto path = dir / "features" / (s.image_id + ".hfs");
    write_feature_file(s, path);
    support.push_back({path, 0, std::nullopt, category});
    meta["supports"].push_back(path.lexically_relative(dir).generic_string());
  }
  for (std::size_t i = 0; i < c.queries.size(); ++i) {
    const auto& q = c.queries[i];
    const auto path = dir / "features" / (q.image_id + ".hfs");
    const auto mask_path = dir / "masks" / (q.image_id + ".pgm");
    write_feature_file(q, path);
    write_pgm(from_mask(c.pixel_masks[i]), 255, mask_path);
    query.push_back({path, c.image_labels[i], mask_path, category});
    meta["queries"].push_back({{"features", path.lexically_relative(dir).generic_string()},
                               {"label", c.image_labels[i]},
                               {"mask", mask_path.lexically_relative(dir).generic_string()}});
  }
  write_manifest(support, dir / "support.csv");
  write_manifest(query, dir / "query.csv");
  write_atomically(dir / "case.json", [&](std::ostream& os) { os << meta.dump(2) << '\n'; });
}

}  // namespace hypermatch
