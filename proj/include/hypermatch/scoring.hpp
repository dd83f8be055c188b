#pragma once

// Image-level scoring: pooled anomaly map (spatial branch), nearest support
// CLS cosine distance (global branch) and their lambda fusion.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hypermatch/error.hpp"
#include "hypermatch/memory_matching.hpp"

namespace hypermatch {

inline constexpr double kDefaultLambda = 0.5;

struct PoolingSpec {
  enum class Kind { max, top_n, top_pct };

  Kind kind = Kind::max;
  std::size_t n = 0;  // top_n
  double pct = 0.0;   // top_pct, in (0, 100]

  static PoolingSpec maximum() { return {Kind::max, 0, 0.0}; }
  static PoolingSpec top(std::size_t n) { return {Kind::top_n, n, 0.0}; }
  static PoolingSpec top_percent(double pct) { return {Kind::top_pct, 0, pct}; }

  bool operator==(const PoolingSpec&) const = default;
};

inline std::string to_string(const PoolingSpec& p) {
  switch (p.kind) {
    case PoolingSpec::Kind::max: return "max";
    case PoolingSpec::Kind::top_n: return "top" + std::to_string(p.n);
    case PoolingSpec::Kind::top_pct: {
      std::string s = std::to_string(p.pct);
      s.erase(s.find_last_not_of('0') + 1);
      if (!s.empty() && s.back() == '.') s.pop_back();
      return "top" + s + "%";
    }
  }
  return "?";
}

/// Accepts "max", "topN" and "topP%" (e.g. "top10", "top1%").
inline PoolingSpec parse_pooling(const std::string& text) {
  if (text == "max") return PoolingSpec::maximum();
  if (text.rfind("top", 0) == 0 && text.size() > 3) {
    std::string body = text.substr(3);
    const bool percent = body.back() == '%';
    if (percent) body.pop_back();
    try {
      std::size_t used = 0;
      if (percent) {
        const double pct = std::stod(body, &used);
        if (used == body.size() && pct > 0.0 && pct <= 100.0) return PoolingSpec::top_percent(pct);
      } else {
        const auto n = std::stoull(body, &used);
        if (used == body.size() && n >= 1) return PoolingSpec::top(static_cast<std::size_t>(n));
      }
    } catch (const std::exception&) {
    }
  }
  fail(ErrorCategory::argument, "unknown pooling '" + text + "' (expected max|topN|topP%)");
}

/// Number of cells averaged by top_pct: ceil(pct/100 * cells), at least 1.
inline std::size_t top_pct_count(double pct, std::size_t cells) {
  const auto k = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(cells) - 1e-9));
  return std::clamp<std::size_t>(k, 1, cells);
}

inline double pool_map(const RowMatrixD& grid, const PoolingSpec& spec) {
  const auto cells = static_cast<std::size_t>(grid.size());
  if (cells == 0) fail(ErrorCategory::argument, "pool_map: empty map");
  std::size_t count = 1;
  switch (spec.kind) {
    case PoolingSpec::Kind::max: return grid.maxCoeff();
    case PoolingSpec::Kind::top_n:
      if (spec.n < 1 || spec.n > cells) {
        fail(ErrorCategory::argument, "pool_map: top-n n=" + std::to_string(spec.n) + " outside [1, " + std::to_string(cells) + "]");
      }
      count = spec.n;
      break;
    case PoolingSpec::Kind::top_pct:
      if (!(spec.pct > 0.0 && spec.pct <= 100.0)) fail(ErrorCategory::argument, "pool_map: pct must be in (0, 100]");
      count = top_pct_count(spec.pct, cells);
      break;
  }
  std::vector<double> values(grid.data(), grid.data() + cells);
  std::partial_sort(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(count), values.end(), std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < count; ++i) sum += values[i];
  return sum / static_cast<double>(count);
}

inline double pool_map(const AnomalyMap& map, const PoolingSpec& spec) { return pool_map(map.grid, spec); }

/// Mean over layers of 1 - max_k cos(c_q, c_k).
inline double cls_score(const FeatureSet& query, const MemoryBank& bank) {
  check_compatible(query, bank);
  double total = 0.0;
  for (std::size_t l = 0; l < query.layers.size(); ++l) {
    const Eigen::RowVectorXd q = query.layers[l].cls.cast<double>().transpose();
    const auto& support = bank.layers[l].cls;
    double best = -1.0;
    for (Eigen::Index k = 0; k < support.rows(); ++k) {
      best = std::max(best, detail::cosine(q, support.row(k).cast<double>()));
    }
    total += 1.0 - best;
  }
  return total / static_cast<double>(query.layers.size());
}

inline double fuse(double s_map, double s_cls, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorCategory::argument, "fuse: lambda must lie in [0, 1]");
  return lambda * s_map + (1.0 - lambda) * s_cls;
}

struct ScoreRecord {
  std::string image_id;
  double s_map = 0.0;
  double s_cls = 0.0;
  double s_image = 0.0;
  double lambda = kDefaultLambda;
};

struct ScoringConfig {
  LookupStrategy lookup = LookupStrategy::sparse();
  PoolingSpec pooling = PoolingSpec::maximum();
  double lambda = kDefaultLambda;
};

struct QueryResult {
  AnomalyMap map;
  ScoreRecord record;
};

inline QueryResult score_query(const FeatureSet& query, const MemoryBank& bank, const ScoringConfig& config) {
  QueryResult r;
  r.map = anomaly_map(query, bank, config.lookup);
  r.record.image_id = query.image_id;
  r.record.s_map = pool_map(r.map, config.pooling);
  r.record.s_cls = cls_score(normalized(query, bank.normalization), bank);
  r.record.lambda = config.lambda;
  r.record.s_image = fuse(r.record.s_map, r.record.s_cls, config.lambda);
  return r;
}

/// Min-max rescales one branch across a query set; a constant branch maps to 0.
inline void minmax_normalize(std::vector<double>& values) {
  if (values.empty()) return;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double a = *lo;
  const double span = *hi - *lo;
  for (double& v : values) v = span > 0.0 ? (v - a) / span : 0.0;
}

}  // namespace hypermatch
