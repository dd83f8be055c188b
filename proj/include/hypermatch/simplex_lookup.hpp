#pragma once

// Retrieval-weight transforms from a similarity vector z to a point on the
// probability simplex: dense softmax, top-n softmax, maximum (one-hot) and
// sparsemax (Euclidean projection onto the simplex).
//
// All arithmetic is binary64. Outputs of every strategy sum to 1 within 1e-6.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hypermatch/error.hpp"

namespace hypermatch {

struct RetrievalWeights {
  std::vector<double> weights;
  std::optional<double> threshold;  // sparsemax tau only
  std::size_t support_size = 0;     // number of strictly positive weights
};

struct LookupStrategy {
  enum class Kind { dense, top_n, maximum, sparse };

  Kind kind = Kind::sparse;
  std::size_t n = 0;  // top_n only

  static LookupStrategy dense() { return {Kind::dense, 0}; }
  static LookupStrategy top(std::size_t n) { return {Kind::top_n, n}; }
  static LookupStrategy maximum() { return {Kind::maximum, 0}; }
  static LookupStrategy sparse() { return {Kind::sparse, 0}; }

  bool operator==(const LookupStrategy&) const = default;
};

inline std::string to_string(const LookupStrategy& s) {
  switch (s.kind) {
    case LookupStrategy::Kind::dense: return "dense";
    case LookupStrategy::Kind::top_n: return "top" + std::to_string(s.n);
    case LookupStrategy::Kind::maximum: return "max";
    case LookupStrategy::Kind::sparse: return "sparse";
  }
  return "?";
}

/// Accepts "dense", "sparse", "max" and "topN" (N >= 1).
inline LookupStrategy parse_lookup(const std::string& text) {
  if (text == "dense") return LookupStrategy::dense();
  if (text == "sparse" || text == "sparsemax") return LookupStrategy::sparse();
  if (text == "max" || text == "maximum") return LookupStrategy::maximum();
  if (text.rfind("top", 0) == 0 && text.size() > 3) {
    const auto digits = text.substr(3);
    if (std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c); })) {
      const auto n = std::stoull(digits);
      if (n >= 1) return LookupStrategy::top(static_cast<std::size_t>(n));
    }
  }
  fail(ErrorCategory::argument, "unknown lookup strategy '" + text + "' (expected dense|sparse|max|topN)");
}

namespace detail {

inline void require_nonempty(std::span<const double> z, const char* op) {
  if (z.empty()) fail(ErrorCategory::argument, std::string(op) + ": empty similarity vector");
}

inline std::size_t count_positive(std::span<const double> w) {
  return static_cast<std::size_t>(std::count_if(w.begin(), w.end(), [](double v) { return v > 0.0; }));
}

}  // namespace detail

struct SparsemaxResult {
  double threshold = 0.0;
  std::size_t support_size = 0;
};

/// Sort-based sparsemax written into `out`; `scratch` is reused between calls.
///
/// Works on z - max(z) so results are unaffected by a uniform offset that is
/// exactly representable. Entries with z_u <= max(z) - 1 can never enter the
/// support, so only the remaining candidates are sorted.
inline SparsemaxResult sparsemax_into(std::span<const double> z, std::span<double> out,
                                      std::vector<double>& scratch) {
  detail::require_nonempty(z, "sparsemax");
  const double z_max = *std::max_element(z.begin(), z.end());
  scratch.clear();
  for (double v : z) {
    const double s = v - z_max;
    if (s > -1.0) scratch.push_back(s);
  }
  std::sort(scratch.begin(), scratch.end(), std::greater<>());

  // m = max{k : 1 + k z_(k) > sum_{j<=k} z_(j)}
  double cumsum = 0.0;
  double support_sum = 0.0;
  std::size_t m = 0;
  for (std::size_t k = 1; k <= scratch.size(); ++k) {
    const double zk = scratch[k - 1];
    cumsum += zk;
    if (1.0 + static_cast<double>(k) * zk > cumsum) {
      m = k;
      support_sum = cumsum;
    }
  }
  const double tau_shifted = (support_sum - 1.0) / static_cast<double>(m);
  std::size_t positive = 0;
  for (std::size_t u = 0; u < z.size(); ++u) {
    out[u] = std::max(0.0, (z[u] - z_max) - tau_shifted);
    positive += out[u] > 0.0;
  }
  return {tau_shifted + z_max, positive};
}

inline RetrievalWeights sparsemax(std::span<const double> z) {
  RetrievalWeights r;
  r.weights.resize(z.size());
  std::vector<double> scratch;
  const auto res = sparsemax_into(z, r.weights, scratch);
  r.threshold = res.threshold;
  r.support_size = res.support_size;
  return r;
}

/// Softmax over z with max subtraction; summation in index order.
inline void dense_lookup_into(std::span<const double> z, std::span<double> out) {
  detail::require_nonempty(z, "dense_lookup");
  const double z_max = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t u = 0; u < z.size(); ++u) {
    out[u] = std::exp(z[u] - z_max);
    total += out[u];
  }
  for (double& w : out) w /= total;
}

inline RetrievalWeights dense_lookup(std::span<const double> z) {
  RetrievalWeights r;
  r.weights.resize(z.size());
  dense_lookup_into(z, r.weights);
  r.support_size = detail::count_positive(r.weights);
  return r;
}

/// Softmax restricted to the n largest entries (ties go to the lower index).
/// The survivors are accumulated in index order, so n == z.size() reproduces
/// dense_lookup bit for bit.
inline void topn_lookup_into(std::span<const double> z, std::size_t n, std::span<double> out,
                             std::vector<std::size_t>& order) {
  detail::require_nonempty(z, "topn_lookup");
  if (n < 1 || n > z.size()) {
    fail(ErrorCategory::argument, "topn_lookup: n=" + std::to_string(n) + " outside [1, " + std::to_string(z.size()) + "]");
  }
  order.resize(z.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto before = [&](std::size_t a, std::size_t b) { return z[a] > z[b] || (z[a] == z[b] && a < b); };
  if (n < z.size()) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n - 1), order.end(), before);

  std::fill(out.begin(), out.end(), 0.0);
  // out doubles as the survivor mask (1.0 = kept) before holding the weights.
  if (n < z.size()) {
    for (std::size_t i = 0; i < n; ++i) out[order[i]] = 1.0;
  } else {
    std::fill(out.begin(), out.end(), 1.0);
  }
  double z_max = -INFINITY;
  for (std::size_t u = 0; u < z.size(); ++u) {
    if (out[u] != 0.0) z_max = std::max(z_max, z[u]);
  }
  double total = 0.0;
  for (std::size_t u = 0; u < z.size(); ++u) {
    if (out[u] != 0.0) {
      out[u] = std::exp(z[u] - z_max);
      total += out[u];
    }
  }
  for (double& w : out) w /= total;
}

inline RetrievalWeights topn_lookup(std::span<const double> z, std::size_t n) {
  RetrievalWeights r;
  r.weights.resize(z.size());
  std::vector<std::size_t> order;
  topn_lookup_into(z, n, r.weights, order);
  r.support_size = detail::count_positive(r.weights);
  return r;
}

/// One-hot at the argmax, lowest index on ties.
inline void max_lookup_into(std::span<const double> z, std::span<double> out) {
  detail::require_nonempty(z, "max_lookup");
  const auto best = static_cast<std::size_t>(std::distance(z.begin(), std::max_element(z.begin(), z.end())));
  std::fill(out.begin(), out.end(), 0.0);
  out[best] = 1.0;
}

inline RetrievalWeights max_lookup(std::span<const double> z) {
  RetrievalWeights r;
  r.weights.resize(z.size());
  max_lookup_into(z, r.weights);
  r.support_size = 1;
  return r;
}

/// Reusable buffers for repeated lookups on same-length vectors.
struct LookupScratch {
  std::vector<double> values;
  std::vector<std::size_t> order;
};

inline void apply_lookup_into(const LookupStrategy& s, std::span<const double> z, std::span<double> out,
                              LookupScratch& scratch) {
  switch (s.kind) {
    case LookupStrategy::Kind::dense: dense_lookup_into(z, out); return;
    case LookupStrategy::Kind::top_n: topn_lookup_into(z, s.n, out, scratch.order); return;
    case LookupStrategy::Kind::maximum: max_lookup_into(z, out); return;
    case LookupStrategy::Kind::sparse: sparsemax_into(z, out, scratch.values); return;
  }
}

inline RetrievalWeights apply_lookup(const LookupStrategy& s, std::span<const double> z) {
  switch (s.kind) {
    case LookupStrategy::Kind::dense: return dense_lookup(z);
    case LookupStrategy::Kind::top_n: return topn_lookup(z, s.n);
    case LookupStrategy::Kind::maximum: return max_lookup(z);
    case LookupStrategy::Kind::sparse: return sparsemax(z);
  }
  return {};
}

}  // namespace hypermatch
