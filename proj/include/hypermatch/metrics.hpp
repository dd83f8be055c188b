#pragma once

// Ranking and segmentation metrics: AUROC, average precision, F1-max and
// per-region overlap (PRO). All are exact under tied scores.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hypermatch/error.hpp"
#include "hypermatch/feature_store.hpp"

namespace hypermatch {

using MaskMatrix = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LabeledScores {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;  // 1 = anomalous
};

struct SegmentationCase {
  RowMatrixD scores;
  MaskMatrix ground_truth;
};

inline constexpr double kDefaultProFprLimit = 0.3;
inline constexpr std::size_t kProMaxThresholds = 5000;

namespace detail {

struct ClassCounts {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline ClassCounts check_labeled(const LabeledScores& d, const char* op) {
  if (d.scores.size() != d.labels.size()) {
    fail(ErrorCategory::argument, std::string(op) + ": scores and labels differ in length");
  }
  ClassCounts c;
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (d.labels[i] > 1) fail(ErrorCategory::argument, std::string(op) + ": labels must be 0 or 1");
    if (!std::isfinite(d.scores[i])) fail(ErrorCategory::argument, std::string(op) + ": non-finite score");
    (d.labels[i] ? c.positives : c.negatives)++;
  }
  return c;
}

// Indices sorted by descending score.
inline std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// Calls visit(tp, fp) after each group of tied scores, in descending order.
template <typename Visit>
void sweep_groups(const LabeledScores& d, Visit&& visit) {
  const auto order = descending_order(d.scores);
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = d.scores[order[i]];
    for (; i < order.size() && d.scores[order[i]] == s; ++i) (d.labels[order[i]] ? tp : fp)++;
    visit(tp, fp);
  }
}

}  // namespace detail

/// Mann-Whitney U / (P * N) with midranks for ties.
inline double auroc(const LabeledScores& d) {
  const auto c = detail::check_labeled(d, "auroc");
  if (c.positives == 0 || c.negatives == 0) fail(ErrorCategory::metric_undefined, "auroc: both classes required");
  std::vector<std::size_t> order(d.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d.scores[a] < d.scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && d.scores[order[j]] == d.scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (d.labels[order[k]]) rank_sum += midrank;
    }
    i = j;
  }
  const auto p = static_cast<double>(c.positives);
  const auto n = static_cast<double>(c.negatives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

/// Sum over descending threshold groups of (R_k - R_{k-1}) * P_k.
inline double average_precision(const LabeledScores& d) {
  const auto c = detail::check_labeled(d, "average_precision");
  if (c.positives == 0) fail(ErrorCategory::metric_undefined, "average_precision: no positive labels");
  const auto p = static_cast<double>(c.positives);
  double ap = 0.0;
  double prev_recall = 0.0;
  detail::sweep_groups(d, [&](std::size_t tp, std::size_t fp) {
    const double recall = static_cast<double>(tp) / p;
    const double precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  });
  return ap;
}

/// Best F1 over thresholds at the unique score values (predict positive at score >= t).
inline double f1_max(const LabeledScores& d) {
  const auto c = detail::check_labeled(d, "f1_max");
  if (c.positives == 0) fail(ErrorCategory::metric_undefined, "f1_max: no positive labels");
  double best = 0.0;
  detail::sweep_groups(d, [&](std::size_t tp, std::size_t fp) {
    const std::size_t fn = c.positives - tp;
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    best = std::max(best, f1);
  });
  return best;
}

/// 8-connected component labels of a binary mask: 0 = background, 1..count.
inline std::vector<std::int32_t> connected_components(const MaskMatrix& mask, std::int32_t* count = nullptr) {
  const auto h = mask.rows();
  const auto w = mask.cols();
  std::vector<std::int32_t> labels(static_cast<std::size_t>(h * w), 0);
  std::vector<Eigen::Index> stack;
  std::int32_t next = 0;
  for (Eigen::Index start = 0; start < h * w; ++start) {
    if (!mask.data()[start] || labels[static_cast<std::size_t>(start)] != 0) continue;
    ++next;
    labels[static_cast<std::size_t>(start)] = next;
    stack.push_back(start);
    while (!stack.empty()) {
      const auto cur = stack.back();
      stack.pop_back();
      const auto y = cur / w;
      const auto x = cur % w;
      for (Eigen::Index dy = -1; dy <= 1; ++dy) {
        for (Eigen::Index dx = -1; dx <= 1; ++dx) {
          const auto ny = y + dy;
          const auto nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const auto idx = ny * w + nx;
          if (mask.data()[idx] && labels[static_cast<std::size_t>(idx)] == 0) {
            labels[static_cast<std::size_t>(idx)] = next;
            stack.push_back(idx);
          }
        }
      }
    }
  }
  if (count) *count = next;
  return labels;
}

/// Trapezoid area under (fpr, value) points up to `limit`, divided by `limit`.
/// Points must be ordered with non-decreasing fpr; the curve is linearly
/// interpolated at the limit.
inline double normalized_area_to(std::span<const std::pair<double, double>> points, double limit) {
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const auto [x0, y0] = points[i - 1];
    auto [x1, y1] = points[i];
    if (x0 >= limit) break;
    if (x1 > limit) {
      y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
      x1 = limit;
    }
    area += 0.5 * (x1 - x0) * (y0 + y1);
  }
  return area / limit;
}

/// Per-region overlap integrated over FPR in [0, fpr_limit], normalized by the limit.
/// Regions are 8-connected components of each case's ground truth; FPR is
/// global over all normal pixels. Thresholds are the unique scores, or an
/// evenly spaced grid of kProMaxThresholds values when there are more.
inline double pro(std::span<const SegmentationCase> cases, double fpr_limit = kDefaultProFprLimit) {
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) fail(ErrorCategory::argument, "pro: fpr_limit must be in (0, 1]");
  struct Pixel {
    double score;
    std::int32_t region;  // -1 for normal pixels
  };
  std::vector<Pixel> pixels;
  std::vector<double> region_size;
  std::size_t normal_count = 0;
  for (const auto& c : cases) {
    if (c.scores.rows() != c.ground_truth.rows() || c.scores.cols() != c.ground_truth.cols()) {
      fail(ErrorCategory::dimension_mismatch, "pro: score map and ground truth shapes differ");
    }
    if (!c.scores.allFinite()) fail(ErrorCategory::argument, "pro: non-finite score");
    std::int32_t count = 0;
    const auto labels = connected_components(c.ground_truth, &count);
    const auto base = static_cast<std::int32_t>(region_size.size());
    region_size.resize(region_size.size() + static_cast<std::size_t>(count), 0.0);
    for (Eigen::Index i = 0; i < c.scores.size(); ++i) {
      const auto lab = labels[static_cast<std::size_t>(i)];
      if (lab == 0) {
        pixels.push_back({c.scores.data()[i], -1});
        ++normal_count;
      } else {
        pixels.push_back({c.scores.data()[i], base + lab - 1});
        region_size[static_cast<std::size_t>(base + lab - 1)] += 1.0;
      }
    }
  }
  if (region_size.empty()) fail(ErrorCategory::metric_undefined, "pro: no anomalous pixels");
  if (normal_count == 0) fail(ErrorCategory::metric_undefined, "pro: no normal pixels");

  std::sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) { return a.score > b.score; });
  std::vector<double> unique;
  for (const auto& p : pixels) {
    if (unique.empty() || unique.back() != p.score) unique.push_back(p.score);
  }
  std::vector<double> thresholds;
  if (unique.size() <= kProMaxThresholds) {
    thresholds = std::move(unique);
  } else {
    const double hi = unique.front();
    const double lo = unique.back();
    thresholds.resize(kProMaxThresholds);
    for (std::size_t i = 0; i < kProMaxThresholds; ++i) {
      thresholds[i] = hi - (hi - lo) * static_cast<double>(i) / static_cast<double>(kProMaxThresholds - 1);
    }
    thresholds.back() = lo;
  }

  const auto regions = static_cast<double>(region_size.size());
  std::vector<std::pair<double, double>> curve;
  curve.reserve(thresholds.size() + 1);
  curve.emplace_back(0.0, 0.0);
  double overlap_sum = 0.0;
  std::size_t false_pos = 0;
  std::size_t next = 0;
  for (double t : thresholds) {
    for (; next < pixels.size() && pixels[next].score >= t; ++next) {
      const auto r = pixels[next].region;
      if (r < 0) {
        ++false_pos;
      } else {
        overlap_sum += 1.0 / region_size[static_cast<std::size_t>(r)];
      }
    }
    curve.emplace_back(static_cast<double>(false_pos) / static_cast<double>(normal_count), overlap_sum / regions);
  }
  return std::clamp(normalized_area_to(curve, fpr_limit), 0.0, 1.0);
}

struct PixelMetrics {
  double auroc = 0.0;
  double f1 = 0.0;
  double ap = 0.0;
};

/// Pixel AUROC / F1-max / AP over all cases' pixels pooled together, or, with
/// `per_image_average`, averaged over the cases that contain both classes.
inline PixelMetrics pixel_metrics(std::span<const SegmentationCase> cases, bool per_image_average = false) {
  const auto flatten = [](const SegmentationCase& c, LabeledScores& out) {
    if (c.scores.rows() != c.ground_truth.rows() || c.scores.cols() != c.ground_truth.cols()) {
      fail(ErrorCategory::dimension_mismatch, "pixel_metrics: score map and ground truth shapes differ");
    }
    out.scores.insert(out.scores.end(), c.scores.data(), c.scores.data() + c.scores.size());
    for (Eigen::Index i = 0; i < c.ground_truth.size(); ++i) out.labels.push_back(c.ground_truth.data()[i] ? 1 : 0);
  };
  if (!per_image_average) {
    LabeledScores all;
    for (const auto& c : cases) flatten(c, all);
    return {auroc(all), f1_max(all), average_precision(all)};
  }
  PixelMetrics sum;
  std::size_t used = 0;
  for (const auto& c : cases) {
    LabeledScores one;
    flatten(c, one);
    const bool has_pos = std::find(one.labels.begin(), one.labels.end(), 1) != one.labels.end();
    const bool has_neg = std::find(one.labels.begin(), one.labels.end(), 0) != one.labels.end();
    if (!has_pos || !has_neg) continue;
    sum.auroc += auroc(one);
    sum.f1 += f1_max(one);
    sum.ap += average_precision(one);
    ++used;
  }
  if (used == 0) fail(ErrorCategory::metric_undefined, "pixel_metrics: no image contains both classes");
  const auto n = static_cast<double>(used);
  return {sum.auroc / n, sum.f1 / n, sum.ap / n};
}

struct EvalReport {
  double i_auroc = 0.0;
  double i_f1 = 0.0;
  double i_ap = 0.0;
  std::optional<double> p_auroc;
  std::optional<double> p_f1;
  std::optional<double> p_ap;
  std::optional<double> p_pro;
  std::map<std::string, EvalReport> per_category;
};

/// Image-level metrics plus, when `segmentation` is non-empty, pixel-level ones.
inline EvalReport evaluate(const LabeledScores& image_scores, std::span<const SegmentationCase> segmentation = {},
                           double pro_limit = kDefaultProFprLimit, bool per_image_pixel = false) {
  EvalReport r;
  r.i_auroc = auroc(image_scores);
  r.i_f1 = f1_max(image_scores);
  r.i_ap = average_precision(image_scores);
  if (!segmentation.empty()) {
    const auto px = pixel_metrics(segmentation, per_image_pixel);
    r.p_auroc = px.auroc;
    r.p_f1 = px.f1;
    r.p_ap = px.ap;
    r.p_pro = pro(segmentation, pro_limit);
  }
  return r;
}

/// Field-wise mean; pixel metrics are averaged only if present in every report.
inline EvalReport mean_report(std::span<const EvalReport> reports) {
  EvalReport m;
  if (reports.empty()) return m;
  const auto n = static_cast<double>(reports.size());
  const auto mean_opt = [&](auto member) -> std::optional<double> {
    double s = 0.0;
    for (const auto& r : reports) {
      if (!(r.*member)) return std::nullopt;
      s += *(r.*member);
    }
    return s / n;
  };
  for (const auto& r : reports) {
    m.i_auroc += r.i_auroc;
    m.i_f1 += r.i_f1;
    m.i_ap += r.i_ap;
  }
  m.i_auroc /= n;
  m.i_f1 /= n;
  m.i_ap /= n;
  m.p_auroc = mean_opt(&EvalReport::p_auroc);
  m.p_f1 = mean_opt(&EvalReport::p_f1);
  m.p_ap = mean_opt(&EvalReport::p_ap);
  m.p_pro = mean_opt(&EvalReport::p_pro);
  return m;
}

}  // namespace hypermatch
