// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "commands.hpp"
#include "hypermatch/feature_store.hpp"
#include "hypermatch/memory_matching.hpp"
#include "hypermatch/metrics.hpp"
#include "hypermatch/scoring.hpp"
#include "hypermatch/simplex_lookup.hpp"
#include "hypermatch/synth.hpp"
#include "oracles.hpp"

namespace {

using namespace hypermatch;
namespace fs = std::filesystem;

// Tolerances.
constexpr double kOracleTol = 1e-9;
constexpr double kOracleSeconds = 5.0;
constexpr double kHandTol = 1e-12;
constexpr double kSimplexSumTol = 1e-6;
constexpr double kSelfMatchTol = 1e-6;
constexpr double kAurocTol = 1e-9;
constexpr double kApTol = 1e-12;
constexpr double kProTol = 1e-3;
constexpr int kSeeds = 20;
constexpr int kDistractorWinsRequired = 19;

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> gaussian(std::mt19937_64& rng, std::size_t m) {
  std::normal_distribution<double> n;
  std::vector<double> z(m);
  for (auto& v : z) v = n(rng);
  return z;
}

FeatureSet random_feature_set(std::mt19937_64& rng, std::uint32_t h, std::uint32_t w, std::uint32_t d, std::size_t layers) {
  std::normal_distribution<float> n;
  FeatureSet fs;
  fs.image_id = "random";
  fs.grid = {h, w};
  for (std::size_t l = 0; l < layers; ++l) {
    LayerFeatures layer;
    layer.layer_index = static_cast<std::uint32_t>(l + 1);
    layer.patches.resize(static_cast<Eigen::Index>(h) * w, d);
    for (Eigen::Index i = 0; i < layer.patches.size(); ++i) layer.patches.data()[i] = n(rng);
    layer.cls.resize(d);
    for (Eigen::Index i = 0; i < layer.cls.size(); ++i) layer.cls[i] = n(rng);
    fs.layers.push_back(std::move(layer));
  }
  return fs;
}

void sparsemax_oracle() {
  std::mt19937_64 rng(20240601);
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  const int count = 1000;
  for (int i = 0; i < count; ++i) {
    const auto z = gaussian(rng, 2 + static_cast<std::size_t>(i % 11));
    const auto got = sparsemax(z).weights;
    const auto want = oracle::sparsemax_active_set(z);
    for (std::size_t k = 0; k < z.size(); ++k) worst = std::max(worst, std::abs(got[k] - want[k]));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report("sparsemax oracle equivalence", worst <= kOracleTol && secs < kOracleSeconds,
         fmt("%d vectors, M in 2..12, max |diff| %.3g (tol %.0e), %.3f s (limit %.0f s)", count, worst, kOracleTol, secs,
             kOracleSeconds));
}

void hand_cases() {
  struct Case {
    std::vector<double> z, w;
    double tau;
  };
  const std::vector<Case> cases{{{2, 0}, {1, 0}, 1}, {{1.0, 0.9, 0.1}, {0.55, 0.45, 0}, 0.45}, {{0.5, 0.5}, {0.5, 0.5}, 0}};
  double worst = 0.0;
  for (const auto& c : cases) {
    const auto r = sparsemax(c.z);
    for (std::size_t i = 0; i < c.z.size(); ++i) worst = std::max(worst, std::abs(r.weights[i] - c.w[i]));
    worst = std::max(worst, std::abs(*r.threshold - c.tau));
  }
  report("sparsemax hand cases", worst <= kHandTol, fmt("3 cases, max |diff| over weights and tau %.3g (tol %.0e)", worst, kHandTol));
}

void simplex_invariants() {
  std::mt19937_64 rng(7);
  const std::vector<LookupStrategy> strategies{LookupStrategy::dense(), LookupStrategy::top(10), LookupStrategy::maximum(),
                                               LookupStrategy::sparse()};
  double worst_sum = 0.0;
  double most_negative = 0.0;
  const int count = 10000;
  for (int i = 0; i < count; ++i) {
    const auto z = gaussian(rng, 10 + static_cast<std::size_t>(i % 300));
    for (const auto& s : strategies) {
      const auto w = apply_lookup(s, z).weights;
      most_negative = std::min(most_negative, *std::min_element(w.begin(), w.end()));
      worst_sum = std::max(worst_sum, std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0));
    }
  }
  // Shift invariance with exactly representable inputs and offsets.
  std::uniform_int_distribution<int> k(-4096, 4096);
  int shift_bad = 0;
  int perm_bad = 0;
  for (int i = 0; i < count; ++i) {
    std::vector<double> z(2 + static_cast<std::size_t>(i % 40));
    for (auto& v : z) v = k(rng) / 1024.0;
    auto shifted = z;
    const double c = static_cast<double>(k(rng) / 16);
    for (auto& v : shifted) v += c;
    shift_bad += sparsemax(z).weights != sparsemax(shifted).weights;

    const auto g = gaussian(rng, z.size());
    std::vector<std::size_t> perm(g.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> pg(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) pg[j] = g[perm[j]];
    const auto w = sparsemax(g).weights;
    const auto pw = sparsemax(pg).weights;
    for (std::size_t j = 0; j < g.size(); ++j) perm_bad += pw[j] != w[perm[j]];
  }
  report("simplex invariants", most_negative >= 0.0 && worst_sum <= kSimplexSumTol && shift_bad == 0 && perm_bad == 0,
         fmt("%d inputs x 4 strategies: min weight %.3g, max |sum-1| %.3g (tol %.0e); "
             "shift mismatches %d, permutation mismatches %d",
             count, most_negative, worst_sum, kSimplexSumTol, shift_bad, perm_bad));
}

void degenerations() {
  SynthSpec spec;
  spec.query_count = 6;
  const auto c = generate(spec);
  const auto bank = build_memory_bank(c.supports, Normalization::l2);
  const auto m = static_cast<std::size_t>(bank.layers.front().patches.rows());
  bool top1_max = true;
  bool topm_dense = true;
  bool fuse_ends = true;
  bool pool_top1 = true;
  for (const auto& q : c.queries) {
    const auto max_map = anomaly_map(q, bank, LookupStrategy::maximum()).grid;
    const auto dense_map = anomaly_map(q, bank, LookupStrategy::dense()).grid;
    const auto top1 = anomaly_map(q, bank, LookupStrategy::top(1)).grid;
    const auto topm = anomaly_map(q, bank, LookupStrategy::top(m)).grid;
    top1_max &= std::memcmp(top1.data(), max_map.data(), sizeof(double) * top1.size()) == 0;
    topm_dense &= std::memcmp(topm.data(), dense_map.data(), sizeof(double) * topm.size()) == 0;

    const auto sparse_map = anomaly_map(q, bank, LookupStrategy::sparse());
    const double s_map = pool_map(sparse_map, PoolingSpec::maximum());
    const double s_cls = cls_score(normalized(q, bank.normalization), bank);
    fuse_ends &= fuse(s_map, s_cls, 1.0) == s_map && fuse(s_map, s_cls, 0.0) == s_cls;
    pool_top1 &= pool_map(sparse_map, PoolingSpec::top(1)) == s_map;
  }
  report("degeneration identities", top1_max && topm_dense && fuse_ends && pool_top1,
         fmt("top1==max %s, top%zu==dense %s, fuse endpoints %s, top1 pooling==max %s (bitwise, %zu queries)",
             top1_max ? "yes" : "no", m, topm_dense ? "yes" : "no", fuse_ends ? "yes" : "no", pool_top1 ? "yes" : "no",
             c.queries.size()));
}

void self_support() {
  std::mt19937_64 rng(99);
  double worst_map = 0.0;
  double worst_image = 0.0;
  double worst_map_none = 0.0;
  const ScoringConfig config;  // sparse lookup, max pooling, lambda 0.5
  for (int i = 0; i < 50; ++i) {
    const auto h = static_cast<std::uint32_t>(2 + rng() % 7);
    const auto w = static_cast<std::uint32_t>(2 + rng() % 7);
    const auto d = static_cast<std::uint32_t>(16 << (rng() % 4));
    const std::vector<FeatureSet> support{random_feature_set(rng, h, w, d, 1 + rng() % 4)};
    const auto r = score_query(support[0], build_memory_bank(support, Normalization::l2), config);
    worst_map = std::max(worst_map, r.map.grid.maxCoeff());
    worst_image = std::max(worst_image, r.record.s_image);
    const auto raw = anomaly_map(support[0], build_memory_bank(support, Normalization::none), LookupStrategy::sparse());
    worst_map_none = std::max(worst_map_none, raw.grid.maxCoeff());
  }
  report("self-support zero", worst_map <= kSelfMatchTol && worst_image <= kSelfMatchTol,
         fmt("50 sets, default l2 + sparse: max cell %.3g, max s_image %.3g (tol %.0e); "
             "without normalization max cell %.3g",
             worst_map, worst_image, kSelfMatchTol, worst_map_none));
}

void planted_separability() {
  int perfect = 0;
  double worst_i = 1.0;
  double worst_p = 1.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    SynthSpec spec;
    spec.seed = static_cast<std::uint64_t>(seed);
    spec.noise_sigma = 0.0;
    spec.cls_noise_sigma = 0.0;
    spec.clutter_rate = 0.0;
    spec.anomaly_shift = 0.5;
    const auto r = evaluate_case(generate(spec), PipelineConfig{});
    worst_i = std::min(worst_i, r.i_auroc);
    worst_p = std::min(worst_p, *r.p_auroc);
    perfect += r.i_auroc == 1.0 && *r.p_auroc == 1.0;
  }
  report("planted-anomaly separability", perfect == kSeeds,
         fmt("%d/%d seeds with I-AUROC = P-AUROC = 1 (noise 0, shift 0.5); worst I %.6f, P %.6f", perfect, kSeeds, worst_i,
             worst_p));
}

void distractor_suppression() {
  int wins = 0;
  std::size_t distractor_weights = 0;
  std::size_t nonzero = 0;
  std::size_t above_threshold = 0;
  double dense_sum = 0.0;
  double sparse_sum = 0.0;
  for (int seed = 0; seed < kSeeds; ++seed) {
    SynthSpec spec;
    spec.seed = static_cast<std::uint64_t>(seed);
    spec.clutter_rate = 0.0;
    spec.noise_sigma = 0.5;
    spec.anomaly_shift = 0.5;
    spec.distractor_count = 12;
    const auto c = generate(spec);
    PipelineConfig dense;
    dense.scoring.lookup = LookupStrategy::dense();
    const auto d = evaluate_case(c, dense).i_auroc;
    const auto s = evaluate_case(c, PipelineConfig{}).i_auroc;
    wins += s >= d;
    dense_sum += d;
    sparse_sum += s;

    // Bank rows that came from distractor cells.
    std::vector<std::size_t> rows;
    const auto cells = c.distractor_cells.front().size();
    for (std::size_t k = 0; k < c.distractor_cells.size(); ++k) {
      for (std::size_t i = 0; i < cells; ++i) {
        if (c.distractor_cells[k][i]) rows.push_back(k * cells + i);
      }
    }
    const auto bank = build_memory_bank(c.supports, Normalization::l2);
    for (const auto& query : c.queries) {
      const auto qn = normalized(query, bank.normalization);
      for (std::size_t l = 0; l < bank.layers.size(); ++l) {
        const RowMatrixD sim = qn.layers[l].patches.cast<double>() * bank.layers[l].patches.cast<double>().transpose();
        for (Eigen::Index r = 0; r < sim.rows(); ++r) {
          const std::vector<double> z(sim.row(r).data(), sim.row(r).data() + sim.cols());
          const auto w = sparsemax(z);
          for (auto u : rows) {
            ++distractor_weights;
            nonzero += w.weights[u] != 0.0;
            above_threshold += z[u] >= *w.threshold;
          }
        }
      }
    }
  }
  report("distractor suppression",
         wins >= kDistractorWinsRequired && nonzero == 0 && above_threshold == 0,
         fmt("sparse >= dense I-AUROC in %d/%d seeds (need %d; mean sparse %.4f vs dense %.4f); "
             "%zu distractor weights, %zu nonzero, %zu at or above tau",
             wins, kSeeds, kDistractorWinsRequired, sparse_sum / kSeeds, dense_sum / kSeeds, distractor_weights, nonzero,
             above_threshold));
}

SegmentationCase random_pro_case(std::mt19937_64& rng, bool allow_empty) {
  SegmentationCase c{RowMatrixD::Zero(8, 8), MaskMatrix::Zero(8, 8)};
  const int blobs = allow_empty ? static_cast<int>(rng() % 3) : 1 + static_cast<int>(rng() % 3);
  for (int b = 0; b < blobs; ++b) {
    const auto r0 = static_cast<Eigen::Index>(rng() % 7);
    const auto c0 = static_cast<Eigen::Index>(rng() % 7);
    const auto h = std::min<Eigen::Index>(static_cast<Eigen::Index>(1 + rng() % 3), 8 - r0);
    const auto w = std::min<Eigen::Index>(static_cast<Eigen::Index>(1 + rng() % 3), 8 - c0);
    c.ground_truth.block(r0, c0, h, w).setOnes();
  }
  for (Eigen::Index i = 0; i < 64; ++i) {
    const int j = std::min(100, static_cast<int>(rng() % 71) + (c.ground_truth.data()[i] ? 30 : 0));
    c.scores.data()[i] = (10.0 * j) / 1000.0;
  }
  return c;
}

LabeledScores random_labeled(std::mt19937_64& rng, std::size_t n, int levels) {
  LabeledScores d;
  for (std::size_t i = 0; i < n; ++i) {
    d.scores.push_back(static_cast<double>(rng() % static_cast<unsigned>(levels + 1)) / levels);
    d.labels.push_back(static_cast<std::uint8_t>(rng() % 2));
  }
  d.labels[0] = 0;
  d.labels[1] = 1;
  return d;
}

void metric_oracles() {
  std::mt19937_64 rng(31337);
  double auroc_worst = 0.0;
  for (int i = 0; i < 500; ++i) {
    const auto d = random_labeled(rng, 2 + rng() % 199, 1 + static_cast<int>(rng() % 25));
    auroc_worst = std::max(auroc_worst, std::abs(auroc(d) - oracle::mann_whitney(d)));
  }
  const double ap = average_precision({{0.9, 0.8, 0.7}, {0, 1, 1}});
  const double ap_err = std::abs(ap - 7.0 / 12.0);

  std::vector<double> grid;
  for (int i = 0; i <= 1000; ++i) grid.push_back(i / 1000.0);
  double pro_worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::vector<SegmentationCase> cases{random_pro_case(rng, false)};
    for (std::size_t extra = rng() % 3; extra > 0; --extra) cases.push_back(random_pro_case(rng, true));
    pro_worst = std::max(pro_worst, std::abs(pro(cases) - oracle::pro_sweep(cases, grid, kDefaultProFprLimit)));
  }

  int monotone_bad = 0;
  const auto f = [](double x) { return std::exp(2.0 * x) + x * x * x; };
  for (int i = 0; i < 100; ++i) {
    const auto d = random_labeled(rng, 10 + rng() % 100, 64);
    auto t = d;
    for (auto& s : t.scores) s = f(s);
    monotone_bad += auroc(d) != auroc(t);
    monotone_bad += average_precision(d) != average_precision(t);
    monotone_bad += f1_max(d) != f1_max(t);
    std::vector<SegmentationCase> cases{random_pro_case(rng, false), random_pro_case(rng, true)};
    auto tc = cases;
    for (auto& c : tc) c.scores = c.scores.unaryExpr(f);
    monotone_bad += pro(cases) != pro(tc);
  }
  report("metric oracles",
         auroc_worst <= kAurocTol && ap_err <= kApTol && pro_worst <= kProTol && monotone_bad == 0,
         fmt("AUROC vs Mann-Whitney max |diff| %.3g on 500 (tol %.0e); AP hand case %.17g (|diff| %.3g, tol %.0e); "
             "PRO vs 1001-threshold sweep max |diff| %.3g on 100 (tol %.0e); monotone-transform mismatches %d",
             auroc_worst, kAurocTol, ap, ap_err, kApTol, pro_worst, kProTol, monotone_bad));
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void determinism() {
  const auto root = fs::temp_directory_path() / ("hypermatch_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  std::ostringstream log;
  tools::cmd_synth({SynthSpec{}, root / "case", "synth"}, log);
  tools::BankOptions bank;
  bank.supports = root / "case/support.csv";
  bank.out = root / "bank.hb";
  tools::cmd_bank(bank, log);
  std::vector<std::string> outputs;
  for (std::size_t threads : {1u, 8u}) {
    tools::ScoreOptions opt;
    opt.bank = bank.out;
    opt.queries = root / "case/query.csv";
    const auto tag = std::to_string(threads);
    opt.out = root / ("scores" + tag + ".csv");
    opt.jsonl = root / ("scores" + tag + ".jsonl");
    opt.maps_dir = root / ("maps" + tag);
    opt.threads = threads;
    tools::cmd_score(opt, log);
    std::string all = read_all(opt.out) + read_all(*opt.jsonl);
    for (const auto& q : read_manifest(opt.queries)) {
      all += read_all(*opt.maps_dir / (read_feature_header(q.path).image_id + ".hmap"));
    }
    outputs.push_back(std::move(all));
  }
  fs::remove_all(root);
  report("determinism under parallelism", outputs[0] == outputs[1] && !outputs[0].empty(),
         fmt("score CSV, JSON lines and maps for --threads 1 vs 8: %s (%zu bytes)",
             outputs[0] == outputs[1] ? "byte-identical" : "DIFFER", outputs[0].size()));
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void()>>> checks{
      {"sparsemax oracle equivalence", sparsemax_oracle},
      {"sparsemax hand cases", hand_cases},
      {"simplex invariants", simplex_invariants},
      {"degeneration identities", degenerations},
      {"self-support zero", self_support},
      {"planted-anomaly separability", planted_separability},
      {"distractor suppression", distractor_suppression},
      {"metric oracles", metric_oracles},
      {"determinism under parallelism", determinism},
  };
  for (const auto& [name, check] : checks) {
    try {
      check();
    } catch (const std::exception& e) {
      report(name, false, std::string("exception: ") + e.what());
    }
  }
  std::printf("%d of %zu criteria failed\n", failures, checks.size());
  return failures == 0 ? 0 : 1;
}
