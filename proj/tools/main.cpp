#include <CLI11.hpp>

#include <iostream>
#include <sstream>

#include "commands.hpp"

namespace {

using namespace hypermatch;
using namespace hypermatch::tools;

template <typename T>
std::vector<T> split_list(const std::string& text, T (*convert)(const std::string&)) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(convert(item));
  }
  return out;
}

std::size_t to_size(const std::string& s) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos == s.size()) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  fail(ErrorCategory::argument, "not a non-negative integer: '" + s + "'");
}

std::uint64_t to_u64(const std::string& s) { return to_size(s); }
std::string to_string_id(const std::string& s) { return s; }

struct ScoringFlags {
  std::string lookup = "sparse";
  std::string pooling = "max";
  double lambda = kDefaultLambda;
  bool branch_minmax = false;

  void add(CLI::App* app) {
    app->add_option("--lookup", lookup, "Lookup strategy: sparse, dense, max or topN")->capture_default_str();
    app->add_option("--pooling", pooling, "Map pooling: max, topN or topP%")->capture_default_str();
    app->add_option("--lambda", lambda, "Fusion weight of the map branch in [0,1]")->capture_default_str();
    app->add_flag("--branch-norm", branch_minmax, "Min-max each branch across the query set before fusion");
  }
  ScoringConfig config() const {
    ScoringConfig c;
    c.lookup = parse_lookup(lookup);
    c.pooling = parse_pooling(pooling);
    if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorCategory::argument, "--lambda must lie in [0,1]");
    c.lambda = lambda;
    return c;
  }
};

void add_spec_flags(CLI::App* app, SynthSpec& s) {
  app->add_option("--seed", s.seed, "Generator seed")->capture_default_str();
  app->add_option("--k", s.shots, "Support images")->capture_default_str();
  app->add_option("--grid-h", s.grid_h, "Patch grid height")->capture_default_str();
  app->add_option("--grid-w", s.grid_w, "Patch grid width")->capture_default_str();
  app->add_option("--dim", s.dim, "Feature dimension")->capture_default_str();
  app->add_option("--layers", s.layer_count, "Layer count")->capture_default_str();
  app->add_option("--clusters", s.n_clusters, "Normal cluster count")->capture_default_str();
  app->add_option("--queries", s.query_count, "Query images")->capture_default_str();
  app->add_option("--anomaly-rate", s.anomaly_rate, "Fraction of anomalous queries")->capture_default_str();
  app->add_option("--anomaly-cells", s.anomaly_cells, "Cells per planted anomaly")->capture_default_str();
  app->add_option("--anomaly-shift", s.anomaly_shift, "Anomaly displacement")->capture_default_str();
  app->add_option("--cls-shift", s.cls_shift, "CLS displacement of anomalous queries")->capture_default_str();
  app->add_option("--distractors", s.distractor_count, "Distractor cells per support")->capture_default_str();
  app->add_option("--noise", s.noise_sigma, "Patch noise norm")->capture_default_str();
  app->add_option("--cls-noise", s.cls_noise_sigma, "CLS noise norm")->capture_default_str();
  app->add_option("--clutter-rate", s.clutter_rate, "Fraction of queries with one clutter cell")->capture_default_str();
  app->add_option("--clutter-shift", s.clutter_shift, "Clutter displacement")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot anomaly detection over pre-extracted features"};
  app.require_subcommand(1);

  std::string normalization = "l2";
  std::optional<std::size_t> threads;

  BankOptions bank;
  auto* bank_cmd = app.add_subcommand("bank", "Build a memory bank from support feature files");
  bank_cmd->add_option("--supports", bank.supports, "Support manifest CSV")->required();
  bank_cmd->add_option("--out", bank.out, "Bank file to write")->required();
  bank_cmd->add_option("--normalization", normalization, "Row normalization: l2 or none")->capture_default_str();
  bank_cmd->add_flag("--force", bank.force, "Accept anomalous-labeled entries as supports");

  ScoreOptions score;
  ScoringFlags score_flags;
  std::string jsonl, maps_dir, heatmap_dir;
  auto* score_cmd = app.add_subcommand("score", "Score query feature files against a bank");
  score_cmd->add_option("--bank", score.bank, "Bank file")->required();
  score_cmd->add_option("--queries", score.queries, "Query manifest CSV")->required();
  score_cmd->add_option("--out", score.out, "Score CSV to write")->required();
  score_cmd->add_option("--jsonl", jsonl, "Also write JSON lines here");
  score_cmd->add_option("--maps-dir", maps_dir, "Write patch-grid maps (.hmap) here");
  score_cmd->add_option("--heatmap-dir", heatmap_dir, "Write upsampled PNG heatmaps here");
  score_cmd->add_option("--upsample-h", score.upsample_h, "Heatmap height (0: source resolution)");
  score_cmd->add_option("--upsample-w", score.upsample_w, "Heatmap width (0: source resolution)");
  score_cmd->add_option("--sigma", score.sigma, "Gaussian smoothing sigma in pixels")->capture_default_str();
  score_cmd->add_option("--threads", threads, "Worker threads, 0 for machine default");
  score_flags.add(score_cmd);

  EvalOptions eval;
  std::string eval_json, eval_csv;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate score CSVs against labels and masks");
  eval_cmd->add_option("--scores", eval.scores, "Score CSV, one per seed")->required();
  eval_cmd->add_option("--manifest", eval.manifest, "Query manifest with labels and masks")->required();
  eval_cmd->add_flag("--pixel", eval.pixel, "Compute pixel metrics");
  eval_cmd->add_option("--maps-dir", eval.maps_dirs, "Map directory, one per score file");
  eval_cmd->add_option("--pro-limit", eval.pro_limit, "FPR integration limit for PRO")->capture_default_str();
  eval_cmd->add_flag("--per-image-pixel", eval.per_image_pixel, "Average pixel metrics per image");
  eval_cmd->add_option("--sigma", eval.sigma, "Gaussian smoothing sigma in pixels")->capture_default_str();
  eval_cmd->add_option("--out", eval_json, "Report JSON to write");
  eval_cmd->add_option("--csv", eval_csv, "Report CSV to write");

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic benchmark case");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--category", synth.category, "Category name")->capture_default_str();
  add_spec_flags(synth_cmd, synth.spec);

  AblateOptions ablate;
  ScoringFlags ablate_flags;
  std::string axis = "lookup", values, shots, seeds, ablate_md, ablate_csv;
  auto* ablate_cmd = app.add_subcommand("ablate", "Sweep one knob over synthetic cases");
  ablate_cmd->add_option("--axis", axis, "lookup, lambda or pooling")->capture_default_str();
  ablate_cmd->add_option("--values", values, "Comma-separated knob values")->required();
  ablate_cmd->add_option("--shots", shots, "Comma-separated shot counts");
  ablate_cmd->add_option("--seeds", seeds, "Comma-separated seeds");
  ablate_cmd->add_option("--normalization", normalization, "Row normalization: l2 or none")->capture_default_str();
  ablate_cmd->add_option("--threads", threads, "Worker threads, 0 for machine default");
  ablate_cmd->add_option("--out", ablate_md, "Markdown table to write");
  ablate_cmd->add_option("--csv", ablate_csv, "CSV table to write");
  add_spec_flags(ablate_cmd, ablate.spec);
  ablate_flags.add(ablate_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error[argument]: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (*bank_cmd) {
      bank.normalization = parse_normalization(normalization);
      cmd_bank(bank, std::cerr);
    } else if (*score_cmd) {
      score.scoring = score_flags.config();
      score.branch_minmax = score_flags.branch_minmax;
      if (!jsonl.empty()) score.jsonl = jsonl;
      if (!maps_dir.empty()) score.maps_dir = maps_dir;
      if (!heatmap_dir.empty()) score.heatmap_dir = heatmap_dir;
      score.threads = threads_from(threads);
      cmd_score(score, std::cerr);
    } else if (*eval_cmd) {
      if (!eval_json.empty()) eval.out_json = eval_json;
      if (!eval_csv.empty()) eval.out_csv = eval_csv;
      std::cout << cmd_eval(eval);
    } else if (*synth_cmd) {
      cmd_synth(synth, std::cerr);
    } else if (*ablate_cmd) {
      ablate.axis = parse_axis(axis);
      ablate.values = split_list(values, to_string_id);
      ablate.shots = split_list(shots, to_size);
      ablate.seeds = split_list(seeds, to_u64);
      ablate.pipeline.normalization = parse_normalization(normalization);
      ablate.pipeline.scoring = ablate_flags.config();
      ablate.pipeline.branch_minmax = ablate_flags.branch_minmax;
      ablate.pipeline.threads = threads_from(threads);
      if (!ablate_md.empty()) ablate.out_md = ablate_md;
      if (!ablate_csv.empty()) ablate.out_csv = ablate_csv;
      cmd_ablate(ablate, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error[" << category_name(e.category()) << "]: " << e.what() << '\n';
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[io]: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
