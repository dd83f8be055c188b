#pragma once

// Subcommand implementations behind the hypermatch CLI. Each throws
// hypermatch::Error on failure; main() maps categories to exit codes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hypermatch/memory_matching.hpp"
#include "hypermatch/metrics.hpp"
#include "hypermatch/scoring.hpp"
#include "hypermatch/synth.hpp"

namespace hypermatch::tools {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitMetric = 4;

int exit_code_for(ErrorCategory c);

/// Thread count from --threads, else HYPERMATCH_THREADS, else 0 (machine default).
std::size_t threads_from(std::optional<std::size_t> flag);

struct BankOptions {
  std::filesystem::path supports;
  std::filesystem::path out;
  Normalization normalization = Normalization::l2;
  bool force = false;
};

void cmd_bank(const BankOptions& opt, std::ostream& log);

struct ScoreOptions {
  std::filesystem::path bank;
  std::filesystem::path queries;
  std::filesystem::path out;
  std::optional<std::filesystem::path> jsonl;
  ScoringConfig scoring;
  bool branch_minmax = false;
  std::optional<std::filesystem::path> maps_dir;
  std::optional<std::filesystem::path> heatmap_dir;
  std::size_t upsample_h = 0;  // 0: source resolution from the feature file
  std::size_t upsample_w = 0;
  double sigma = 4.0;
  std::size_t threads = 0;
};

void cmd_score(const ScoreOptions& opt, std::ostream& log);

struct EvalOptions {
  std::vector<std::filesystem::path> scores;
  std::filesystem::path manifest;
  bool pixel = false;
  std::vector<std::filesystem::path> maps_dirs;  // one per score file
  double pro_limit = kDefaultProFprLimit;
  bool per_image_pixel = false;
  double sigma = 4.0;
  std::optional<std::filesystem::path> out_json;
  std::optional<std::filesystem::path> out_csv;
};

/// Returns the report as JSON (also written to out_json when set).
std::string cmd_eval(const EvalOptions& opt);

struct SynthOptions {
  SynthSpec spec;
  std::filesystem::path out;
  std::string category = "synth";
};

void cmd_synth(const SynthOptions& opt, std::ostream& log);

struct AblateOptions {
  SynthSpec spec;
  AblationAxis axis = AblationAxis::lookup;
  std::vector<std::string> values;
  std::vector<std::size_t> shots;      // empty: spec.shots only
  std::vector<std::uint64_t> seeds;    // empty: spec.seed only
  PipelineConfig pipeline;
  std::optional<std::filesystem::path> out_md;
  std::optional<std::filesystem::path> out_csv;
};

/// Writes the Markdown table to `out`.
void cmd_ablate(const AblateOptions& opt, std::ostream& out);

// Exposed for tests.
struct ScoreRow {
  std::string image_id;
  std::optional<int> label;
  double s_map = 0.0;
  double s_cls = 0.0;
  double s_image = 0.0;
};

std::vector<ScoreRow> read_score_csv(const std::filesystem::path& path);
std::string format_double(double v);

}  // namespace hypermatch::tools
