#include "commands.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hypermatch/feature_store.hpp"
#include "hypermatch/file_util.hpp"
#include "hypermatch/image_io.hpp"
#include "hypermatch/manifest.hpp"
#include "hypermatch/parallel.hpp"
#include "png_io.hpp"

namespace hypermatch::tools {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::argument: return kExitUsage;
    case ErrorCategory::metric_undefined: return kExitMetric;
    default: return kExitData;
  }
}

std::size_t threads_from(std::optional<std::size_t> flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("HYPERMATCH_THREADS"); env && *env) {
    char* end = nullptr;
    const auto n = std::strtoull(env, &end, 10);
    if (end && *end == '\0') return static_cast<std::size_t>(n);
    fail(ErrorCategory::argument, std::string("HYPERMATCH_THREADS is not a number: ") + env);
  }
  return 0;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string label_text(std::optional<int> label) { return label ? std::to_string(*label) : "unknown"; }

std::string category_or_default(const std::string& c) { return c.empty() ? "default" : c; }

// Rethrows with the offending file name prepended, keeping the category.
template <typename Fn>
auto with_file(const fs::path& file, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    const std::string what = e.what();
    if (what.find(file.string()) != std::string::npos) throw;
    throw Error(e.category(), file.string() + ": " + what);
  }
}

}  // namespace

void cmd_bank(const BankOptions& opt, std::ostream& log) {
  const auto manifest = read_manifest(opt.supports);
  if (manifest.empty()) fail(ErrorCategory::format, opt.supports.string() + ": support manifest is empty");
  for (const auto& e : manifest) {
    if (e.label && *e.label == 1) {
      if (!opt.force) {
        fail(ErrorCategory::format, opt.supports.string() + ": entry " + e.path.string() +
                                        " is labeled anomalous; pass --force to use it as support");
      }
      log << "warning: using anomalous-labeled entry " << e.path.string() << " as support (--force)\n";
    }
  }
  std::vector<FeatureSet> supports;
  for (const auto& e : manifest) supports.push_back(with_file(e.path, [&] { return read_feature_file(e.path); }));
  const auto bank = build_memory_bank(supports, opt.normalization);
  write_bank_file(bank, opt.out);
  log << "bank: K=" << bank.shot_count << " layers=" << bank.layers.size() << " rows/layer="
      << bank.layers.front().patches.rows() << " D=" << bank.dim() << " normalization=" << to_string(bank.normalization)
      << " -> " << opt.out.string() << '\n';
}

void cmd_score(const ScoreOptions& opt, std::ostream& log) {
  const auto bank = read_bank_file(opt.bank);
  const auto manifest = read_manifest(opt.queries);
  const auto n = manifest.size();

  std::vector<QueryResult> results(n);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> resolution(n);
  parallel_for(n, opt.threads, [&](std::size_t i) {
    const auto& path = manifest[i].path;
    with_file(path, [&] {
      const auto query = read_feature_file(path);
      resolution[i] = query.source_resolution;
      results[i] = score_query(query, bank, opt.scoring);
      return 0;
    });
  });

  if (opt.branch_minmax) {
    std::vector<double> maps;
    std::vector<double> clss;
    for (const auto& r : results) {
      maps.push_back(r.record.s_map);
      clss.push_back(r.record.s_cls);
    }
    minmax_normalize(maps);
    minmax_normalize(clss);
    for (std::size_t i = 0; i < n; ++i) results[i].record.s_image = fuse(maps[i], clss[i], opt.scoring.lambda);
  }

  write_atomically(opt.out, [&](std::ostream& os) {
    os << "image_id,label,s_map,s_cls,s_image\n";
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = results[i].record;
      os << r.image_id << ',' << label_text(manifest[i].label) << ',' << format_double(r.s_map) << ','
         << format_double(r.s_cls) << ',' << format_double(r.s_image) << '\n';
    }
  });
  if (opt.jsonl) {
    write_atomically(*opt.jsonl, [&](std::ostream& os) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto& r = results[i].record;
        json j{{"image_id", r.image_id},
               {"label", manifest[i].label ? json(*manifest[i].label) : json("unknown")},
               {"category", manifest[i].category},
               {"s_map", r.s_map},
               {"s_cls", r.s_cls},
               {"s_image", r.s_image},
               {"lambda", r.lambda}};
        os << j.dump() << '\n';
      }
    });
  }
  if (opt.maps_dir) {
    fs::create_directories(*opt.maps_dir);
    for (const auto& r : results) write_map_file(r.map, *opt.maps_dir / (r.record.image_id + ".hmap"));
  }
  if (opt.heatmap_dir) {
    fs::create_directories(*opt.heatmap_dir);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& grid = results[i].map.grid;
      std::size_t h = opt.upsample_h;
      std::size_t w = opt.upsample_w;
      if (h == 0 || w == 0) {
        h = resolution[i].first ? resolution[i].first : static_cast<std::size_t>(grid.rows());
        w = resolution[i].second ? resolution[i].second : static_cast<std::size_t>(grid.cols());
      }
      const auto pixels = upsample_map(grid, h, w, opt.sigma);
      write_png_gray(to_heatmap(pixels), *opt.heatmap_dir / (results[i].record.image_id + ".png"));
    }
  }
  log << "scored " << n << " queries -> " << opt.out.string() << '\n';
}

std::vector<ScoreRow> read_score_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("image_id,label,s_map,s_cls,s_image", 0) != 0) {
    fail(ErrorCategory::format, path.string() + ": missing score CSV header");
  }
  std::vector<ScoreRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 5) fail(ErrorCategory::format, path.string() + ":" + std::to_string(line_no) + ": expected 5 columns");
    ScoreRow r;
    r.image_id = f[0];
    if (f[1] == "0" || f[1] == "1") r.label = f[1] == "1" ? 1 : 0;
    try {
      r.s_map = std::stod(f[2]);
      r.s_cls = std::stod(f[3]);
      r.s_image = std::stod(f[4]);
    } catch (const std::exception&) {
      fail(ErrorCategory::format, path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

json report_json(const EvalReport& r) {
  json j{{"i_auroc", r.i_auroc}, {"i_f1", r.i_f1}, {"i_ap", r.i_ap}};
  const auto opt = [&](const char* k, const std::optional<double>& v) { j[k] = v ? json(*v) : json(nullptr); };
  opt("p_auroc", r.p_auroc);
  opt("p_f1", r.p_f1);
  opt("p_ap", r.p_ap);
  opt("p_pro", r.p_pro);
  return j;
}

std::string csv_row(const std::string& run, const std::string& category, const EvalReport& r) {
  std::string s = run + "," + category + "," + format_double(r.i_auroc) + "," + format_double(r.i_f1) + "," +
                  format_double(r.i_ap);
  for (const auto& v : {r.p_auroc, r.p_f1, r.p_ap, r.p_pro}) s += "," + (v ? format_double(*v) : std::string());
  return s + "\n";
}

// Per-category reports plus the category mean in per_category/mean fields.
EvalReport evaluate_run(const std::vector<ScoreRow>& rows, const std::map<std::string, const ManifestEntry*>& by_id,
                        const EvalOptions& opt, const std::optional<fs::path>& maps_dir, const fs::path& score_file) {
  struct Bucket {
    LabeledScores image;
    std::vector<SegmentationCase> seg;
  };
  std::map<std::string, Bucket> buckets;
  std::optional<std::pair<Eigen::Index, Eigen::Index>> reference_size;
  struct Pending {
    std::string category;
    const ManifestEntry* entry;
    std::string id;
    int label;
  };
  std::vector<Pending> pending;
  for (const auto& row : rows) {
    const auto it = by_id.find(row.image_id);
    if (it == by_id.end()) {
      fail(ErrorCategory::format, score_file.string() + ": image '" + row.image_id + "' not in manifest " + opt.manifest.string());
    }
    const auto* entry = it->second;
    const auto label = row.label ? row.label : entry->label;
    if (!label) fail(ErrorCategory::format, "entry '" + row.image_id + "' has no label");
    auto& b = buckets[category_or_default(entry->category)];
    b.image.scores.push_back(row.s_image);
    b.image.labels.push_back(static_cast<std::uint8_t>(*label));
    if (opt.pixel) {
      if (*label == 1 && !entry->mask) {
        fail(ErrorCategory::format, "entry '" + row.image_id + "' (" + entry->path.string() + ") is anomalous but has no mask");
      }
      pending.push_back({category_or_default(entry->category), entry, row.image_id, *label});
    }
  }
  if (opt.pixel) {
    if (!maps_dir) fail(ErrorCategory::argument, "pixel metrics need --maps-dir for " + score_file.string());
    std::vector<std::optional<MaskMatrix>> masks;
    for (const auto& p : pending) {
      if (p.entry->mask) {
        masks.push_back(with_file(*p.entry->mask, [&] { return read_mask(*p.entry->mask); }));
        if (!reference_size) reference_size = std::pair{masks.back()->rows(), masks.back()->cols()};
      } else {
        masks.emplace_back();
      }
    }
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const auto& p = pending[i];
      const auto map_path = *maps_dir / (p.id + ".hmap");
      const auto map = with_file(map_path, [&] { return read_map_file(map_path); });
      MaskMatrix mask;
      if (masks[i]) {
        mask = *masks[i];
      } else if (reference_size) {
        mask = MaskMatrix::Zero(reference_size->first, reference_size->second);
      } else {
        mask = MaskMatrix::Zero(map.grid.rows(), map.grid.cols());
      }
      auto pixels = upsample_map(map.grid, static_cast<std::size_t>(mask.rows()), static_cast<std::size_t>(mask.cols()), opt.sigma);
      buckets[p.category].seg.push_back({std::move(pixels), std::move(mask)});
    }
  }
  EvalReport run;
  std::vector<EvalReport> per;
  for (auto& [category, b] : buckets) {
    try {
      auto r = evaluate(b.image, b.seg, opt.pro_limit, opt.per_image_pixel);
      per.push_back(r);
      run.per_category.emplace(category, std::move(r));
    } catch (const Error& e) {
      throw Error(e.category(), "category '" + category + "' in " + score_file.string() + ": " + e.what());
    }
  }
  auto mean = mean_report(per);
  mean.per_category = std::move(run.per_category);
  return mean;
}

}  // namespace

std::string cmd_eval(const EvalOptions& opt) {
  if (opt.scores.empty()) fail(ErrorCategory::argument, "eval: at least one score file is required");
  if (opt.pixel && opt.maps_dirs.size() != opt.scores.size()) {
    fail(ErrorCategory::argument, "eval: --pixel needs one --maps-dir per score file");
  }
  const auto manifest = read_manifest(opt.manifest);
  std::map<std::string, const ManifestEntry*> by_id;
  for (const auto& e : manifest) {
    const auto header = with_file(e.path, [&] { return read_feature_header(e.path); });
    if (!by_id.emplace(header.image_id, &e).second) {
      fail(ErrorCategory::format, opt.manifest.string() + ": duplicate image id '" + header.image_id + "'");
    }
  }

  std::vector<EvalReport> runs;
  for (std::size_t s = 0; s < opt.scores.size(); ++s) {
    const auto rows = read_score_csv(opt.scores[s]);
    const auto maps_dir = opt.pixel ? std::optional<fs::path>(opt.maps_dirs[s]) : std::nullopt;
    runs.push_back(evaluate_run(rows, by_id, opt, maps_dir, opt.scores[s]));
  }

  // Mean over runs, overall and per category.
  EvalReport overall = mean_report(runs);
  for (const auto& [category, _] : runs.front().per_category) {
    std::vector<EvalReport> per;
    for (const auto& r : runs) {
      const auto it = r.per_category.find(category);
      if (it != r.per_category.end()) per.push_back(it->second);
    }
    overall.per_category.emplace(category, mean_report(per));
  }

  json j;
  j["runs"] = json::array();
  for (std::size_t s = 0; s < runs.size(); ++s) {
    json run{{"scores", opt.scores[s].generic_string()}, {"mean", report_json(runs[s])}};
    for (const auto& [c, r] : runs[s].per_category) run["categories"][c] = report_json(r);
    j["runs"].push_back(std::move(run));
  }
  j["mean"] = report_json(overall);
  for (const auto& [c, r] : overall.per_category) j["categories"][c] = report_json(r);
  j["options"] = {{"pixel", opt.pixel}, {"pro_fpr_limit", opt.pro_limit}, {"per_image_pixel", opt.per_image_pixel},
                  {"sigma", opt.sigma}};
  const auto text = j.dump(2) + "\n";
  if (opt.out_json) write_atomically(*opt.out_json, [&](std::ostream& os) { os << text; });
  if (opt.out_csv) {
    write_atomically(*opt.out_csv, [&](std::ostream& os) {
      os << "run,category,i_auroc,i_f1,i_ap,p_auroc,p_f1,p_ap,p_pro\n";
      for (std::size_t s = 0; s < runs.size(); ++s) {
        const auto run = "seed" + std::to_string(s);
        for (const auto& [c, r] : runs[s].per_category) os << csv_row(run, c, r);
        os << csv_row(run, "mean", runs[s]);
      }
      for (const auto& [c, r] : overall.per_category) os << csv_row("mean", c, r);
      os << csv_row("mean", "mean", overall);
    });
  }
  return text;
}

void cmd_synth(const SynthOptions& opt, std::ostream& log) {
  const auto c = generate(opt.spec);
  write_case(c, opt.out, opt.category);
  log << "synth: " << c.supports.size() << " supports, " << c.queries.size() << " queries -> " << opt.out.string() << '\n';
}

void cmd_ablate(const AblateOptions& opt, std::ostream& out) {
  if (opt.values.empty()) fail(ErrorCategory::argument, "ablate: --values is empty");
  const auto shots = opt.shots.empty() ? std::vector<std::size_t>{opt.spec.shots} : opt.shots;
  const auto seeds = opt.seeds.empty() ? std::vector<std::uint64_t>{opt.spec.seed} : opt.seeds;
  for (const auto& v : opt.values) (void)with_knob(opt.pipeline, opt.axis, v);

  // table[value][shot] = mean report over seeds
  std::vector<std::vector<EvalReport>> table(opt.values.size(), std::vector<EvalReport>(shots.size()));
  for (std::size_t k = 0; k < shots.size(); ++k) {
    std::vector<std::vector<EvalReport>> per_value(opt.values.size());
    for (auto seed : seeds) {
      auto spec = opt.spec;
      spec.shots = shots[k];
      spec.seed = seed;
      const auto c = generate(spec);
      const auto rows = run_ablation(c, opt.axis, opt.values, opt.pipeline);
      for (std::size_t v = 0; v < rows.size(); ++v) per_value[v].push_back(rows[v].report);
    }
    for (std::size_t v = 0; v < opt.values.size(); ++v) table[v][k] = mean_report(per_value[v]);
  }

  const char* axis_name = opt.axis == AblationAxis::lookup ? "lookup" : opt.axis == AblationAxis::lambda ? "lambda" : "pooling";
  const auto pct = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << 100.0 * v;
    return s.str();
  };
  std::ostringstream md;
  md << "| " << axis_name;
  for (auto k : shots) md << " | " << k << "-shot I-AUROC | " << k << "-shot I-F1 | " << k << "-shot I-AP | " << k << "-shot P-AUROC";
  md << " |\n|---";
  for (std::size_t k = 0; k < shots.size(); ++k) md << "|---:|---:|---:|---:";
  md << "|\n";
  for (std::size_t v = 0; v < opt.values.size(); ++v) {
    md << "| " << opt.values[v];
    for (const auto& r : table[v]) {
      md << " | " << pct(r.i_auroc) << " | " << pct(r.i_f1) << " | " << pct(r.i_ap) << " | " << pct(r.p_auroc.value_or(0.0));
    }
    md << " |\n";
  }
  out << md.str();
  if (opt.out_md) write_atomically(*opt.out_md, [&](std::ostream& os) { os << md.str(); });
  if (opt.out_csv) {
    write_atomically(*opt.out_csv, [&](std::ostream& os) {
      os << axis_name << ",shots,i_auroc,i_f1,i_ap,p_auroc,p_f1,p_ap,p_pro\n";
      for (std::size_t v = 0; v < opt.values.size(); ++v) {
        for (std::size_t k = 0; k < shots.size(); ++k) {
          const auto& r = table[v][k];
          os << opt.values[v] << ',' << shots[k] << ',' << format_double(r.i_auroc) << ',' << format_double(r.i_f1) << ','
             << format_double(r.i_ap);
          for (const auto& x : {r.p_auroc, r.p_f1, r.p_ap, r.p_pro}) os << ',' << (x ? format_double(*x) : std::string());
          os << '\n';
        }
      }
    });
  }
}

}  // namespace hypermatch::tools
