#pragma once

// Line-oriented CSV manifests: path,label,mask,category
// label is 0, 1 or empty/"unknown"; relative paths resolve against the
// manifest's directory.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hypermatch/error.hpp"
#include "hypermatch/file_util.hpp"

namespace hypermatch {

struct ManifestEntry {
  std::filesystem::path path;
  std::optional<int> label;  // nullopt = unknown
  std::optional<std::filesystem::path> mask;
  std::string category;
};

using Manifest = std::vector<ManifestEntry>;

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline Manifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir, const std::string& source) {
  Manifest m;
  std::set<std::filesystem::path> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto trimmed = detail::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    auto fields = detail::split_csv(trimmed);
    if (line_no == 1 && !fields.empty() && fields[0] == "path") continue;
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.empty() || fields.size() > 4 || fields[0].empty()) {
      fail(ErrorCategory::format, where + ": expected path,label,mask,category");
    }
    fields.resize(4);
    ManifestEntry e;
    e.path = fields[0];
    if (e.path.is_relative()) e.path = base_dir / e.path;
    e.path = e.path.lexically_normal();
    if (fields[1] == "0" || fields[1] == "1") {
      e.label = fields[1] == "1" ? 1 : 0;
    } else if (!fields[1].empty() && fields[1] != "unknown") {
      fail(ErrorCategory::format, where + ": label must be 0, 1 or unknown");
    }
    if (!fields[2].empty()) {
      std::filesystem::path mask = fields[2];
      if (mask.is_relative()) mask = base_dir / mask;
      e.mask = mask.lexically_normal();
    }
    e.category = fields[3];
    if (!seen.insert(e.path).second) fail(ErrorCategory::format, where + ": duplicate path " + e.path.string());
    m.push_back(std::move(e));
  }
  return m;
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::io, "cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path(), path.string());
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  const auto base = path.parent_path();
  const auto rel = [&](const std::filesystem::path& p) { return p.lexically_relative(base).generic_string(); };
  write_atomically(path, [&](std::ostream& os) {
    os << "path,label,mask,category\n";
    for (const auto& e : m) {
      os << rel(e.path) << ',' << (e.label ? std::to_string(*e.label) : std::string("unknown")) << ','
         << (e.mask ? rel(*e.mask) : std::string()) << ',' << e.category << '\n';
    }
  });
}

}  // namespace hypermatch
