#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <system_error>
#include <vector>

#include "hypermatch/error.hpp"

namespace hypermatch {

inline std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) fail(ErrorCategory::io, "cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<char> buf(size);
  in.seekg(0);
  if (size > 0 && !in.read(buf.data(), static_cast<std::streamsize>(size))) {
    fail(ErrorCategory::io, "read failed: " + path.string());
  }
  return buf;
}

// Writes through a sibling temp file and renames on success, so a failed
// write never leaves a partial file at `path`.
inline void write_atomically(const std::filesystem::path& path,
                             const std::function<void(std::ostream&)>& body) {
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCategory::io, "cannot create " + tmp.string());
    try {
      body(out);
      out.flush();
    } catch (...) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw;
    }
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      fail(ErrorCategory::io, "write failed: " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    fail(ErrorCategory::io, "cannot rename into " + path.string());
  }
}

}  // namespace hypermatch
