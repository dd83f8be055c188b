#pragma once

// Minimal binary PGM (P5) I/O for masks and heatmaps.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>

#include "hypermatch/error.hpp"
#include "hypermatch/file_util.hpp"
#include "hypermatch/metrics.hpp"

namespace hypermatch {

using GrayImage = Eigen::Matrix<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void write_pgm(const GrayImage& img, std::uint16_t max_value, const std::filesystem::path& path) {
  if (img.size() == 0 || max_value == 0) fail(ErrorCategory::argument, "write_pgm: empty image");
  write_atomically(path, [&](std::ostream& os) {
    os << "P5\n" << img.cols() << ' ' << img.rows() << '\n' << max_value << '\n';
    for (Eigen::Index i = 0; i < img.size(); ++i) {
      const auto v = img.data()[i];
      if (max_value < 256) {
        os.put(static_cast<char>(v));
      } else {
        os.put(static_cast<char>(v >> 8));
        os.put(static_cast<char>(v & 0xFF));
      }
    }
  });
}

inline GrayImage read_pgm(const std::filesystem::path& path, std::uint16_t* max_value_out = nullptr) {
  const auto bytes = slurp(path);
  std::size_t pos = 0;
  const auto token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) t.push_back(bytes[pos++]);
    return t;
  };
  const std::string src = path.string();
  if (token() != "P5") fail(ErrorCategory::bad_magic, src + ": not a binary PGM (P5)");
  long w = 0;
  long h = 0;
  long maxv = 0;
  try {
    w = std::stol(token());
    h = std::stol(token());
    maxv = std::stol(token());
  } catch (const std::exception&) {
    fail(ErrorCategory::format, src + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxv <= 0 || maxv > 65535) fail(ErrorCategory::format, src + ": invalid PGM dimensions");
  ++pos;  // single whitespace after maxval
  const std::size_t bpp = maxv < 256 ? 1 : 2;
  const auto need = static_cast<std::size_t>(w * h) * bpp;
  if (bytes.size() < pos + need) fail(ErrorCategory::truncated, src + ": PGM pixel data truncated");
  GrayImage img(h, w);
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos + static_cast<std::size_t>(i) * bpp);
    img.data()[i] = bpp == 1 ? p[0] : static_cast<std::uint16_t>((p[0] << 8) | p[1]);
  }
  if (max_value_out) *max_value_out = static_cast<std::uint16_t>(maxv);
  return img;
}

inline MaskMatrix to_mask(const GrayImage& img) { return (img.array() > 0).cast<std::uint8_t>(); }

inline GrayImage from_mask(const MaskMatrix& mask) { return (mask.array() > 0).cast<std::uint16_t>() * 255; }

/// Per-image min-max scaling to 8 bits, for inspection only.
inline GrayImage to_heatmap(const RowMatrixD& scores) {
  const double lo = scores.minCoeff();
  const double hi = scores.maxCoeff();
  GrayImage img(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double t = hi > lo ? (scores.data()[i] - lo) / (hi - lo) : 0.0;
    img.data()[i] = static_cast<std::uint16_t>(std::lround(255.0 * t));
  }
  return img;
}

}  // namespace hypermatch
