#pragma once

// Little-endian scalar and array encoding shared by the feature, bank and
// map file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hypermatch/error.hpp"

namespace hypermatch::binary {

namespace detail {

inline std::uint32_t bswap32(std::uint32_t v) {
  return ((v & 0x000000FFu) << 24) | ((v & 0x0000FF00u) << 8) |
         ((v & 0x00FF0000u) >> 8) | ((v & 0xFF000000u) >> 24);
}

inline std::uint64_t bswap64(std::uint64_t v) {
  return (static_cast<std::uint64_t>(bswap32(static_cast<std::uint32_t>(v))) << 32) |
         bswap32(static_cast<std::uint32_t>(v >> 32));
}

}  // namespace detail

inline void put_u32(std::ostream& os, std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) v = detail::bswap32(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_f32s(std::ostream& os, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float f : values) put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
}

inline void put_f64s(std::ostream& os, std::span<const double> values) {
  for (double d : values) {
    auto bits = std::bit_cast<std::uint64_t>(d);
    if constexpr (std::endian::native == std::endian::big) bits = detail::bswap64(bits);
    os.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// Reader over an in-memory buffer; every short read is a truncation error.
class Reader {
 public:
  Reader(std::span<const char> data, std::string source)
      : data_(data), source_(std::move(source)) {}

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    if constexpr (std::endian::native == std::endian::big) v = detail::bswap32(v);
    return v;
  }

  std::string string(std::size_t max_len = 1u << 20) {
    std::uint32_t n = u32();
    if (n > max_len) fail(ErrorCategory::format, source_ + ": string length " + std::to_string(n) + " too large");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  void f32s(std::span<float> out) {
    bytes(out.data(), out.size_bytes());
    if constexpr (std::endian::native == std::endian::big) {
      for (float& f : out) f = std::bit_cast<float>(detail::bswap32(std::bit_cast<std::uint32_t>(f)));
    }
  }

  void f64s(std::span<double> out) {
    bytes(out.data(), out.size_bytes());
    if constexpr (std::endian::native == std::endian::big) {
      for (double& d : out) d = std::bit_cast<double>(detail::bswap64(std::bit_cast<std::uint64_t>(d)));
    }
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) {
      fail(ErrorCategory::truncated, source_ + ": truncated at byte " + std::to_string(pos_) +
                                         " (need " + std::to_string(n) + ", have " +
                                         std::to_string(remaining()) + ")");
    }
  }

  std::span<const char> data_;
  std::size_t pos_ = 0;
  std::string source_;
};

}  // namespace hypermatch::binary
