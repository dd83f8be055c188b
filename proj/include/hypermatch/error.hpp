#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hypermatch {

enum class ErrorCategory {
  argument,            // bad call arguments or CLI usage
  io,                  // filesystem failure
  validation,          // in-memory invariant violated (NaN, shape)
  bad_magic,
  bad_version,
  truncated,
  dimension_mismatch,
  format,              // any other malformed input
  metric_undefined,    // e.g. AUROC on single-class labels
};

inline std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::argument: return "argument";
    case ErrorCategory::io: return "io";
    case ErrorCategory::validation: return "validation";
    case ErrorCategory::bad_magic: return "bad_magic";
    case ErrorCategory::bad_version: return "bad_version";
    case ErrorCategory::truncated: return "truncated";
    case ErrorCategory::dimension_mismatch: return "dimension_mismatch";
    case ErrorCategory::format: return "format";
    case ErrorCategory::metric_undefined: return "metric_undefined";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& what) {
  throw Error(c, what);
}

}  // namespace hypermatch
