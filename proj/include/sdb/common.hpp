#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sdb {

// Error taxonomy shared by the whole library. The CLI maps categories to
// exit diagnostics; tests match on them.
enum class ErrorCategory {
  parameter,  // bad argument value (range, enum, label out of range)
  shape,      // tensor/key/batch shape mismatch
  numeric,    // NaN/Inf encountered, divergence
  integrity,  // checksum mismatch, truncated/corrupt file
  version,    // unsupported on-disk format version
  contract,   // API misuse (e.g. updating a frozen model)
  config,     // inconsistent configuration
  io,         // filesystem failures
  report,     // missing cells / unreproducible report input
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::parameter: return "parameter";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::integrity: return "integrity";
    case ErrorCategory::version: return "version";
    case ErrorCategory::contract: return "contract";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::report: return "report";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& what)
      : std::runtime_error(what), cat_(cat) {}
  ErrorCategory category() const { return cat_; }

 private:
  ErrorCategory cat_;
};

[[noreturn]] inline void fail(ErrorCategory cat, const std::string& msg) {
  throw Error(cat, msg);
}

inline void require(bool cond, ErrorCategory cat, const std::string& msg) {
  if (!cond) fail(cat, msg);
}

}  // namespace sdb
