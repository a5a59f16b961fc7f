#pragma once

#include <stdexcept>
#include <string>

namespace jogs {

enum class ErrorKind {
  kInvalidArgument,
  kDegenerate,
  kInsufficientData,
  kEstimationFailure,
  kRankDeficient,
  kNoConstraint,
  kDivergence,
  kConfig,
  kData,
  kIo,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; `kind()` lets callers (and the CLI
// exit-code mapping) branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  /// Same kind, message prefixed with `context` (kind tag kept once, in front).
  static Error with_context(const Error& inner, const std::string& context) {
    return Error(inner.kind_, std::string(to_string(inner.kind_)) + ": " + context + ": " +
                                  (inner.what() + std::string(to_string(inner.kind_)).size() + 2),
                 0);
  }

 private:
  Error(ErrorKind kind, const std::string& full, int) : std::runtime_error(full), kind_(kind) {}

  ErrorKind kind_;
};

}  // namespace jogs
