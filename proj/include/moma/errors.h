#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace moma {

// Bad run configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or missing benchmark data. Maps to CLI exit code 3.
class DataError : public std::runtime_error {
 public:
  enum class Kind { kSchema, kUnknownCategory, kNotEnoughItems, kIo };

  DataError(Kind kind, std::string message, std::size_t line = 0)
      : std::runtime_error(std::move(message)), kind_(kind), line_(line) {}

  Kind kind() const { return kind_; }
  // 1-based line of the offending record; 0 when not line-specific.
  std::size_t line() const { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

// Failure inside a MOMA assistant-agent stage.
class PipelineError : public std::runtime_error {
 public:
  enum class Kind {
    kMaskLeak,
    kUnparseableAgentOutput,
    kMaskTokenDropped,
    kAdjectiveCountMismatch,
  };

  PipelineError(Kind kind, const std::string& message)
      : std::runtime_error(kind_name(kind) + ": " + message), kind_(kind) {}

  Kind kind() const { return kind_; }

  static std::string kind_name(Kind kind) {
    switch (kind) {
      case Kind::kMaskLeak:
        return "MaskLeak";
      case Kind::kUnparseableAgentOutput:
        return "UnparseableAgentOutput";
      case Kind::kMaskTokenDropped:
        return "MaskTokenDropped";
      case Kind::kAdjectiveCountMismatch:
        return "AdjectiveCountMismatch";
    }
    return "PipelineError";
  }

 private:
  Kind kind_;
};

// Scoring / reporting preconditions (ZeroReference, ObjectiveMismatch,
// MissingReferenceMethod, MissingScores).
class MetricError : public std::runtime_error {
 public:
  enum class Kind {
    kZeroReference,
    kObjectiveMismatch,
    kMissingReferenceMethod,
    kMissingScores,
  };

  MetricError(Kind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace moma
