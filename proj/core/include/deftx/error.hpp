#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace deftx {

// Error classes surfaced by the library. The CLI maps each kind to a
// distinct process exit code.
enum class ErrorKind {
  Dimensionality,    // input tensor has the wrong number of dimensions
  NumericInput,      // non-finite value where a finite one is required
  Budget,            // requested k exceeds what is selectable
  Incompatibility,   // parameter sets / masks with mismatched schemas
  EmptyObjective,    // a batch or dataset with nothing to score
  TrainingFailure,   // non-finite loss or gradient during training
  Format,            // corrupt or truncated file
  Validation,        // well-formed file whose contents violate an invariant
  Evaluation,        // empty test set and friends
  Io,                // filesystem-level failure
  Config,            // unparseable or inconsistent configuration
  Usage,             // bad command-line invocation
};

const char* error_kind_name(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  // `detail` carries the step index for TrainingFailure and the byte
  // offset for Format errors.
  Error(ErrorKind kind, const std::string& message, std::uint64_t detail)
      : std::runtime_error(message), kind_(kind), detail_(detail) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::uint64_t> detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::optional<std::uint64_t> detail_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

[[noreturn]] inline void raise(ErrorKind kind, const std::string& message,
                               std::uint64_t detail) {
  throw Error(kind, message, detail);
}

inline const char* error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Dimensionality: return "dimensionality";
    case ErrorKind::NumericInput: return "numeric-input";
    case ErrorKind::Budget: return "budget";
    case ErrorKind::Incompatibility: return "incompatibility";
    case ErrorKind::EmptyObjective: return "empty-objective";
    case ErrorKind::TrainingFailure: return "training-failure";
    case ErrorKind::Format: return "format";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Evaluation: return "evaluation";
    case ErrorKind::Io: return "io";
    case ErrorKind::Config: return "config";
    case ErrorKind::Usage: return "usage";
  }
  return "unknown";
}

}  // namespace deftx
