#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stripeid {

enum class ErrorCode {
  kInvalidShape,
  kEstimationFailed,
  kInvalidRoi,
  kTooSmall,
  kOutOfBounds,
  kInvalidInput,
  kEmptyPool,
  kInsufficientData,
  kInsufficientDatabase,
  kContract,
  kCatalogIntegrity,
  kNotFound,
  kNoGeneration,
  kIncompatible,
  kEmptyEval,
  kFormat,
  kIo,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (CLI, HTTP layer) can map it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace stripeid
