#include "stripeid/error.hpp"

namespace stripeid {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidShape: return "invalid-shape";
    case ErrorCode::kEstimationFailed: return "estimation-failed";
    case ErrorCode::kInvalidRoi: return "invalid-roi";
    case ErrorCode::kTooSmall: return "too-small";
    case ErrorCode::kOutOfBounds: return "out-of-bounds";
    case ErrorCode::kInvalidInput: return "invalid-input";
    case ErrorCode::kEmptyPool: return "empty-pool";
    case ErrorCode::kInsufficientData: return "insufficient-data";
    case ErrorCode::kInsufficientDatabase: return "insufficient-database";
    case ErrorCode::kContract: return "contract";
    case ErrorCode::kCatalogIntegrity: return "catalog-integrity";
    case ErrorCode::kNotFound: return "not-found";
    case ErrorCode::kNoGeneration: return "no-generation";
    case ErrorCode::kIncompatible: return "incompatible";
    case ErrorCode::kEmptyEval: return "empty-eval";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace stripeid
