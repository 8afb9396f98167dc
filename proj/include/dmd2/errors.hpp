#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dmd2 {

// Machine-readable failure categories; the CLI prints code_name() verbatim.
enum class ErrorCode {
  kDimension,
  kContract,
  kIndex,
  kNumerical,
  kPoisonedState,
  kSingularTimestep,
  kMatrix,
  kIo,
  kConfigParse,
  kConfigMissingKey,
  kConfigUnknownKey,
  kConfigInvalid,
  kConfigMismatch,
  kVersionMismatch,
  kMissingArtifact,
};

constexpr std::string_view code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension: return "E_DIMENSION";
    case ErrorCode::kContract: return "E_CONTRACT";
    case ErrorCode::kIndex: return "E_INDEX";
    case ErrorCode::kNumerical: return "E_NUMERICAL";
    case ErrorCode::kPoisonedState: return "E_POISONED_STATE";
    case ErrorCode::kSingularTimestep: return "E_SINGULAR_TIMESTEP";
    case ErrorCode::kMatrix: return "E_MATRIX";
    case ErrorCode::kIo: return "E_IO";
    case ErrorCode::kConfigParse: return "E_CONFIG_PARSE";
    case ErrorCode::kConfigMissingKey: return "E_CONFIG_MISSING_KEY";
    case ErrorCode::kConfigUnknownKey: return "E_CONFIG_UNKNOWN_KEY";
    case ErrorCode::kConfigInvalid: return "E_CONFIG_INVALID";
    case ErrorCode::kConfigMismatch: return "E_CONFIG_MISMATCH";
    case ErrorCode::kVersionMismatch: return "E_VERSION_MISMATCH";
    case ErrorCode::kMissingArtifact: return "E_MISSING_ARTIFACT";
  }
  return "E_UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define DMD2_DEFINE_ERROR(Name, Code)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(ErrorCode::Code, what) {} \
  }

DMD2_DEFINE_ERROR(DimensionError, kDimension);
DMD2_DEFINE_ERROR(ContractError, kContract);
DMD2_DEFINE_ERROR(IndexError, kIndex);
DMD2_DEFINE_ERROR(NumericalError, kNumerical);
DMD2_DEFINE_ERROR(PoisonedStateError, kPoisonedState);
DMD2_DEFINE_ERROR(SingularTimestepError, kSingularTimestep);
DMD2_DEFINE_ERROR(MatrixError, kMatrix);
DMD2_DEFINE_ERROR(IoError, kIo);

#undef DMD2_DEFINE_ERROR

}  // namespace dmd2
