#include "mtmil/error.hpp"

namespace mtmil {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::StoreIo: return "StoreIo";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::UnknownTarget: return "UnknownTarget";
    case ErrorCode::GenerationError: return "GenerationError";
    case ErrorCode::MissingTruth: return "MissingTruth";
    case ErrorCode::EmptyCohort: return "EmptyCohort";
    case ErrorCode::EmptyDev: return "EmptyDev";
    case ErrorCode::InfeasibleSplit: return "InfeasibleSplit";
    case ErrorCode::InfeasibleRoles: return "InfeasibleRoles";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::NumericError: return "NumericError";
    case ErrorCode::NoSupervision: return "NoSupervision";
    case ErrorCode::DegeneratePrevalence: return "DegeneratePrevalence";
    case ErrorCode::InvalidEpsilon: return "InvalidEpsilon";
    case ErrorCode::SelectionInfeasible: return "SelectionInfeasible";
    case ErrorCode::UndefinedAUC: return "UndefinedAUC";
    case ErrorCode::DegenerateBootstrap: return "DegenerateBootstrap";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::TooFew: return "TooFew";
    case ErrorCode::AllZero: return "AllZero";
    case ErrorCode::TargetMismatch: return "TargetMismatch";
    case ErrorCode::DegenerateSplit: return "DegenerateSplit";
  }
  return "UnknownError";
}

int error_exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::UnknownTarget:
    case ErrorCode::InvalidEpsilon:
      return 2;
    case ErrorCode::IdMismatch:
    case ErrorCode::StoreIo:
    case ErrorCode::FormatError:
    case ErrorCode::ValidationError:
    case ErrorCode::MissingTruth:
    case ErrorCode::TargetMismatch:
      return 3;
    case ErrorCode::EmptyCohort:
    case ErrorCode::EmptyDev:
    case ErrorCode::InfeasibleSplit:
    case ErrorCode::InfeasibleRoles:
    case ErrorCode::NoSupervision:
    case ErrorCode::SelectionInfeasible:
    case ErrorCode::DegenerateSplit:
      return 4;
    case ErrorCode::GenerationError:
    case ErrorCode::ShapeError:
    case ErrorCode::NumericError:
    case ErrorCode::DegeneratePrevalence:
    case ErrorCode::UndefinedAUC:
    case ErrorCode::DegenerateBootstrap:
    case ErrorCode::ZeroVariance:
    case ErrorCode::TooFew:
    case ErrorCode::AllZero:
      return 5;
  }
  return 1;
}

}  // namespace mtmil
