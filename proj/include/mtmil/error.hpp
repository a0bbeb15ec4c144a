#pragma once

#include <stdexcept>
#include <string>

namespace mtmil {

// Error codes grouped by the exit-code category the CLI maps them to:
// config (2), data/format (3), infeasible (4), numeric (5).
enum class ErrorCode {
  ConfigError,
  IdMismatch,
  StoreIo,
  FormatError,
  ValidationError,
  UnknownTarget,
  GenerationError,
  MissingTruth,
  EmptyCohort,
  EmptyDev,
  InfeasibleSplit,
  InfeasibleRoles,
  ShapeError,
  NumericError,
  NoSupervision,
  DegeneratePrevalence,
  InvalidEpsilon,
  SelectionInfeasible,
  UndefinedAUC,
  DegenerateBootstrap,
  ZeroVariance,
  TooFew,
  AllZero,
  TargetMismatch,
  DegenerateSplit,
};

const char* error_code_name(ErrorCode code);

// Exit-code category per the CLI contract.
int error_exit_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mtmil
