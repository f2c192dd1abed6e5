#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace bries {

enum class ErrorCode {
  // prompt_engine
  EmptyDocument,
  // taxonomy / config / io
  InvalidData,
  FileNotFound,
  MalformedRecord,
  UnknownAttackType,
  InvalidConfig,
  LockHeld,
  // llm_gateway
  UnknownModel,
  EndpointUnreachable,
  EndpointRejected,
  MalformedResponse,
  AuthMissing,
  // agents
  EmptyRewrite,
  // sec_signatures
  UncoveredMeasure,
  ScorerFailure,
  // evaluation
  MissingGold,
  IdMismatch,
  UnpairedGroups,
  // notears_sem
  NonSquare,
  TooFewRows,
  ConstantColumn,
  DidNotConverge,
  // ate_dml
  EmptyData,
  InvalidProblem,
  DegenerateTreatment,
  NearZeroTreatmentVariance,
  // experiment_runner
  EmptyAfterFiltering,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so that
/// callers (and the batch/run-record layers) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace bries
