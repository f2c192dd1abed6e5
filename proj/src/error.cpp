#include "bries/error.hpp"

namespace bries {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::EmptyDocument: return "EmptyDocument";
    case ErrorCode::InvalidData: return "InvalidData";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::MalformedRecord: return "MalformedRecord";
    case ErrorCode::UnknownAttackType: return "UnknownAttackType";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::LockHeld: return "LockHeld";
    case ErrorCode::UnknownModel: return "UnknownModel";
    case ErrorCode::EndpointUnreachable: return "EndpointUnreachable";
    case ErrorCode::EndpointRejected: return "EndpointRejected";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::AuthMissing: return "AuthMissing";
    case ErrorCode::EmptyRewrite: return "EmptyRewrite";
    case ErrorCode::UncoveredMeasure: return "UncoveredMeasure";
    case ErrorCode::ScorerFailure: return "ScorerFailure";
    case ErrorCode::MissingGold: return "MissingGold";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::UnpairedGroups: return "UnpairedGroups";
    case ErrorCode::NonSquare: return "NonSquare";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::ConstantColumn: return "ConstantColumn";
    case ErrorCode::DidNotConverge: return "DidNotConverge";
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::InvalidProblem: return "InvalidProblem";
    case ErrorCode::DegenerateTreatment: return "DegenerateTreatment";
    case ErrorCode::NearZeroTreatmentVariance: return "NearZeroTreatmentVariance";
    case ErrorCode::EmptyAfterFiltering: return "EmptyAfterFiltering";
  }
  return "Unknown";
}

}  // namespace bries
