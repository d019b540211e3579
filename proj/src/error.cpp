#include "fetwfe/error.hpp"

namespace fetwfe {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Parse: return "Parse";
    case ErrorCode::MissingCell: return "MissingCell";
    case ErrorCode::CohortAtTimeOne: return "CohortAtTimeOne";
    case ErrorCode::NoNeverTreated: return "NoNeverTreated";
    case ErrorCode::InconsistentTreatmentTime: return "InconsistentTreatmentTime";
    case ErrorCode::ZeroVarianceCovariate: return "ZeroVarianceCovariate";
    case ErrorCode::CohortOutOfRange: return "CohortOutOfRange";
    case ErrorCode::RankPrecondition: return "RankPrecondition";
    case ErrorCode::NonPositiveSigma: return "NonPositiveSigma";
    case ErrorCode::DegenerateResiduals: return "DegenerateResiduals";
    case ErrorCode::RankDeficientAtZeroLambda: return "RankDeficientAtZeroLambda";
    case ErrorCode::ZeroResponse: return "ZeroResponse";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::LayoutMismatch: return "LayoutMismatch";
    case ErrorCode::UnknownKey: return "UnknownKey";
    case ErrorCode::NoTreatedUnits: return "NoTreatedUnits";
    case ErrorCode::CohortTimeOutOfRange: return "CohortTimeOutOfRange";
    case ErrorCode::SingularCovariance: return "SingularCovariance";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::RedrawLimitExceeded: return "RedrawLimitExceeded";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::Config: return "Config";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

bool Error::is_input_error() const noexcept {
  switch (code_) {
    case ErrorCode::Parse:
    case ErrorCode::MissingCell:
    case ErrorCode::CohortAtTimeOne:
    case ErrorCode::NoNeverTreated:
    case ErrorCode::InconsistentTreatmentTime:
    case ErrorCode::ZeroVarianceCovariate:
    case ErrorCode::CohortOutOfRange:
    case ErrorCode::RankPrecondition:
    case ErrorCode::NonPositiveSigma:
    case ErrorCode::DegenerateResiduals:
    case ErrorCode::RankDeficientAtZeroLambda:
    case ErrorCode::ZeroResponse:
    case ErrorCode::NoTreatedUnits:
    case ErrorCode::RankDeficient:
    case ErrorCode::Config:
    case ErrorCode::Io:
      return true;
    default:
      return false;
  }
}

}  // namespace fetwfe
