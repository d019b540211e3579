#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fetwfe {

enum class ErrorCode {
  // panel
  Parse,
  MissingCell,
  CohortAtTimeOne,
  NoNeverTreated,
  InconsistentTreatmentTime,
  ZeroVarianceCovariate,
  // design
  CohortOutOfRange,
  RankPrecondition,
  // gls
  NonPositiveSigma,
  DegenerateResiduals,
  // solver
  RankDeficientAtZeroLambda,
  ZeroResponse,
  DimensionMismatch,
  // effects
  LayoutMismatch,
  UnknownKey,
  NoTreatedUnits,
  CohortTimeOutOfRange,
  // inference
  SingularCovariance,
  EmptySelection,
  // simulate
  RedrawLimitExceeded,
  RankDeficient,
  // cli
  Config,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every library failure carries a code and the module that raised it.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string module, const std::string& what)
      : std::runtime_error(what), code_(code), module_(std::move(module)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& module() const noexcept { return module_; }

  /// True for failures caused by the caller's data or configuration rather
  /// than by the library itself.
  bool is_input_error() const noexcept;

 private:
  ErrorCode code_;
  std::string module_;
};

}  // namespace fetwfe
