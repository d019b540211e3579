#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fetwfe {

/// Balanced staggered-adoption panel.
///
/// Times are normalized to 1..T; `time_labels[t - 1]` keeps the source label
/// (e.g. a calendar year) for reporting. Cohorts are identified by their
/// normalized first-treatment time r in 2..T, and cohort 0 denotes units that
/// are never treated.
struct PanelDataset {
  int n_units = 0;
  int n_times = 0;
  std::vector<int> cohorts;     // sorted, distinct, each in [2, T]
  std::vector<int> assignment;  // per unit: 0 or an element of `cohorts`
  Eigen::MatrixXd covariates;   // N x d, time invariant
  Eigen::MatrixXd response;     // N x T

  std::vector<std::string> unit_ids;
  std::vector<std::string> covariate_names;
  std::vector<long long> time_labels;

  int n_covariates() const { return static_cast<int>(covariates.cols()); }
  int n_cohorts() const { return static_cast<int>(cohorts.size()); }
  long long label_of(int t) const { return time_labels.at(static_cast<std::size_t>(t - 1)); }

  /// Checks every dataset invariant and throws fetwfe::Error on the first
  /// violation. Missing ids, names or labels are filled with defaults.
  static PanelDataset make(int n_times, std::vector<int> assignment, Eigen::MatrixXd covariates,
                           Eigen::MatrixXd response, std::vector<std::string> unit_ids = {},
                           std::vector<std::string> covariate_names = {},
                           std::vector<long long> time_labels = {});
};

struct CohortCounts {
  int n_0 = 0;
  std::map<int, int> n_r;  // cohort start time -> units
  int n_tau = 0;

  int total() const { return n_0 + n_tau; }
  int at(int cohort) const;
};

CohortCounts cohort_counts(const PanelDataset& data);

/// Builds counts from an explicit assignment vector, e.g. an unlabeled
/// second sample that only records cohort membership.
CohortCounts cohort_counts(const std::vector<int>& assignment, const std::vector<int>& cohorts);

enum class Severity { Info, Warning, Error };

struct ValidationIssue {
  Severity severity = Severity::Info;
  std::string code;
  std::string message;
  std::optional<int> cohort;  // normalized cohort time, 0 for never treated
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  bool ok() const;
  int count(Severity s) const;
  bool operator==(const ValidationReport&) const;
};

bool operator==(const ValidationIssue& a, const ValidationIssue& b);

/// Flags groups smaller than d + 1 units (they make the saturated design
/// rank deficient) and fails hard when the design would have more columns
/// than observations.
ValidationReport validate_rank_preconditions(const PanelDataset& data);

struct LoadOptions {
  /// Remove units whose first treatment time maps to the first period
  /// instead of rejecting the file.
  bool drop_always_treated = false;
};

struct LoadedPanel {
  PanelDataset data;
  std::vector<std::string> warnings;
  std::vector<std::string> dropped_units;
};

/// Reads long-format CSV with header `unit,time,response,cohort,x1,...,xd`.
/// Parse failures carry the 1-based line and the column name.
LoadedPanel load_panel(std::istream& in, const LoadOptions& options = {});
LoadedPanel load_panel_csv(const std::string& path, const LoadOptions& options = {});

/// Writes the long-format representation accepted by load_panel.
void write_panel_csv(std::ostream& out, const PanelDataset& data);

}  // namespace fetwfe
