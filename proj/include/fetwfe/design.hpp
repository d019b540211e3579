#pragma once

#include "fetwfe/panel.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fetwfe {

struct ParamCount {
  int p = 0;
  int w_count = 0;  // number of (cohort, time) treatment effects
};

/// Column count of the saturated design for T periods, the given cohort
/// start times and d covariates.
ParamCount count_params(int n_times, const std::vector<int>& cohorts, int d);

/// Column bookkeeping for the saturated design. Blocks appear in the order
///
///   cohort FE (R) | time FE (T-1) | covariates (d) | cohort x cov (dR)
///   | time x cov (d(T-1)) | treatment (W) | treatment x cov (dW)
///
/// and interaction blocks are grouped by covariate. Treatment cells are
/// ordered cohort-major, then time.
class DesignLayout {
 public:
  struct Offsets {
    int cohort_fe = 0;
    int time_fe = 0;
    int covariates = 0;
    int cohort_cov = 0;
    int time_cov = 0;
    int treatment = 0;
    int treatment_cov = 0;
  };

  DesignLayout() = default;
  DesignLayout(int n_times, std::vector<int> cohorts, int d);

  int n_times() const { return n_times_; }
  int n_cohorts() const { return static_cast<int>(cohorts_.size()); }
  int d() const { return d_; }
  int p() const { return p_; }
  int w_count() const { return w_count_; }
  const std::vector<int>& cohorts() const { return cohorts_; }
  const Offsets& offsets() const { return offsets_; }

  /// (r, t) cells in column order.
  const std::vector<std::pair<int, int>>& treatment_cells() const { return cells_; }

  int cohort_position(int r) const;  // 0-based index into cohorts()
  int nu_col(int r) const;
  int gamma_col(int t) const;  // t in [2, T]
  int kappa_col(int j) const;
  int zeta_col(int r, int j) const;
  int xi_col(int t, int j) const;
  int tau_col(int r, int t) const;
  int rho_col(int r, int t, int j) const;
  bool has_cell(int r, int t) const;

  /// Per-cohort covariate means used to center treatment interactions,
  /// R x d in cohort order.
  const Eigen::MatrixXd& cohort_means() const { return cohort_means_; }
  void set_cohort_means(Eigen::MatrixXd means);

  /// Human-readable column names such as `tau_r2_t3` or `rho_r2_t3_x1`.
  std::vector<std::string> column_names(const std::vector<std::string>& covariate_names = {},
                                        const std::vector<long long>& time_labels = {}) const;

  bool same_structure(const DesignLayout& other) const;

 private:
  int n_times_ = 0;
  std::vector<int> cohorts_;
  int d_ = 0;
  int p_ = 0;
  int w_count_ = 0;
  Offsets offsets_;
  std::vector<std::pair<int, int>> cells_;
  std::vector<int> cohort_cell_start_;  // first cell index per cohort
  Eigen::MatrixXd cohort_means_;
};

struct DesignMatrix {
  Eigen::MatrixXd values;  // NT x p, unit-major, T consecutive rows per unit
  DesignLayout layout;
};

/// Stacks the response unit-major into an NT vector.
Eigen::VectorXd stack_response(const PanelDataset& data);

/// Sample covariate means per cohort (R x d).
Eigen::MatrixXd compute_cohort_means(const PanelDataset& data);

/// Builds the saturated design. `cohort_means` overrides the centering means
/// for treatment x covariate columns (split-sample mode).
DesignMatrix build_design(const PanelDataset& data,
                          const std::optional<Eigen::MatrixXd>& cohort_means = std::nullopt);

struct Centered {
  Eigen::MatrixXd design;
  Eigen::VectorXd response;
  Eigen::RowVectorXd column_means;
  double response_mean = 0.0;
};

Centered center_response_and_columns(const Eigen::MatrixXd& design, const Eigen::VectorXd& response);

/// Debug dump with layout-derived column headers.
void write_design_csv(std::ostream& out, const DesignMatrix& design,
                      const std::vector<std::string>& covariate_names = {});

}  // namespace fetwfe
