#pragma once

#include "fetwfe/design.hpp"
#include "fetwfe/effects.hpp"
#include "fetwfe/fusion.hpp"
#include "fetwfe/gls.hpp"
#include "fetwfe/inference.hpp"
#include "fetwfe/panel.hpp"
#include "fetwfe/solver.hpp"

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fetwfe {

struct CattQuery {
  int r = 0;
  int t = 0;
  Eigen::VectorXd x;
};

struct EstimateOptions {
  SolverConfig solver;
  std::optional<VarianceComponents> variance;  // estimated from the data when absent
  std::optional<double> lambda;                // fit one lambda instead of the BIC path
  std::shared_ptr<const FusionStrategy> fusion = std::make_shared<CohortTimeFusion>();
  double alpha = 0.05;
  std::optional<CellMap> weights;              // extra fixed-weight aggregate
  std::optional<CohortCounts> split_counts;    // independent assignment-only sample
  std::optional<Eigen::MatrixXd> cohort_means; // independent centering means
  std::vector<CattQuery> catt_queries;
};

/// Everything the fit produced that inference needs.
struct Estimation {
  DesignLayout layout;
  std::shared_ptr<const FusionMatrix> fusion;
  VarianceComponents variance;
  Eigen::MatrixXd reparameterized;  // transformed, centered Z D^{-1}
  PathResult path;                  // single point when a fixed lambda was used
  CohortCounts counts;
  long long n_obs = 0;

  const BridgeFit& fit() const { return path.selected; }
};

/// panel -> design -> GLS -> centering -> D^{-1} -> bridge path with BIC.
Estimation fit_fetwfe(const PanelDataset& data, const EstimateOptions& options = {});

struct IntervalReport {
  double estimate = 0.0;
  std::optional<double> se;  // absent when degenerate
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  bool degenerate = false;

  static IntervalReport from(const ConfidenceInterval& ci);
};

struct CellEffect {
  int r = 0;
  int t = 0;
  long long r_label = 0;
  long long t_label = 0;
  IntervalReport value;
};

struct CohortEffect {
  int r = 0;
  long long r_label = 0;
  IntervalReport value;
};

struct CattEvaluation {
  int r = 0;
  int t = 0;
  std::vector<double> x;
  double value = 0.0;
};

struct EffectsReport {
  std::vector<CellEffect> att;
  std::vector<CohortEffect> cohort_att;
  IntervalReport overall;                     // conservative single-sample interval
  std::optional<IntervalReport> overall_split;
  std::optional<IntervalReport> fixed_weights;
  std::vector<CattEvaluation> catt;
  bool ciun = true;
  std::vector<std::pair<int, int>> ciun_violations;  // (t, covariate index)

  // fit summary
  double lambda = 0.0;
  double q = 0.5;
  int p = 0;
  int selected = 0;
  int n_units = 0;
  int n_times = 0;
  double sigma_sq = 0.0;
  double sigma_c_sq = 0.0;
  std::string variance_source;
  double alpha = 0.05;
  std::vector<std::string> covariate_names;

  /// Cohorts whose average effect was fused to exactly zero.
  int zero_cohorts() const;
};

/// Point estimates, standard errors and intervals for a finished fit.
EffectsReport build_report(const PanelDataset& data, const Estimation& est, const EstimateOptions& options = {});

/// fit_fetwfe followed by build_report.
EffectsReport estimate(const PanelDataset& data, const EstimateOptions& options = {});

}  // namespace fetwfe
