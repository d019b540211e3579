#pragma once

#include "fetwfe/design.hpp"
#include "fetwfe/effects.hpp"
#include "fetwfe/fusion.hpp"
#include "fetwfe/panel.hpp"
#include "fetwfe/solver.hpp"

#include <Eigen/Dense>

#include <string_view>
#include <vector>

namespace fetwfe {

/// Sample covariance of the selected columns of the reparameterized design.
struct SelectedCovariance {
  std::vector<int> indices;
  Eigen::MatrixXd matrix;   // (1/NT) A'A on centered columns
  Eigen::MatrixXd inverse;
};

/// `design` is the transformed, centered Z; its selected columns of Z D^{-1}
/// are formed here. Throws EmptySelection or SingularCovariance.
SelectedCovariance selected_cov(const Eigen::MatrixXd& design, const FusionMatrix& fusion,
                                const std::vector<int>& selected);

/// Same, from an already reparameterized Z D^{-1}.
SelectedCovariance selected_cov_reparameterized(const Eigen::MatrixXd& reparameterized,
                                                const std::vector<int>& selected);

enum class VarianceKind { Fixed, WeightedSplit, WeightedConservative };
std::string_view to_string(VarianceKind kind);

struct VarianceEstimate {
  double value = 0.0;
  VarianceKind kind = VarianceKind::Fixed;
  bool degenerate = false;  // every selected weight is zero, so no interval
};

/// sum psi_rt * (row i(r,t) of D^{-1}) as a p-vector.
Eigen::VectorXd psi_vector_fixed(const CellMap& weights, const FusionMatrix& fusion, const DesignLayout& layout);

/// sigma^2 * psi_S' Cov^{-1} psi_S
VarianceEstimate var_fixed(const Eigen::VectorXd& psi, const SelectedCovariance& cov, double sigma_sq);

/// Multinomial covariance of the empirical group shares over {0} followed by
/// the cohorts in ascending order.
Eigen::MatrixXd sigma_m_hat(const CohortCounts& counts, int n);
Eigen::MatrixXd sigma_m_hat(const CohortCounts& counts);

/// d f_r / d pi_w for f_r = pi_r / sum_{r'} pi_{r'}, rows w in {0, cohorts},
/// columns r in cohorts. Throws NoTreatedUnits.
Eigen::MatrixXd jacobian_cohort_share(const CohortCounts& counts);
/// Same at an arbitrary share vector (pi_0, pi_r1, ...).
Eigen::MatrixXd jacobian_cohort_share(const Eigen::VectorXd& pi);

struct WeightedVariance {
  double first = 0.0;   // uncertainty of the effect estimates
  double second = 0.0;  // uncertainty of the cohort shares
  VarianceEstimate split;
  VarianceEstimate conservative;
};

/// Variance of sum_r f_r(counts) sum_t psi_rt tau_hat(r, t). When `psi` is
/// null the cohort-average weights are used.
WeightedVariance var_weighted(const BridgeFit& fit, const DesignLayout& layout, const FusionMatrix& fusion,
                              const SelectedCovariance& cov, const CohortCounts& counts, double sigma_sq,
                              const CellMap* psi = nullptr);

/// (sqrt(a) + sqrt(b))^2
VarianceEstimate var_conservative(double a, double b);

struct ConfidenceInterval {
  double estimate = 0.0;
  double se = 0.0;  // sqrt(v / NT)
  double low = 0.0;
  double high = 0.0;
  bool degenerate = false;
};

/// estimate -/+ z_{1 - alpha/2} sqrt(v / NT); alpha in (0, 1].
ConfidenceInterval conf_interval(double estimate, const VarianceEstimate& variance, long long nt, double alpha);

double normal_cdf(double x);
/// Rational approximation refined by one Newton step.
double normal_quantile(double u);

}  // namespace fetwfe
