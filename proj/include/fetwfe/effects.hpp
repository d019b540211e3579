#pragma once

#include "fetwfe/design.hpp"
#include "fetwfe/panel.hpp"
#include "fetwfe/solver.hpp"

#include <Eigen/Dense>

#include <functional>
#include <map>
#include <utility>
#include <vector>

namespace fetwfe {

/// (cohort, time) -> value
using CellMap = std::map<std::pair<int, int>, double>;
/// cohort -> value
using CohortMap = std::map<int, double>;

/// beta split into its named coefficient groups. Interaction blocks are
/// stored with one column per covariate.
struct CoefficientBlocks {
  Eigen::VectorXd nu;     // cohort fixed effects (R)
  Eigen::VectorXd gamma;  // time fixed effects for t = 2..T
  Eigen::VectorXd kappa;  // covariates (d)
  Eigen::MatrixXd zeta;   // cohort x covariate (R x d)
  Eigen::MatrixXd xi;     // time x covariate ((T-1) x d)
  Eigen::VectorXd tau;    // treatment effects (W), cohort-major
  Eigen::MatrixXd rho;    // treatment x covariate (W x d)
};

CoefficientBlocks recover_beta_blocks(const Eigen::VectorXd& beta, const DesignLayout& layout);
CoefficientBlocks recover_beta_blocks(const BridgeFit& fit, const DesignLayout& layout);

/// tau_hat for every treatment cell.
CellMap att_point(const Eigen::VectorXd& beta, const DesignLayout& layout);
CellMap att_point(const BridgeFit& fit, const DesignLayout& layout);

/// Equal-time average of each cohort's effects.
CohortMap cohort_att(const CellMap& att, const DesignLayout& layout);

/// psi_rt = 1 / (T - r + 1): every cohort's own time average.
CellMap cohort_average_weights(const DesignLayout& layout);
/// psi that averages a single cohort over its treated periods.
CellMap single_cohort_weights(const DesignLayout& layout, int cohort);

/// sum psi_rt * att(r, t). Throws UnknownKey for a weight without an estimate.
double aggregate_fixed(const CellMap& att, const CellMap& weights);

using ShareFunction = std::function<CohortMap(const CohortCounts&)>;

/// f_r = n_r / n_tau. Throws NoTreatedUnits when n_tau = 0.
CohortMap default_shares(const CohortCounts& counts);

/// sum_r f_r(counts) sum_t psi_rt att(r, t). `counts` may come from an
/// independent sample; `psi` defaults to cohort_average_weights.
double aggregate_weighted(const CellMap& att, const CohortCounts& counts, const DesignLayout& layout,
                          const ShareFunction& shares = default_shares, const CellMap* psi = nullptr);

/// tau_rt + (x - Xbar_r)' rho_rt using the layout's stored cohort means.
double catt_point(const Eigen::VectorXd& beta, const DesignLayout& layout, int r, int t, const Eigen::VectorXd& x);
double catt_point(const BridgeFit& fit, const DesignLayout& layout, int r, int t, const Eigen::VectorXd& x);

/// sum psi_rt * CATT(r, t, x)
double catt_fixed(const Eigen::VectorXd& beta, const DesignLayout& layout, const CellMap& psi,
                  const Eigen::VectorXd& x);

/// sum psi_rt * (pi_r(x) / sum_r' pi_r'(x)) * CATT(r, t, x) with caller-supplied
/// conditional cohort probabilities.
double catt_weighted(const Eigen::VectorXd& beta, const DesignLayout& layout, const CellMap& psi,
                     const Eigen::VectorXd& x, const CohortMap& propensity);

struct CiunDiagnostic {
  bool holds = true;                              // every xi_hat is exactly zero
  std::vector<std::pair<int, int>> violations;    // (t, j) with xi_hat != 0, j 0-based
};

CiunDiagnostic ciun_diagnostic(const Eigen::VectorXd& beta, const DesignLayout& layout);
CiunDiagnostic ciun_diagnostic(const BridgeFit& fit, const DesignLayout& layout);

}  // namespace fetwfe
