#include "fetwfe/effects.hpp"

#include "fetwfe/error.hpp"

#include <cmath>

namespace fetwfe {

namespace {

void check_beta(const Eigen::VectorXd& beta, const DesignLayout& layout) {
  if (beta.size() != layout.p())
    throw Error(ErrorCode::LayoutMismatch, "effects",
                "coefficient vector has length " + std::to_string(beta.size()) + " but the layout has p = " +
                    std::to_string(layout.p()));
}

}  // namespace

CoefficientBlocks recover_beta_blocks(const Eigen::VectorXd& beta, const DesignLayout& layout) {
  check_beta(beta, layout);
  const int r_count = layout.n_cohorts();
  const int tm1 = layout.n_times() - 1;
  const int d = layout.d();
  const int w = layout.w_count();
  const auto& off = layout.offsets();

  CoefficientBlocks b;
  b.nu = beta.segment(off.cohort_fe, r_count);
  b.gamma = beta.segment(off.time_fe, tm1);
  b.kappa = beta.segment(off.covariates, d);
  b.zeta.resize(r_count, d);
  b.xi.resize(tm1, d);
  b.rho.resize(w, d);
  for (int j = 0; j < d; ++j) {
    b.zeta.col(j) = beta.segment(off.cohort_cov + j * r_count, r_count);
    b.xi.col(j) = beta.segment(off.time_cov + j * tm1, tm1);
    b.rho.col(j) = beta.segment(off.treatment_cov + j * w, w);
  }
  b.tau = beta.segment(off.treatment, w);
  return b;
}

CoefficientBlocks recover_beta_blocks(const BridgeFit& fit, const DesignLayout& layout) {
  return recover_beta_blocks(fit.beta_hat, layout);
}

CellMap att_point(const Eigen::VectorXd& beta, const DesignLayout& layout) {
  check_beta(beta, layout);
  CellMap out;
  for (auto [r, t] : layout.treatment_cells()) out[{r, t}] = beta(layout.tau_col(r, t));
  return out;
}

CellMap att_point(const BridgeFit& fit, const DesignLayout& layout) { return att_point(fit.beta_hat, layout); }

CohortMap cohort_att(const CellMap& att, const DesignLayout& layout) {
  CohortMap out;
  for (int r : layout.cohorts()) {
    double sum = 0.0;
    for (int t = r; t <= layout.n_times(); ++t) {
      auto it = att.find({r, t});
      if (it == att.end())
        throw Error(ErrorCode::UnknownKey, "effects",
                    "missing estimate for cohort " + std::to_string(r) + " at time " + std::to_string(t));
      sum += it->second;
    }
    out[r] = sum / (layout.n_times() - r + 1);
  }
  return out;
}

CellMap cohort_average_weights(const DesignLayout& layout) {
  CellMap psi;
  for (auto [r, t] : layout.treatment_cells()) psi[{r, t}] = 1.0 / (layout.n_times() - r + 1);
  return psi;
}

CellMap single_cohort_weights(const DesignLayout& layout, int cohort) {
  layout.cohort_position(cohort);
  CellMap psi;
  for (int t = cohort; t <= layout.n_times(); ++t) psi[{cohort, t}] = 1.0 / (layout.n_times() - cohort + 1);
  return psi;
}

double aggregate_fixed(const CellMap& att, const CellMap& weights) {
  double total = 0.0;
  for (const auto& [cell, psi] : weights) {
    if (!std::isfinite(psi)) throw Error(ErrorCode::Config, "effects", "non-finite weight");
    auto it = att.find(cell);
    if (it == att.end())
      throw Error(ErrorCode::UnknownKey, "effects",
                  "weight for (" + std::to_string(cell.first) + ", " + std::to_string(cell.second) +
                      ") has no matching estimate");
    total += psi * it->second;
  }
  return total;
}

CohortMap default_shares(const CohortCounts& counts) {
  if (counts.n_tau <= 0) throw Error(ErrorCode::NoTreatedUnits, "effects", "no treated units to weight by");
  CohortMap f;
  for (const auto& [r, n_r] : counts.n_r) f[r] = static_cast<double>(n_r) / counts.n_tau;
  return f;
}

double aggregate_weighted(const CellMap& att, const CohortCounts& counts, const DesignLayout& layout,
                          const ShareFunction& shares, const CellMap* psi) {
  const CellMap default_psi = psi ? CellMap{} : cohort_average_weights(layout);
  const CellMap& weights = psi ? *psi : default_psi;
  const CohortMap f = shares(counts);
  double total = 0.0;
  for (const auto& [cell, w] : weights) {
    auto it = att.find(cell);
    if (it == att.end())
      throw Error(ErrorCode::UnknownKey, "effects",
                  "weight for (" + std::to_string(cell.first) + ", " + std::to_string(cell.second) +
                      ") has no matching estimate");
    auto fr = f.find(cell.first);
    if (fr == f.end()) throw Error(ErrorCode::UnknownKey, "effects", "no share for cohort " + std::to_string(cell.first));
    total += fr->second * w * it->second;
  }
  return total;
}

double catt_point(const Eigen::VectorXd& beta, const DesignLayout& layout, int r, int t, const Eigen::VectorXd& x) {
  check_beta(beta, layout);
  if (!layout.has_cell(r, t))
    throw Error(ErrorCode::CohortTimeOutOfRange, "effects",
                "no treatment effect for cohort " + std::to_string(r) + " at time " + std::to_string(t));
  if (x.size() != layout.d()) throw Error(ErrorCode::DimensionMismatch, "effects", "x must have length d");
  const int k = layout.cohort_position(r);
  double value = beta(layout.tau_col(r, t));
  for (int j = 0; j < layout.d(); ++j) value += (x(j) - layout.cohort_means()(k, j)) * beta(layout.rho_col(r, t, j));
  return value;
}

double catt_point(const BridgeFit& fit, const DesignLayout& layout, int r, int t, const Eigen::VectorXd& x) {
  return catt_point(fit.beta_hat, layout, r, t, x);
}

double catt_fixed(const Eigen::VectorXd& beta, const DesignLayout& layout, const CellMap& psi,
                  const Eigen::VectorXd& x) {
  double total = 0.0;
  for (const auto& [cell, w] : psi) total += w * catt_point(beta, layout, cell.first, cell.second, x);
  return total;
}

double catt_weighted(const Eigen::VectorXd& beta, const DesignLayout& layout, const CellMap& psi,
                     const Eigen::VectorXd& x, const CohortMap& propensity) {
  double mass = 0.0;
  for (int r : layout.cohorts()) {
    auto it = propensity.find(r);
    if (it == propensity.end() || !(it->second >= 0.0))
      throw Error(ErrorCode::UnknownKey, "effects", "missing or negative propensity for cohort " + std::to_string(r));
    mass += it->second;
  }
  if (!(mass > 0.0)) throw Error(ErrorCode::NoTreatedUnits, "effects", "propensities of treated cohorts sum to zero");
  double total = 0.0;
  for (const auto& [cell, w] : psi)
    total += w * (propensity.at(cell.first) / mass) * catt_point(beta, layout, cell.first, cell.second, x);
  return total;
}

CiunDiagnostic ciun_diagnostic(const Eigen::VectorXd& beta, const DesignLayout& layout) {
  check_beta(beta, layout);
  CiunDiagnostic out;
  for (int j = 0; j < layout.d(); ++j)
    for (int t = 2; t <= layout.n_times(); ++t)
      if (beta(layout.xi_col(t, j)) != 0.0) out.violations.emplace_back(t, j);
  out.holds = out.violations.empty();
  return out;
}

CiunDiagnostic ciun_diagnostic(const BridgeFit& fit, const DesignLayout& layout) {
  return ciun_diagnostic(fit.beta_hat, layout);
}

}  // namespace fetwfe
