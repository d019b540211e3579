#include "fetwfe/inference.hpp"

#include "fetwfe/error.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <numbers>

namespace fetwfe {

std::string_view to_string(VarianceKind kind) {
  switch (kind) {
    case VarianceKind::Fixed: return "fixed";
    case VarianceKind::WeightedSplit: return "weighted_split";
    case VarianceKind::WeightedConservative: return "weighted_conservative";
  }
  return "unknown";
}

SelectedCovariance selected_cov_reparameterized(const Eigen::MatrixXd& reparameterized,
                                                const std::vector<int>& selected) {
  if (selected.empty()) throw Error(ErrorCode::EmptySelection, "inference", "no coefficients were selected");
  const Eigen::Index rows = reparameterized.rows();
  Eigen::MatrixXd a(rows, static_cast<Eigen::Index>(selected.size()));
  for (std::size_t k = 0; k < selected.size(); ++k) {
    const int j = selected[k];
    if (j < 0 || j >= reparameterized.cols())
      throw Error(ErrorCode::DimensionMismatch, "inference", "selected index out of range");
    a.col(static_cast<Eigen::Index>(k)) = reparameterized.col(j);
  }
  a.rowwise() -= a.colwise().mean();

  SelectedCovariance out;
  out.indices = selected;
  out.matrix = (a.transpose() * a) / static_cast<double>(rows);
  const Eigen::Index s = out.matrix.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(out.matrix);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::SingularCovariance, "inference",
                "sample covariance of the " + std::to_string(s) + " selected columns is not positive definite");
  out.inverse = llt.solve(Eigen::MatrixXd::Identity(s, s));
  const double residual = (out.inverse * out.matrix - Eigen::MatrixXd::Identity(s, s)).cwiseAbs().maxCoeff();
  if (!std::isfinite(residual) || residual > 1e-8)
    throw Error(ErrorCode::SingularCovariance, "inference",
                "sample covariance of the selected columns is numerically singular (inverse residual " +
                    std::to_string(residual) + ")");
  return out;
}

SelectedCovariance selected_cov(const Eigen::MatrixXd& design, const FusionMatrix& fusion,
                                const std::vector<int>& selected) {
  if (design.cols() != fusion.p())
    throw Error(ErrorCode::DimensionMismatch, "inference", "design width does not match the differences matrix");
  if (selected.empty()) throw Error(ErrorCode::EmptySelection, "inference", "no coefficients were selected");
  // Only the selected columns of D^{-1} are needed.
  const Eigen::SparseMatrix<double, Eigen::ColMajor> d_inv = fusion.d_inv();
  Eigen::MatrixXd cols = Eigen::MatrixXd::Zero(fusion.p(), static_cast<Eigen::Index>(selected.size()));
  for (std::size_t k = 0; k < selected.size(); ++k) {
    const int j = selected[k];
    if (j < 0 || j >= fusion.p()) throw Error(ErrorCode::DimensionMismatch, "inference", "selected index out of range");
    for (Eigen::SparseMatrix<double, Eigen::ColMajor>::InnerIterator it(d_inv, j); it; ++it)
      cols(it.row(), static_cast<Eigen::Index>(k)) = it.value();
  }
  const Eigen::MatrixXd a = design * cols;
  std::vector<int> all(selected.size());
  for (std::size_t k = 0; k < all.size(); ++k) all[k] = static_cast<int>(k);
  SelectedCovariance out = selected_cov_reparameterized(a, all);
  out.indices = selected;
  return out;
}

Eigen::VectorXd psi_vector_fixed(const CellMap& weights, const FusionMatrix& fusion, const DesignLayout& layout) {
  if (fusion.p() != layout.p())
    throw Error(ErrorCode::LayoutMismatch, "inference", "differences matrix does not match the layout");
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(fusion.p());
  const SparseMatrix& d_inv = fusion.d_inv();
  for (const auto& [cell, w] : weights) {
    if (!std::isfinite(w)) throw Error(ErrorCode::Config, "inference", "non-finite weight");
    if (!layout.has_cell(cell.first, cell.second))
      throw Error(ErrorCode::UnknownKey, "inference",
                  "no treatment effect for cohort " + std::to_string(cell.first) + " at time " +
                      std::to_string(cell.second));
    if (w == 0.0) continue;
    for (SparseMatrix::InnerIterator it(d_inv, layout.tau_col(cell.first, cell.second)); it; ++it)
      psi(it.col()) += w * it.value();
  }
  return psi;
}

namespace {

Eigen::VectorXd restrict(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= v.size())
      throw Error(ErrorCode::DimensionMismatch, "inference", "selected index out of range");
    out(static_cast<Eigen::Index>(k)) = v(idx[k]);
  }
  return out;
}

Eigen::VectorXd shares_vector(const CohortCounts& counts) {
  const double n = counts.total();
  Eigen::VectorXd pi(static_cast<Eigen::Index>(counts.n_r.size()) + 1);
  pi(0) = counts.n_0 / n;
  Eigen::Index k = 1;
  for (const auto& [r, n_r] : counts.n_r) pi(k++) = n_r / n;
  return pi;
}

}  // namespace

VarianceEstimate var_fixed(const Eigen::VectorXd& psi, const SelectedCovariance& cov, double sigma_sq) {
  if (!(sigma_sq >= 0.0)) throw Error(ErrorCode::NonPositiveSigma, "inference", "sigma^2 must be nonnegative");
  const Eigen::VectorXd ps = restrict(psi, cov.indices);
  VarianceEstimate out;
  out.kind = VarianceKind::Fixed;
  if (ps.isZero(0.0)) {
    out.degenerate = true;
    return out;
  }
  out.value = std::max(0.0, sigma_sq * ps.dot(cov.inverse * ps));
  return out;
}

Eigen::MatrixXd sigma_m_hat(const CohortCounts& counts, int n) {
  if (n <= 0) throw Error(ErrorCode::Config, "inference", "sample size must be positive");
  std::vector<double> groups{static_cast<double>(counts.n_0)};
  for (const auto& [r, n_r] : counts.n_r) groups.push_back(n_r);
  const Eigen::Index k = static_cast<Eigen::Index>(groups.size());
  const double nn = n;
  Eigen::MatrixXd m(k, k);
  for (Eigen::Index a = 0; a < k; ++a)
    for (Eigen::Index b = 0; b < k; ++b)
      m(a, b) = a == b ? groups[a] * (nn - groups[a]) : -groups[a] * groups[b];
  return m / (nn * nn);
}

Eigen::MatrixXd sigma_m_hat(const CohortCounts& counts) { return sigma_m_hat(counts, counts.total()); }

Eigen::MatrixXd jacobian_cohort_share(const Eigen::VectorXd& pi) {
  const Eigen::Index r_count = pi.size() - 1;
  if (r_count < 1) throw Error(ErrorCode::NoTreatedUnits, "inference", "no cohorts");
  const double sum = pi.tail(r_count).sum();
  if (!(sum > 0.0)) throw Error(ErrorCode::NoTreatedUnits, "inference", "treated shares sum to zero");
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(r_count + 1, r_count);
  const double s2 = sum * sum;
  for (Eigen::Index r = 0; r < r_count; ++r)
    for (Eigen::Index w = 0; w < r_count; ++w)
      jac(w + 1, r) = w == r ? (sum - pi(r + 1)) / s2 : -pi(r + 1) / s2;
  return jac;
}

Eigen::MatrixXd jacobian_cohort_share(const CohortCounts& counts) {
  if (counts.n_tau <= 0) throw Error(ErrorCode::NoTreatedUnits, "inference", "no treated units");
  return jacobian_cohort_share(shares_vector(counts));
}

WeightedVariance var_weighted(const BridgeFit& fit, const DesignLayout& layout, const FusionMatrix& fusion,
                              const SelectedCovariance& cov, const CohortCounts& counts, double sigma_sq,
                              const CellMap* psi) {
  if (fit.theta_hat.size() != layout.p())
    throw Error(ErrorCode::LayoutMismatch, "inference", "fit does not match the layout");
  const CellMap default_psi = psi ? CellMap{} : cohort_average_weights(layout);
  const CellMap& weights = psi ? *psi : default_psi;
  const CohortMap f = default_shares(counts);
  const Eigen::MatrixXd jac = jacobian_cohort_share(counts);

  const std::size_t s = cov.indices.size();
  const int r_count = layout.n_cohorts();
  Eigen::MatrixXd m_hat = Eigen::MatrixXd::Zero(r_count, static_cast<Eigen::Index>(s));
  Eigen::VectorXd psi_hat = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s));
  for (int k = 0; k < r_count; ++k) {
    const int r = layout.cohorts()[static_cast<std::size_t>(k)];
    CellMap own;
    for (const auto& [cell, w] : weights)
      if (cell.first == r) own[cell] = w;
    const Eigen::VectorXd row = restrict(psi_vector_fixed(own, fusion, layout), cov.indices);
    m_hat.row(k) = row.transpose();
    auto it = f.find(r);
    psi_hat += (it == f.end() ? 0.0 : it->second) * row;
  }

  WeightedVariance out;
  const bool degenerate = psi_hat.isZero(0.0);
  if (!degenerate) out.first = std::max(0.0, sigma_sq * psi_hat.dot(cov.inverse * psi_hat));
  const Eigen::VectorXd theta_s = restrict(fit.theta_hat, cov.indices);
  const Eigen::VectorXd g = jac * (m_hat * theta_s);
  out.second = std::max(0.0, layout.n_times() * g.dot(sigma_m_hat(counts) * g));
  out.split = {out.first + out.second, VarianceKind::WeightedSplit, degenerate};
  out.conservative = var_conservative(out.first, out.second);
  out.conservative.degenerate = degenerate;
  return out;
}

VarianceEstimate var_conservative(double a, double b) {
  if (!(a >= 0.0 && b >= 0.0)) throw Error(ErrorCode::Config, "inference", "variance terms must be nonnegative");
  const double root = std::sqrt(a) + std::sqrt(b);
  return {root * root, VarianceKind::WeightedConservative, false};
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double u) {
  if (!(u > 0.0 && u < 1.0)) {
    if (u == 0.0) return -std::numeric_limits<double>::infinity();
    if (u == 1.0) return std::numeric_limits<double>::infinity();
    throw Error(ErrorCode::Config, "inference", "quantile level must lie in [0, 1]");
  }
  // Acklam's rational approximation.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double low = 0.02425;
  double x;
  if (u < low) {
    const double q = std::sqrt(-2.0 * std::log(u));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (u <= 1.0 - low) {
    const double q = u - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-u));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double density = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  if (density > 0.0) x -= (normal_cdf(x) - u) / density;
  return x;
}

ConfidenceInterval conf_interval(double estimate, const VarianceEstimate& variance, long long nt, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorCode::Config, "inference", "alpha must lie in (0, 1]");
  if (nt <= 0) throw Error(ErrorCode::Config, "inference", "NT must be positive");
  ConfidenceInterval ci;
  ci.estimate = estimate;
  ci.low = ci.high = estimate;
  if (variance.degenerate) {
    ci.degenerate = true;
    return ci;
  }
  ci.se = std::sqrt(std::max(0.0, variance.value) / static_cast<double>(nt));
  const double z = alpha == 1.0 ? 0.0 : normal_quantile(1.0 - 0.5 * alpha);
  ci.low = estimate - z * ci.se;
  ci.high = estimate + z * ci.se;
  return ci;
}

}  // namespace fetwfe
