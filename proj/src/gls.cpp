#include "fetwfe/gls.hpp"

#include "fetwfe/error.hpp"

#include <cmath>

namespace fetwfe {

std::string_view to_string(VarianceSource s) {
  return s == VarianceSource::UserSupplied ? "user_supplied" : "estimated";
}

void VarianceComponents::validate() const {
  if (!(std::isfinite(sigma_sq) && sigma_sq > 0.0))
    throw Error(ErrorCode::NonPositiveSigma, "gls", "sigma^2 must be finite and positive");
  if (!(std::isfinite(sigma_c_sq) && sigma_c_sq >= 0.0))
    throw Error(ErrorCode::NonPositiveSigma, "gls", "sigma_c^2 must be finite and nonnegative");
}

Eigen::MatrixXd omega_inv_sqrt(const VarianceComponents& vc, int n_times) {
  vc.validate();
  const double t = n_times;
  const Eigen::MatrixXd avg = Eigen::MatrixXd::Constant(n_times, n_times, 1.0 / t);
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n_times, n_times);
  return (id - avg) / std::sqrt(vc.sigma_sq) + avg / std::sqrt(vc.sigma_sq + t * vc.sigma_c_sq);
}

Eigen::MatrixXd omega_inverse(const VarianceComponents& vc, int n_times) {
  vc.validate();
  const double t = n_times;
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(n_times, n_times);
  return (Eigen::MatrixXd::Identity(n_times, n_times) - ones * (vc.sigma_c_sq / (vc.sigma_sq + t * vc.sigma_c_sq))) /
         vc.sigma_sq;
}

Eigen::MatrixXd gls_apply(const Eigen::MatrixXd& rows, const VarianceComponents& vc, int n_times) {
  vc.validate();
  if (n_times <= 0 || rows.rows() % n_times != 0)
    throw Error(ErrorCode::DimensionMismatch, "gls", "row count is not a multiple of T");
  if (vc.sigma_c_sq == 0.0) return rows;
  // sigma * Omega^{-1/2} = (I - J/T) + kappa * J/T, so each unit block loses
  // (1 - kappa) of its within-unit mean.
  const double kappa = std::sqrt(vc.sigma_sq / (vc.sigma_sq + n_times * vc.sigma_c_sq));
  const double shrink = 1.0 - kappa;
  Eigen::MatrixXd out = rows;
  const Eigen::Index units = rows.rows() / n_times;
  for (Eigen::Index i = 0; i < units; ++i) {
    auto block = out.middleRows(i * n_times, n_times);
    const Eigen::RowVectorXd mean = block.colwise().mean();
    block.rowwise() -= shrink * mean;
  }
  return out;
}

Transformed gls_transform(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                          const VarianceComponents& vc, int n_times) {
  if (design.rows() != response.size())
    throw Error(ErrorCode::DimensionMismatch, "gls", "design and response row counts differ");
  return {gls_apply(design, vc, n_times), gls_apply(response, vc, n_times)};
}

VarianceComponents variance_components_from_residuals(const Eigen::MatrixXd& residuals) {
  const double n = static_cast<double>(residuals.rows());
  const double t = static_cast<double>(residuals.cols());
  const Eigen::VectorXd unit_mean = residuals.rowwise().mean();
  const double within = (residuals.colwise() - unit_mean).squaredNorm();
  const double sigma_sq = within / (n * (t - 1.0));
  // Within-unit variation that is zero up to rounding is treated as zero.
  const double scale = residuals.squaredNorm();
  if (!(sigma_sq > 0.0) || within <= 1e-24 * std::max(scale, 1.0))
    throw Error(ErrorCode::DegenerateResiduals, "gls",
                "residuals have no within-unit variation; supply --sigma-sq and --sigma-c-sq");
  const double between = unit_mean.squaredNorm() / n;
  return {sigma_sq, std::max(0.0, between - sigma_sq / t), VarianceSource::Estimated};
}

VarianceComponents estimate_variance_components(const PanelDataset& data, const DesignMatrix& design,
                                                std::optional<double> ridge_penalty) {
  const auto c = center_response_and_columns(design.values, stack_response(data));
  const Eigen::Index p = c.design.cols();
  Eigen::MatrixXd gram = c.design.transpose() * c.design;
  double k = ridge_penalty.value_or(1e-3 * gram.trace() / static_cast<double>(std::max<Eigen::Index>(p, 1)));
  if (k < 0.0) throw Error(ErrorCode::Config, "gls", "ridge penalty must be nonnegative");
  gram.diagonal().array() += k;
  const Eigen::VectorXd coef = gram.ldlt().solve(c.design.transpose() * c.response);
  const Eigen::VectorXd resid = c.response - c.design * coef;
  const Eigen::MatrixXd by_unit =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          resid.data(), data.n_units, data.n_times);
  return variance_components_from_residuals(by_unit);
}

}  // namespace fetwfe
