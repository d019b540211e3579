#pragma once

#include "fetwfe/design.hpp"
#include "fetwfe/panel.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string_view>

namespace fetwfe {

enum class VarianceSource { UserSupplied, Estimated };

std::string_view to_string(VarianceSource s);

/// Exchangeable random-effects noise: Omega = sigma_sq * I + sigma_c_sq * 11'.
struct VarianceComponents {
  double sigma_sq = 1.0;
  double sigma_c_sq = 0.0;
  VarianceSource source = VarianceSource::UserSupplied;

  /// Throws NonPositiveSigma unless sigma_sq > 0 and sigma_c_sq >= 0.
  void validate() const;
};

/// Omega^{-1/2} for a T-period unit via its two-eigenvalue spectral form.
Eigen::MatrixXd omega_inv_sqrt(const VarianceComponents& vc, int n_times);

/// Omega^{-1} via Sherman-Morrison.
Eigen::MatrixXd omega_inverse(const VarianceComponents& vc, int n_times);

/// Multiplies every T-row unit block of `rows` by sigma * Omega^{-1/2}
/// without forming the NT x NT operator. Works on any column count.
Eigen::MatrixXd gls_apply(const Eigen::MatrixXd& rows, const VarianceComponents& vc, int n_times);

struct Transformed {
  Eigen::MatrixXd design;
  Eigen::VectorXd response;
};

Transformed gls_transform(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                          const VarianceComponents& vc, int n_times);

/// Pooled ridge fit on the centered, untransformed data followed by a
/// within/between decomposition of the residuals. `ridge_penalty` defaults
/// to 1e-3 * tr(Z'Z) / p.
VarianceComponents estimate_variance_components(const PanelDataset& data, const DesignMatrix& design,
                                                std::optional<double> ridge_penalty = std::nullopt);

/// The residual decomposition on its own: residuals are N x T.
VarianceComponents variance_components_from_residuals(const Eigen::MatrixXd& residuals);

}  // namespace fetwfe
