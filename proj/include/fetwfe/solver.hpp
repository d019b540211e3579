#pragma once

#include "fetwfe/fusion.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace fetwfe {

struct SolverConfig {
  double q = 0.5;
  int lambda_grid_size = 100;
  double lambda_min_ratio = 1e-4;
  int max_iterations = 10000;  // full coordinate cycles per lambda
  double tolerance = 1e-7;     // max coefficient change relative to 1 + max |theta|
  double ridge_lambda2 = 0.0;
  bool standardize = true;     // scale columns to squared norm equal to the row count
  bool record_objective = false;
  /// Path fits also restart from the least-squares solution (when it is
  /// identified) and keep whichever local solution has the lower objective.
  bool least_squares_start = true;

  void validate() const;
};

struct BridgeFit {
  double lambda = 0.0;
  double q = 0.5;
  Eigen::VectorXd theta_hat;
  Eigen::VectorXd beta_hat;   // D^{-1} theta_hat once attach_beta has run
  std::vector<int> selected;  // support of theta_hat
  double rss = 0.0;
  double bic = 0.0;
  int iterations = 0;
  bool converged = true;
  std::vector<double> objective_trace;  // per full cycle, when recorded
};

/// Global minimizer of (theta - z)^2 + lam * |theta|^q. Returns exactly 0
/// whenever 0 attains the minimum.
double scalar_bridge_threshold(double z, double lam, double q);

/// Smallest |z| for which the minimizer above is nonzero (0 when q > 1).
double scalar_bridge_cutoff(double lam, double q);

/// Precomputed state for repeated fits on one centered design/response pair.
/// Immutable after construction, so fits at different lambdas may run
/// concurrently.
class BridgeProblem {
 public:
  /// `rss_rows` limits the RSS (and so BIC) to the leading rows, which keeps
  /// ridge-augmentation rows out of the information criterion.
  BridgeProblem(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, const SolverConfig& config,
                std::optional<Eigen::Index> rss_rows = std::nullopt);

  BridgeFit fit(double lambda, const Eigen::VectorXd* warm_start = nullptr) const;

  double lambda_max() const;
  std::vector<double> lambda_grid() const;

  Eigen::Index rows() const { return xs_.rows(); }
  Eigen::Index cols() const { return xs_.cols(); }
  Eigen::Index rss_rows() const { return rss_rows_; }
  const SolverConfig& config() const { return config_; }

  /// ||y - X theta||^2 + lambda * sum |theta_s|^q in the solver's internal
  /// (possibly standardized) coordinates, for a theta on the original scale.
  double objective(const Eigen::VectorXd& theta, double lambda) const;

 private:
  BridgeFit least_squares() const;
  void finish(BridgeFit& fit, const Eigen::VectorXd& theta_std) const;

  SolverConfig config_;
  Eigen::MatrixXd xs_;
  Eigen::VectorXd y_;
  Eigen::VectorXd scale_;  // original column = scale * standardized column; 0 marks an all-zero column
  Eigen::MatrixXd gram_;
  Eigen::VectorXd xty_;
  Eigen::Index rss_rows_;
};

BridgeFit bridge_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, double lambda,
                     const SolverConfig& config, const Eigen::VectorXd* warm_start = nullptr);

/// Log-spaced descending grid from lambda_max = 2 max_j |x_j' y| (on the
/// standardized columns when standardization is on).
std::vector<double> lambda_grid(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                const SolverConfig& config);

double bic_value(double rss, int support_size, Eigen::Index n_obs);

struct PathPoint {
  double lambda = 0.0;
  int support_size = 0;
  double rss = 0.0;
  double bic = 0.0;
  bool converged = true;
};

struct PathResult {
  BridgeFit selected;
  std::size_t selected_index = 0;
  std::vector<PathPoint> path;
};

/// Fits the whole grid with warm starts and keeps the BIC minimizer; ties go
/// to the larger lambda.
PathResult fit_path_bic(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, const SolverConfig& config,
                        std::optional<Eigen::Index> rss_rows = std::nullopt);
PathResult fit_path_bic(const BridgeProblem& problem, const std::vector<double>& grid);

/// Selection rule on precomputed summaries, exposed for testing.
std::size_t select_by_bic(const std::vector<PathPoint>& path);

struct Augmented {
  Eigen::MatrixXd design;
  Eigen::VectorXd response;
};

/// Appends sqrt(lambda2) * D^{-1} rows and zero responses so that the bridge
/// problem in theta carries an extra lambda2 * ||beta||^2 ridge term.
Augmented ridge_augment(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, const FusionMatrix& fusion,
                        double lambda2);

/// Fills beta_hat = D^{-1} theta_hat.
void attach_beta(BridgeFit& fit, const FusionMatrix& fusion);

}  // namespace fetwfe
