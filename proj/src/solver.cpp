#include "fetwfe/solver.hpp"

#include "fetwfe/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace fetwfe {

void SolverConfig::validate() const {
  if (!(q > 0.0 && q <= 2.0)) throw Error(ErrorCode::Config, "solver", "q must lie in (0, 2]");
  if (!(tolerance > 0.0)) throw Error(ErrorCode::Config, "solver", "tolerance must be positive");
  if (lambda_grid_size < 1) throw Error(ErrorCode::Config, "solver", "grid size must be at least 1");
  if (!(lambda_min_ratio > 0.0 && lambda_min_ratio <= 1.0))
    throw Error(ErrorCode::Config, "solver", "lambda_min_ratio must lie in (0, 1]");
  if (max_iterations < 1) throw Error(ErrorCode::Config, "solver", "max_iterations must be positive");
  if (!(ridge_lambda2 >= 0.0)) throw Error(ErrorCode::Config, "solver", "ridge_lambda2 must be nonnegative");
}

namespace {

// Larger root of 2(x - a) + lam q x^{q-1} for q < 1. h is convex, positive
// at a, and increasing on [lo, a], so Newton from the right stays above the
// root and converges monotonically.
double bridge_root_below_one(double a, double lam, double q, double lo) {
  double x = a;
  for (int it = 0; it < 200; ++it) {
    const double xq1 = std::pow(x, q - 1.0);
    const double h = 2.0 * (x - a) + lam * q * xq1;
    const double dh = 2.0 + lam * q * (q - 1.0) * xq1 / x;
    const double next = x - h / dh;
    if (!(next > lo) || !(next <= x)) break;
    if (x - next <= 4.0 * std::numeric_limits<double>::epsilon() * x) {
      x = next;
      break;
    }
    x = next;
  }
  return x;
}

// Root of the increasing stationarity condition for 1 < q < 2.
double bridge_root_above_one(double a, double lam, double q) {
  double lo = 0.0;
  double hi = a;
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double h = 2.0 * (mid - a) + lam * q * std::pow(mid, q - 1.0);
    (h > 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

double scalar_bridge_cutoff(double lam, double q) {
  if (lam <= 0.0 || q > 1.0) return 0.0;
  if (q == 1.0) return 0.5 * lam;
  return (2.0 - q) / (2.0 * (1.0 - q)) * std::pow(lam * (1.0 - q), 1.0 / (2.0 - q));
}

double scalar_bridge_threshold(double z, double lam, double q) {
  if (lam == 0.0 || z == 0.0) return z;
  const double sign = z < 0.0 ? -1.0 : 1.0;
  const double a = std::abs(z);
  if (q == 2.0) return z / (1.0 + lam);
  if (q == 1.0) return sign * std::max(a - 0.5 * lam, 0.0);
  if (q > 1.0) return sign * bridge_root_above_one(a, lam, q);

  if (q == 0.5) {
    // Closed-form half thresholding.
    if (a <= scalar_bridge_cutoff(lam, q)) return 0.0;
    const double phi = std::acos(0.125 * lam * std::pow(a / 3.0, -1.5));
    const double x = (2.0 / 3.0) * a * (1.0 + std::cos(2.0 * std::numbers::pi / 3.0 - (2.0 / 3.0) * phi));
    return sign * x;
  }

  // Nonconvex case: an interior minimizer exists only past the inflection
  // point of the objective, and must then beat theta = 0.
  const double inflection = std::pow(0.5 * lam * q * (1.0 - q), 1.0 / (2.0 - q));
  if (inflection >= a) return 0.0;
  const double h_min = 2.0 * (inflection - a) + lam * q * std::pow(inflection, q - 1.0);
  if (h_min >= 0.0) return 0.0;
  const double x = bridge_root_below_one(a, lam, q, inflection);
  const double gx = (x - a) * (x - a) + lam * std::pow(x, q);
  return gx < a * a ? sign * x : 0.0;
}

BridgeProblem::BridgeProblem(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                             const SolverConfig& config, std::optional<Eigen::Index> rss_rows)
    : config_(config), xs_(design), y_(response), rss_rows_(rss_rows.value_or(design.rows())) {
  config_.validate();
  if (design.rows() != response.size())
    throw Error(ErrorCode::DimensionMismatch, "solver", "design and response row counts differ");
  if (rss_rows_ < 1 || rss_rows_ > design.rows())
    throw Error(ErrorCode::DimensionMismatch, "solver", "rss_rows out of range");
  // Scales come from the data rows so that augmentation rows do not shift
  // the effective penalty level.
  const double n = static_cast<double>(rss_rows_);
  scale_.resize(design.cols());
  for (Eigen::Index j = 0; j < design.cols(); ++j) {
    double norm = xs_.col(j).head(rss_rows_).norm();
    if (norm == 0.0) norm = xs_.col(j).norm();
    if (norm == 0.0) {
      scale_(j) = 0.0;
    } else if (config_.standardize) {
      scale_(j) = norm / std::sqrt(n);
      xs_.col(j) /= scale_(j);
    } else {
      scale_(j) = 1.0;
    }
  }
  gram_ = xs_.transpose() * xs_;
  xty_ = xs_.transpose() * y_;
}

double BridgeProblem::lambda_max() const { return 2.0 * xty_.cwiseAbs().maxCoeff(); }

std::vector<double> BridgeProblem::lambda_grid() const {
  const double top = lambda_max();
  if (!(top > 0.0)) throw Error(ErrorCode::ZeroResponse, "solver", "response is orthogonal to every column");
  const int size = config_.lambda_grid_size;
  std::vector<double> grid(static_cast<std::size_t>(size));
  for (int k = 0; k < size; ++k) {
    const double frac = size == 1 ? 0.0 : static_cast<double>(k) / (size - 1);
    grid[static_cast<std::size_t>(k)] = top * std::pow(config_.lambda_min_ratio, frac);
  }
  return grid;
}

double BridgeProblem::objective(const Eigen::VectorXd& theta, double lambda) const {
  Eigen::VectorXd ts = theta.cwiseProduct(scale_);
  const double loss = (y_ - xs_ * ts).squaredNorm();
  double pen = 0.0;
  for (Eigen::Index j = 0; j < ts.size(); ++j)
    if (ts(j) != 0.0) pen += std::pow(std::abs(ts(j)), config_.q);
  return loss + lambda * pen;
}

void BridgeProblem::finish(BridgeFit& fit, const Eigen::VectorXd& theta_std) const {
  fit.q = config_.q;
  fit.theta_hat.resize(theta_std.size());
  fit.selected.clear();
  for (Eigen::Index j = 0; j < theta_std.size(); ++j) {
    fit.theta_hat(j) = scale_(j) == 0.0 ? 0.0 : theta_std(j) / scale_(j);
    if (fit.theta_hat(j) != 0.0) fit.selected.push_back(static_cast<int>(j));
  }
  fit.beta_hat = fit.theta_hat;
  const Eigen::VectorXd resid = y_.head(rss_rows_) - xs_.topRows(rss_rows_) * theta_std;
  fit.rss = resid.squaredNorm();
  fit.bic = bic_value(fit.rss, static_cast<int>(fit.selected.size()), rss_rows_);
}

BridgeFit BridgeProblem::least_squares() const {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs_);
  if (qr.rank() < xs_.cols() || (scale_.array() == 0.0).any())
    throw Error(ErrorCode::RankDeficientAtZeroLambda, "solver",
                "design has rank " + std::to_string(qr.rank()) + " < p = " + std::to_string(xs_.cols()) +
                    "; least squares is not identified");
  BridgeFit fit;
  fit.lambda = 0.0;
  finish(fit, qr.solve(y_));
  return fit;
}

BridgeFit BridgeProblem::fit(double lambda, const Eigen::VectorXd* warm_start) const {
  if (!(lambda >= 0.0)) throw Error(ErrorCode::Config, "solver", "lambda must be nonnegative");
  if (lambda == 0.0) return least_squares();

  const Eigen::Index p = xs_.cols();
  const double q = config_.q;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  if (warm_start != nullptr) {
    if (warm_start->size() != p) throw Error(ErrorCode::DimensionMismatch, "solver", "warm start has wrong length");
    theta = warm_start->cwiseProduct(scale_);
  }
  // grad = X'(y - X theta), kept current as coordinates move.
  Eigen::VectorXd grad = xty_ - gram_ * theta;

  BridgeFit fit;
  fit.lambda = lambda;
  fit.converged = false;
  auto penalized = [&]() {
    double pen = 0.0;
    for (Eigen::Index j = 0; j < p; ++j)
      if (theta(j) != 0.0) pen += std::pow(std::abs(theta(j)), q);
    return (y_ - xs_ * theta).squaredNorm() + lambda * pen;
  };
  if (config_.record_objective) fit.objective_trace.push_back(penalized());

  auto max_change_small = [&](double change) {
    return change <= config_.tolerance * (1.0 + theta.cwiseAbs().maxCoeff());
  };
  // Zero coordinates whose |z| stays below the cutoff cannot move, so the
  // root solve is skipped for them.
  Eigen::VectorXd cutoff(p);
  for (Eigen::Index j = 0; j < p; ++j)
    cutoff(j) = gram_(j, j) == 0.0 ? 0.0 : (1.0 - 1e-9) * scalar_bridge_cutoff(lambda / gram_(j, j), q);

  auto sweep = [&]() {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double a = gram_(j, j);
      if (a == 0.0) continue;
      const double old = theta(j);
      const double z = old + grad(j) / a;
      if (old == 0.0 && std::abs(z) < cutoff(j)) continue;
      const double updated = scalar_bridge_threshold(z, lambda / a, q);
      const double delta = updated - old;
      if (delta != 0.0) {
        theta(j) = updated;
        grad.noalias() -= delta * gram_.col(j);
        max_change = std::max(max_change, std::abs(delta));
      }
    }
    ++fit.iterations;
    if (config_.record_objective) fit.objective_trace.push_back(penalized());
    return max_change;
  };

  // Coordinate descent crawls along the strongly correlated columns, so every
  // few sweeps Newton's method is run on the current support. Coefficients
  // the Newton step would carry across zero are dropped, and a step is kept
  // only if it lowers the objective.
  constexpr int polish_every = 10;
  constexpr int newton_steps = 3;
  auto polish = [&]() {
    std::vector<Eigen::Index> support;
    for (Eigen::Index j = 0; j < p; ++j)
      if (theta(j) != 0.0) support.push_back(j);
    bool changed = false;
    for (int step = 0; step < newton_steps && !support.empty(); ++step) {
      const Eigen::Index s = static_cast<Eigen::Index>(support.size());
      Eigen::MatrixXd g_ss(s, s);
      Eigen::VectorXd b(s), t(s);
      for (Eigen::Index a = 0; a < s; ++a) {
        b(a) = xty_(support[a]);
        t(a) = theta(support[a]);
        for (Eigen::Index c = 0; c < s; ++c) g_ss(a, c) = gram_(support[a], support[c]);
      }
      auto value = [&](const Eigen::VectorXd& v) {
        return v.dot(g_ss * v) - 2.0 * b.dot(v) + lambda * v.cwiseAbs().array().pow(q).sum();
      };
      const double current = value(t);
      const Eigen::ArrayXd mag = t.cwiseAbs().array();
      const Eigen::ArrayXd curvature = lambda * q * (q - 1.0) * mag.pow(q - 2.0);
      const Eigen::VectorXd gradient =
          2.0 * (g_ss * t - b) + (lambda * q * mag.pow(q - 1.0) * t.array().sign()).matrix();
      Eigen::MatrixXd hess = 2.0 * g_ss;
      hess.diagonal().array() += curvature;
      Eigen::LLT<Eigen::MatrixXd> llt(hess);
      if (llt.info() != Eigen::Success) {
        // 2G is positive semidefinite, so removing the negative penalty
        // curvature (plus a little) restores definiteness.
        hess.diagonal().array() += (-curvature).maxCoeff() + 1e-8 * g_ss.diagonal().maxCoeff();
        llt.compute(hess);
        if (llt.info() != Eigen::Success) break;
      }
      const Eigen::VectorXd delta = -llt.solve(gradient);

      bool moved = false;
      double moved_by = 0.0;
      for (double step_size = 1.0; step_size > 1e-4; step_size *= 0.5) {
        Eigen::VectorXd trial = t + step_size * delta;
        for (Eigen::Index a = 0; a < s; ++a)
          if (trial(a) * t(a) <= 0.0) trial(a) = 0.0;
        if (value(trial) < current) {
          moved_by = (trial - t).cwiseAbs().maxCoeff();
          for (Eigen::Index a = 0; a < s; ++a) theta(support[a]) = trial(a);
          moved = changed = true;
          break;
        }
      }
      if (!moved) break;
      std::erase_if(support, [&](Eigen::Index j) { return theta(j) == 0.0; });
      if (moved_by <= config_.tolerance * (1.0 + theta.cwiseAbs().maxCoeff())) break;
    }
    if (changed) grad = xty_ - gram_ * theta;
  };

  std::vector<bool> last_support;
  while (fit.iterations < config_.max_iterations) {
    if (max_change_small(sweep())) {
      fit.converged = true;
      break;
    }
    if (q < 2.0 && fit.iterations % polish_every == 0) {
      // Newton only pays off once the support has settled.
      std::vector<bool> support(p);
      for (Eigen::Index j = 0; j < p; ++j) support[j] = theta(j) != 0.0;
      if (support == last_support) polish();
      last_support = std::move(support);
    }
  }
  finish(fit, theta);
  return fit;
}

BridgeFit bridge_fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, double lambda,
                     const SolverConfig& config, const Eigen::VectorXd* warm_start) {
  return BridgeProblem(design, response, config).fit(lambda, warm_start);
}

std::vector<double> lambda_grid(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                const SolverConfig& config) {
  return BridgeProblem(design, response, config).lambda_grid();
}

double bic_value(double rss, int support_size, Eigen::Index n_obs) {
  const double n = static_cast<double>(n_obs);
  if (!(rss > 0.0)) return -std::numeric_limits<double>::infinity();
  return n * std::log(rss / n) + support_size * std::log(n);
}

std::size_t select_by_bic(const std::vector<PathPoint>& path) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < path.size(); ++k)
    if (path[k].bic < path[best].bic) best = k;
  return best;
}

PathResult fit_path_bic(const BridgeProblem& problem, const std::vector<double>& grid) {
  if (grid.empty()) throw Error(ErrorCode::Config, "solver", "empty lambda grid");
  PathResult out;
  std::optional<Eigen::VectorXd> warm;
  std::optional<BridgeFit> best;
  std::optional<Eigen::VectorXd> ls_start;
  if (problem.config().least_squares_start) {
    try {
      ls_start = problem.fit(0.0).theta_hat;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::RankDeficientAtZeroLambda) throw;
    }
  }
  // Restarts stop once the best BIC has not improved for this many grid points.
  constexpr int kRestartPatience = 10;
  int since_best = 0;
  for (double lambda : grid) {
    BridgeFit fit = problem.fit(lambda, warm ? &*warm : nullptr);
    if (ls_start && lambda > 0.0 && since_best < kRestartPatience) {
      // The path start is greedy; a start at least squares often reaches a
      // lower local minimum of the nonconvex objective.
      BridgeFit alt = problem.fit(lambda, &*ls_start);
      if (problem.objective(alt.theta_hat, lambda) < problem.objective(fit.theta_hat, lambda)) fit = std::move(alt);
    }
    out.path.push_back({fit.lambda, static_cast<int>(fit.selected.size()), fit.rss, fit.bic, fit.converged});
    warm = fit.theta_hat;
    if (!best || fit.bic < best->bic) {
      out.selected_index = out.path.size() - 1;
      best = std::move(fit);
      since_best = 0;
    } else {
      ++since_best;
    }
  }
  out.selected = std::move(*best);
  return out;
}

PathResult fit_path_bic(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, const SolverConfig& config,
                        std::optional<Eigen::Index> rss_rows) {
  const BridgeProblem problem(design, response, config, rss_rows);
  return fit_path_bic(problem, problem.lambda_grid());
}

Augmented ridge_augment(const Eigen::MatrixXd& design, const Eigen::VectorXd& response, const FusionMatrix& fusion,
                        double lambda2) {
  if (!(lambda2 > 0.0)) throw Error(ErrorCode::Config, "solver", "ridge lambda2 must be positive");
  if (design.cols() != fusion.p() || design.rows() != response.size())
    throw Error(ErrorCode::DimensionMismatch, "solver", "augmentation dimensions disagree");
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();
  Augmented out;
  out.design.resize(n + p, p);
  out.design.topRows(n) = design;
  out.design.bottomRows(p) = std::sqrt(lambda2) * Eigen::MatrixXd(fusion.d_inv());
  out.response = Eigen::VectorXd::Zero(n + p);
  out.response.head(n) = response;
  return out;
}

void attach_beta(BridgeFit& fit, const FusionMatrix& fusion) {
  if (fit.theta_hat.size() != fusion.p())
    throw Error(ErrorCode::LayoutMismatch, "solver", "fit dimension does not match the differences matrix");
  fit.beta_hat = fusion.apply_inverse(fit.theta_hat);
}

}  // namespace fetwfe
