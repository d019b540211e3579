#pragma once

#include "fetwfe/fusion.hpp"
#include "fetwfe/panel.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <vector>

namespace support {

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n01(rng);
  return m;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, Eigen::Index n) { return random_matrix(rng, n, 1); }

inline Eigen::MatrixXd dense(const fetwfe::SparseMatrix& s) { return Eigen::MatrixXd(s); }

/// Columns with zero mean, mutually orthogonal, squared norm equal to rows.
inline Eigen::MatrixXd orthonormal_design(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd a = random_matrix(rng, rows, cols);
  a.rowwise() -= a.colwise().mean();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  return q * std::sqrt(static_cast<double>(rows));
}

inline double bridge_objective(double x, double z, double lam, double q) {
  return (x - z) * (x - z) + (x == 0.0 ? 0.0 : lam * std::pow(std::abs(x), q));
}

/// Grid search over [-bound, bound], refined by ternary search around the
/// best grid point, then compared with zero.
inline double brute_force_bridge(double z, double lam, double q, double bound, double step) {
  double best = 0.0;
  double best_value = bridge_objective(0.0, z, lam, q);
  double grid_best = -bound;
  double grid_value = bridge_objective(-bound, z, lam, q);
  const long steps = static_cast<long>(std::llround(2.0 * bound / step));
  for (long k = 0; k <= steps; ++k) {
    const double x = -bound + static_cast<double>(k) * step;
    const double v = bridge_objective(x, z, lam, q);
    if (v < grid_value) {
      grid_value = v;
      grid_best = x;
    }
  }
  double lo = grid_best - step;
  double hi = grid_best + step;
  // Stay on one side of zero so the bracket holds a smooth unimodal piece.
  if (grid_best > 0.0) lo = std::max(lo, 0.0);
  if (grid_best < 0.0) hi = std::min(hi, 0.0);
  for (int it = 0; it < 200; ++it) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    if (bridge_objective(m1, z, lam, q) < bridge_objective(m2, z, lam, q)) hi = m2;
    else lo = m1;
  }
  const double refined = 0.5 * (lo + hi);
  if (bridge_objective(refined, z, lam, q) < best_value) best = refined;
  return best;
}

/// Panel with explicit assignment, random covariates and response.
inline fetwfe::PanelDataset random_panel(std::mt19937_64& rng, int n_times, const std::vector<int>& assignment,
                                         int d) {
  const int n = static_cast<int>(assignment.size());
  return fetwfe::PanelDataset::make(n_times, assignment, random_matrix(rng, n, d), random_matrix(rng, n, n_times));
}

}  // namespace support
