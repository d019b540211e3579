#pragma once

#include "fetwfe/design.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <memory>
#include <string>
#include <vector>

namespace fetwfe {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Upper bidiagonal t x t differences block: 1 on the diagonal, -1 above it.
Eigen::MatrixXd build_d1(int t);
/// Its closed-form inverse, the upper-triangular matrix of ones.
Eigen::MatrixXd build_d1_inverse(int t);

/// W x W differences on the stacked treatment effects (cohort-major, then
/// time). Row (r1, r1) picks tau_{r1,r1}; row (r_k, r_k) takes the
/// difference with the previous cohort's first effect; row (r, t > r) takes
/// the within-cohort difference with time t - 1.
Eigen::MatrixXd build_d2(int n_times, const std::vector<int>& cohorts);
Eigen::MatrixXd build_d2_inverse(int n_times, const std::vector<int>& cohorts);

/// Invertible block-diagonal differences matrix D with its exact inverse.
class FusionMatrix {
 public:
  struct Block {
    int offset = 0;
    int size = 0;
    std::string kind;  // blocks with equal kind and size are identical
  };

  FusionMatrix(SparseMatrix d, SparseMatrix d_inv, std::vector<Block> blocks, std::string name);

  int p() const { return static_cast<int>(d_.rows()); }
  const SparseMatrix& d_mat() const { return d_; }
  const SparseMatrix& d_inv() const { return d_inv_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const std::string& name() const { return name_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& beta) const { return d_ * beta; }
  Eigen::VectorXd apply_inverse(const Eigen::VectorXd& theta) const { return d_inv_ * theta; }

  /// Z * D^{-1}, the design in penalized coordinates.
  Eigen::MatrixXd reparameterize(const Eigen::MatrixXd& z) const;

 private:
  SparseMatrix d_;
  SparseMatrix d_inv_;
  std::vector<Block> blocks_;
  std::string name_;
};

/// Produces a differences matrix for a layout. Any invertible block-diagonal
/// D with finite entries is admissible.
class FusionStrategy {
 public:
  virtual ~FusionStrategy() = default;
  virtual FusionMatrix build(const DesignLayout& layout) const = 0;
  virtual std::string name() const = 0;
};

/// Adjacent-cohort and adjacent-time fusion of fixed effects, interactions
/// and treatment effects (the FETWFE penalty).
class CohortTimeFusion final : public FusionStrategy {
 public:
  FusionMatrix build(const DesignLayout& layout) const override;
  std::string name() const override { return "cohort_time"; }
};

/// D = I: penalize every coefficient directly (bridge regression on beta).
class DirectPenalty final : public FusionStrategy {
 public:
  FusionMatrix build(const DesignLayout& layout) const override;
  std::string name() const override { return "direct"; }
};

FusionMatrix build_fusion(const DesignLayout& layout);

/// sum_j |(D beta)_j|^q
double penalty_value(const Eigen::VectorXd& beta, double q, const FusionMatrix& fusion);

struct SingularValueRange {
  double min = 0.0;
  double max = 0.0;
};

/// Extreme singular values of D computed block by block (the spectrum of a
/// block-diagonal matrix is the union of its blocks' spectra).
SingularValueRange singular_value_range(const FusionMatrix& fusion);

}  // namespace fetwfe
