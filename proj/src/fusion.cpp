#include "fetwfe/fusion.hpp"

#include "fetwfe/error.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <map>

namespace fetwfe {

namespace {

using Triplet = Eigen::Triplet<double>;

void push_d1(std::vector<Triplet>& out, int offset, int t) {
  for (int i = 0; i < t; ++i) {
    out.emplace_back(offset + i, offset + i, 1.0);
    if (i + 1 < t) out.emplace_back(offset + i, offset + i + 1, -1.0);
  }
}

void push_d1_inverse(std::vector<Triplet>& out, int offset, int t) {
  for (int i = 0; i < t; ++i)
    for (int j = i; j < t; ++j) out.emplace_back(offset + i, offset + j, 1.0);
}

// Cell index helpers over the cohort-major treatment ordering.
std::vector<int> cohort_starts(int n_times, const std::vector<int>& cohorts) {
  std::vector<int> starts;
  int k = 0;
  for (int r : cohorts) {
    starts.push_back(k);
    k += n_times - r + 1;
  }
  return starts;
}

void push_d2(std::vector<Triplet>& out, int offset, int n_times, const std::vector<int>& cohorts) {
  const auto starts = cohort_starts(n_times, cohorts);
  for (std::size_t c = 0; c < cohorts.size(); ++c) {
    const int r = cohorts[c];
    const int first = starts[c];
    out.emplace_back(offset + first, offset + first, 1.0);
    if (c > 0) out.emplace_back(offset + first, offset + starts[c - 1], -1.0);
    for (int t = r + 1; t <= n_times; ++t) {
      const int row = first + (t - r);
      out.emplace_back(offset + row, offset + row, 1.0);
      out.emplace_back(offset + row, offset + row - 1, -1.0);
    }
  }
}

void push_d2_inverse(std::vector<Triplet>& out, int offset, int n_times, const std::vector<int>& cohorts) {
  const auto starts = cohort_starts(n_times, cohorts);
  for (std::size_t c = 0; c < cohorts.size(); ++c) {
    const int r = cohorts[c];
    for (int t = r; t <= n_times; ++t) {
      const int row = starts[c] + (t - r);
      // tau_{r_k, t} accumulates every earlier cohort's first difference and
      // the within-cohort differences up to t.
      for (std::size_t m = 0; m <= c; ++m) out.emplace_back(offset + row, offset + starts[m], 1.0);
      for (int s = r + 1; s <= t; ++s) out.emplace_back(offset + row, offset + starts[c] + (s - r), 1.0);
    }
  }
}

Eigen::MatrixXd to_dense(const std::vector<Triplet>& trips, int n) {
  SparseMatrix m(n, n);
  m.setFromTriplets(trips.begin(), trips.end());
  return Eigen::MatrixXd(m);
}

int w_count(int n_times, const std::vector<int>& cohorts) { return count_params(n_times, cohorts, 0).w_count; }

}  // namespace

Eigen::MatrixXd build_d1(int t) {
  std::vector<Triplet> trips;
  push_d1(trips, 0, t);
  return to_dense(trips, t);
}

Eigen::MatrixXd build_d1_inverse(int t) {
  std::vector<Triplet> trips;
  push_d1_inverse(trips, 0, t);
  return to_dense(trips, t);
}

Eigen::MatrixXd build_d2(int n_times, const std::vector<int>& cohorts) {
  std::vector<Triplet> trips;
  push_d2(trips, 0, n_times, cohorts);
  return to_dense(trips, w_count(n_times, cohorts));
}

Eigen::MatrixXd build_d2_inverse(int n_times, const std::vector<int>& cohorts) {
  std::vector<Triplet> trips;
  push_d2_inverse(trips, 0, n_times, cohorts);
  return to_dense(trips, w_count(n_times, cohorts));
}

FusionMatrix::FusionMatrix(SparseMatrix d, SparseMatrix d_inv, std::vector<Block> blocks, std::string name)
    : d_(std::move(d)), d_inv_(std::move(d_inv)), blocks_(std::move(blocks)), name_(std::move(name)) {
  d_.makeCompressed();
  d_inv_.makeCompressed();
}

Eigen::MatrixXd FusionMatrix::reparameterize(const Eigen::MatrixXd& z) const {
  if (z.cols() != p()) throw Error(ErrorCode::DimensionMismatch, "fusion", "design width does not match D");
  // Column j of Z D^{-1} sums the columns of Z selected by column j of D^{-1}.
  const Eigen::SparseMatrix<double, Eigen::ColMajor> inv_cm(d_inv_);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < inv_cm.outerSize(); ++j)
    for (Eigen::SparseMatrix<double, Eigen::ColMajor>::InnerIterator it(inv_cm, j); it; ++it)
      out.col(j) += it.value() * z.col(it.row());
  return out;
}

FusionMatrix CohortTimeFusion::build(const DesignLayout& layout) const {
  const int p = layout.p();
  const int r_count = layout.n_cohorts();
  const int tm1 = layout.n_times() - 1;
  const int d = layout.d();
  const auto& off = layout.offsets();

  std::vector<Triplet> fwd;
  std::vector<Triplet> inv;
  std::vector<FusionMatrix::Block> blocks;
  auto add_d1 = [&](int offset, int size, const char* kind) {
    if (size == 0) return;
    push_d1(fwd, offset, size);
    push_d1_inverse(inv, offset, size);
    blocks.push_back({offset, size, kind});
  };
  auto add_d2 = [&](int offset) {
    push_d2(fwd, offset, layout.n_times(), layout.cohorts());
    push_d2_inverse(inv, offset, layout.n_times(), layout.cohorts());
    blocks.push_back({offset, layout.w_count(), "d2"});
  };

  add_d1(off.cohort_fe, r_count, "d1");
  add_d1(off.time_fe, tm1, "d1");
  for (int j = 0; j < d; ++j) add_d1(off.covariates + j, 1, "d1");
  for (int j = 0; j < d; ++j) add_d1(off.cohort_cov + j * r_count, r_count, "d1");
  for (int j = 0; j < d; ++j) add_d1(off.time_cov + j * tm1, tm1, "d1");
  add_d2(off.treatment);
  for (int j = 0; j < d; ++j) add_d2(off.treatment_cov + j * layout.w_count());

  SparseMatrix dm(p, p);
  SparseMatrix di(p, p);
  dm.setFromTriplets(fwd.begin(), fwd.end());
  di.setFromTriplets(inv.begin(), inv.end());
  return FusionMatrix(std::move(dm), std::move(di), std::move(blocks), name());
}

FusionMatrix DirectPenalty::build(const DesignLayout& layout) const {
  const int p = layout.p();
  SparseMatrix id(p, p);
  id.setIdentity();
  std::vector<FusionMatrix::Block> blocks;
  for (int j = 0; j < p; ++j) blocks.push_back({j, 1, "identity"});
  return FusionMatrix(id, id, std::move(blocks), name());
}

FusionMatrix build_fusion(const DesignLayout& layout) { return CohortTimeFusion().build(layout); }

double penalty_value(const Eigen::VectorXd& beta, double q, const FusionMatrix& fusion) {
  if (beta.size() != fusion.p()) throw Error(ErrorCode::DimensionMismatch, "fusion", "beta length does not match D");
  const Eigen::VectorXd theta = fusion.apply(beta);
  double total = 0.0;
  for (Eigen::Index j = 0; j < theta.size(); ++j)
    if (theta(j) != 0.0) total += std::pow(std::abs(theta(j)), q);
  return total;
}

SingularValueRange singular_value_range(const FusionMatrix& fusion) {
  SingularValueRange out{std::numeric_limits<double>::infinity(), 0.0};
  std::map<std::pair<std::string, int>, bool> seen;
  for (const auto& b : fusion.blocks()) {
    if (!seen.emplace(std::make_pair(b.kind, b.size), true).second) continue;
    const Eigen::MatrixXd block = Eigen::MatrixXd(fusion.d_mat().block(b.offset, b.offset, b.size, b.size));
    Eigen::BDCSVD<Eigen::MatrixXd> svd(block);
    const auto& sv = svd.singularValues();
    out.max = std::max(out.max, sv.maxCoeff());
    out.min = std::min(out.min, sv.minCoeff());
  }
  return out;
}

}  // namespace fetwfe
