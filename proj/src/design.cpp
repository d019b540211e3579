#include "fetwfe/design.hpp"

#include "fetwfe/error.hpp"

#include <algorithm>
#include <ostream>

namespace fetwfe {

namespace {

void check_cohorts(int n_times, const std::vector<int>& cohorts) {
  if (n_times < 2) throw Error(ErrorCode::CohortOutOfRange, "design", "T must be at least 2");
  for (std::size_t k = 0; k < cohorts.size(); ++k) {
    const int r = cohorts[k];
    if (r < 2 || r > n_times)
      throw Error(ErrorCode::CohortOutOfRange, "design",
                  "cohort start time " + std::to_string(r) + " outside 2.." + std::to_string(n_times));
    if (k > 0 && r <= cohorts[k - 1])
      throw Error(ErrorCode::CohortOutOfRange, "design", "cohort start times must be distinct and sorted");
  }
}

}  // namespace

ParamCount count_params(int n_times, const std::vector<int>& cohorts, int d) {
  check_cohorts(n_times, cohorts);
  if (d < 0) throw Error(ErrorCode::CohortOutOfRange, "design", "d must be nonnegative");
  const int r_count = static_cast<int>(cohorts.size());
  int w = 0;
  for (int r : cohorts) w += n_times - r + 1;
  const int p = r_count + (n_times - 1) + w + d * (1 + r_count + (n_times - 1) + w);
  return {p, w};
}

DesignLayout::DesignLayout(int n_times, std::vector<int> cohorts, int d)
    : n_times_(n_times), cohorts_(std::move(cohorts)), d_(d) {
  const auto pc = count_params(n_times_, cohorts_, d_);
  p_ = pc.p;
  w_count_ = pc.w_count;
  const int r_count = n_cohorts();

  offsets_.cohort_fe = 0;
  offsets_.time_fe = offsets_.cohort_fe + r_count;
  offsets_.covariates = offsets_.time_fe + (n_times_ - 1);
  offsets_.cohort_cov = offsets_.covariates + d_;
  offsets_.time_cov = offsets_.cohort_cov + d_ * r_count;
  offsets_.treatment = offsets_.time_cov + d_ * (n_times_ - 1);
  offsets_.treatment_cov = offsets_.treatment + w_count_;

  for (int r : cohorts_) {
    cohort_cell_start_.push_back(static_cast<int>(cells_.size()));
    for (int t = r; t <= n_times_; ++t) cells_.emplace_back(r, t);
  }
  cohort_means_ = Eigen::MatrixXd::Zero(r_count, d_);
}

int DesignLayout::cohort_position(int r) const {
  auto it = std::lower_bound(cohorts_.begin(), cohorts_.end(), r);
  if (it == cohorts_.end() || *it != r)
    throw Error(ErrorCode::CohortTimeOutOfRange, "design", "unknown cohort " + std::to_string(r));
  return static_cast<int>(it - cohorts_.begin());
}

int DesignLayout::nu_col(int r) const { return offsets_.cohort_fe + cohort_position(r); }

int DesignLayout::gamma_col(int t) const {
  if (t < 2 || t > n_times_) throw Error(ErrorCode::CohortTimeOutOfRange, "design", "time dummy out of range");
  return offsets_.time_fe + (t - 2);
}

int DesignLayout::kappa_col(int j) const { return offsets_.covariates + j; }

int DesignLayout::zeta_col(int r, int j) const { return offsets_.cohort_cov + j * n_cohorts() + cohort_position(r); }

int DesignLayout::xi_col(int t, int j) const {
  if (t < 2 || t > n_times_) throw Error(ErrorCode::CohortTimeOutOfRange, "design", "time dummy out of range");
  return offsets_.time_cov + j * (n_times_ - 1) + (t - 2);
}

bool DesignLayout::has_cell(int r, int t) const {
  return std::binary_search(cohorts_.begin(), cohorts_.end(), r) && t >= r && t <= n_times_;
}

int DesignLayout::tau_col(int r, int t) const {
  if (!has_cell(r, t))
    throw Error(ErrorCode::CohortTimeOutOfRange, "design",
                "no treatment effect for cohort " + std::to_string(r) + " at time " + std::to_string(t));
  return offsets_.treatment + cohort_cell_start_[static_cast<std::size_t>(cohort_position(r))] + (t - r);
}

int DesignLayout::rho_col(int r, int t, int j) const {
  return offsets_.treatment_cov + j * w_count_ + (tau_col(r, t) - offsets_.treatment);
}

void DesignLayout::set_cohort_means(Eigen::MatrixXd means) {
  if (means.rows() != n_cohorts() || means.cols() != d_)
    throw Error(ErrorCode::LayoutMismatch, "design", "cohort means must be R x d");
  cohort_means_ = std::move(means);
}

bool DesignLayout::same_structure(const DesignLayout& o) const {
  return n_times_ == o.n_times_ && cohorts_ == o.cohorts_ && d_ == o.d_;
}

std::vector<std::string> DesignLayout::column_names(const std::vector<std::string>& covariate_names,
                                                    const std::vector<long long>& time_labels) const {
  auto cov = [&](int j) {
    return j < static_cast<int>(covariate_names.size()) ? covariate_names[static_cast<std::size_t>(j)]
                                                        : "x" + std::to_string(j + 1);
  };
  auto lab = [&](int t) {
    return t - 1 < static_cast<int>(time_labels.size()) ? std::to_string(time_labels[static_cast<std::size_t>(t - 1)])
                                                        : std::to_string(t);
  };
  std::vector<std::string> names(static_cast<std::size_t>(p_));
  auto set = [&](int col, std::string s) { names[static_cast<std::size_t>(col)] = std::move(s); };
  for (int r : cohorts_) set(nu_col(r), "nu_r" + lab(r));
  for (int t = 2; t <= n_times_; ++t) set(gamma_col(t), "gamma_t" + lab(t));
  for (int j = 0; j < d_; ++j) {
    set(kappa_col(j), "kappa_" + cov(j));
    for (int r : cohorts_) set(zeta_col(r, j), "zeta_r" + lab(r) + "_" + cov(j));
    for (int t = 2; t <= n_times_; ++t) set(xi_col(t, j), "xi_t" + lab(t) + "_" + cov(j));
  }
  for (auto [r, t] : cells_) {
    set(tau_col(r, t), "tau_r" + lab(r) + "_t" + lab(t));
    for (int j = 0; j < d_; ++j) set(rho_col(r, t, j), "rho_r" + lab(r) + "_t" + lab(t) + "_" + cov(j));
  }
  return names;
}

Eigen::VectorXd stack_response(const PanelDataset& data) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(data.n_units) * data.n_times);
  for (int i = 0; i < data.n_units; ++i)
    for (int t = 0; t < data.n_times; ++t) y(i * data.n_times + t) = data.response(i, t);
  return y;
}

Eigen::MatrixXd compute_cohort_means(const PanelDataset& data) {
  const int d = data.n_covariates();
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(data.n_cohorts(), d);
  std::vector<int> n(static_cast<std::size_t>(data.n_cohorts()), 0);
  for (int i = 0; i < data.n_units; ++i) {
    const int w = data.assignment[static_cast<std::size_t>(i)];
    if (w == 0) continue;
    const auto k = std::lower_bound(data.cohorts.begin(), data.cohorts.end(), w) - data.cohorts.begin();
    means.row(k) += data.covariates.row(i);
    ++n[static_cast<std::size_t>(k)];
  }
  for (Eigen::Index k = 0; k < means.rows(); ++k)
    if (n[static_cast<std::size_t>(k)] > 0) means.row(k) /= n[static_cast<std::size_t>(k)];
  return means;
}

DesignMatrix build_design(const PanelDataset& data, const std::optional<Eigen::MatrixXd>& cohort_means) {
  const int n = data.n_units;
  const int big_t = data.n_times;
  const int d = data.n_covariates();
  DesignLayout layout(big_t, data.cohorts, d);
  layout.set_cohort_means(cohort_means ? *cohort_means : compute_cohort_means(data));
  const auto& means = layout.cohort_means();

  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n) * big_t, layout.p());
  for (int i = 0; i < n; ++i) {
    const int w = data.assignment[static_cast<std::size_t>(i)];
    const int k = w == 0 ? -1 : layout.cohort_position(w);
    const auto x = data.covariates.row(i);
    for (int t = 1; t <= big_t; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * big_t + (t - 1);
      if (w != 0) z(row, layout.nu_col(w)) = 1.0;
      if (t >= 2) z(row, layout.gamma_col(t)) = 1.0;
      for (int j = 0; j < d; ++j) {
        z(row, layout.kappa_col(j)) = x(j);
        if (w != 0) z(row, layout.zeta_col(w, j)) = x(j);
        if (t >= 2) z(row, layout.xi_col(t, j)) = x(j);
      }
      if (w != 0 && t >= w) {
        z(row, layout.tau_col(w, t)) = 1.0;
        for (int j = 0; j < d; ++j) z(row, layout.rho_col(w, t, j)) = x(j) - means(k, j);
      }
    }
  }
  return {std::move(z), std::move(layout)};
}

Centered center_response_and_columns(const Eigen::MatrixXd& design, const Eigen::VectorXd& response) {
  if (design.rows() != response.size())
    throw Error(ErrorCode::DimensionMismatch, "design", "design and response row counts differ");
  Centered c;
  const double n = static_cast<double>(design.rows());
  c.column_means = design.colwise().sum() / n;
  c.design = design.rowwise() - c.column_means;
  c.response_mean = response.sum() / n;
  c.response = response.array() - c.response_mean;
  return c;
}

void write_design_csv(std::ostream& out, const DesignMatrix& design, const std::vector<std::string>& covariate_names) {
  const auto names = design.layout.column_names(covariate_names);
  for (std::size_t k = 0; k < names.size(); ++k) out << (k ? "," : "") << names[k];
  out << '\n';
  const Eigen::IOFormat fmt(Eigen::FullPrecision, Eigen::DontAlignCols, ",", "\n");
  out << design.values.format(fmt) << '\n';
}

}  // namespace fetwfe
