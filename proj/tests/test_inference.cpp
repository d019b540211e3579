#include "fetwfe/error.hpp"
#include "fetwfe/inference.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace fetwfe;

namespace {

CohortCounts counts_of(int n0, std::map<int, int> nr) {
  CohortCounts c;
  c.n_0 = n0;
  c.n_r = std::move(nr);
  for (const auto& [r, n] : c.n_r) c.n_tau += n;
  return c;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& m, const std::vector<int>& s) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(s.size()));
  for (std::size_t k = 0; k < s.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(s[k]);
  return out;
}

Eigen::VectorXd select_entries(const Eigen::VectorXd& v, const std::vector<int>& s) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(s.size()));
  for (std::size_t k = 0; k < s.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(s[k]);
  return out;
}

Eigen::MatrixXd centered_cov(Eigen::MatrixXd a) {
  a.rowwise() -= a.colwise().mean();
  return a.transpose() * a / static_cast<double>(a.rows());
}

// Share Jacobian written out entry by entry: rows w in {0, cohorts}, columns r.
Eigen::MatrixXd jacobian_oracle(const Eigen::VectorXd& pi) {
  const Eigen::Index k = pi.size() - 1;
  double sum = 0.0;
  for (Eigen::Index r = 1; r <= k; ++r) sum += pi(r);
  Eigen::MatrixXd j = Eigen::MatrixXd::Zero(k + 1, k);
  for (Eigen::Index r = 0; r < k; ++r)
    for (Eigen::Index w = 1; w <= k; ++w) j(w, r) = (w == r + 1 ? sum - pi(r + 1) : -pi(r + 1)) / (sum * sum);
  return j;
}

}  // namespace

TEST_CASE("selected covariance") {
  std::mt19937_64 rng(3);
  SUBCASE("orthonormal columns give the identity") {
    const Eigen::MatrixXd a = support::orthonormal_design(rng, 30, 4);
    const SelectedCovariance c = selected_cov_reparameterized(a, {0, 1, 2, 3});
    CHECK((c.matrix - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("empty selection") {
    try {
      selected_cov_reparameterized(support::random_matrix(rng, 10, 3), {});
      FAIL("expected EmptySelection");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EmptySelection);
    }
  }
  SUBCASE("dense oracle") {
    const Eigen::MatrixXd a = support::random_matrix(rng, 30, 4);
    const SelectedCovariance c = selected_cov_reparameterized(a, {0, 2, 3});
    const Eigen::MatrixXd want = centered_cov(select_columns(a, {0, 2, 3}));
    CHECK((c.matrix - want).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((c.inverse * c.matrix - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-8);
  }
  SUBCASE("columns of Z times the inverse differences") {
    const DesignLayout l(4, {2, 3}, 1);
    const FusionMatrix f = build_fusion(l);
    const Eigen::MatrixXd z = support::random_matrix(rng, 60, l.p());
    const std::vector<int> s{0, 4, 9, 12, 20};
    const SelectedCovariance c = selected_cov(z, f, s);
    const Eigen::MatrixXd want = centered_cov(select_columns(z * support::dense(f.d_mat()).inverse(), s));
    CHECK((c.matrix - want).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(c.indices == s);
  }
  SUBCASE("singular") {
    Eigen::MatrixXd a = support::random_matrix(rng, 20, 3);
    a.col(2) = a.col(0) - a.col(1);
    try {
      selected_cov_reparameterized(a, {0, 1, 2});
      FAIL("expected SingularCovariance");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::SingularCovariance);
    }
  }
}

TEST_CASE("fixed weight vectors") {
  const DesignLayout l(5, {2, 3, 4}, 2);
  const FusionMatrix f = build_fusion(l);
  const Eigen::MatrixXd dinv = support::dense(f.d_inv());
  const Eigen::VectorXd single = psi_vector_fixed({{{3, 4}, 1.0}}, f, l);
  CHECK((single - dinv.row(l.tau_col(3, 4)).transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(psi_vector_fixed({{{3, 4}, 0.0}, {{2, 2}, 0.0}}, f, l).isZero(0.0));

  // Cohort-average weights: sum of D^{-1} rows scaled by 1 / (T - r + 1).
  for (int r : {2, 3, 4}) {
    const CellMap w = single_cohort_weights(l, r);
    Eigen::VectorXd want = Eigen::VectorXd::Zero(l.p());
    for (int t = r; t <= 5; ++t) want += dinv.row(l.tau_col(r, t)).transpose();
    want /= (5 - r + 1);
    const Eigen::VectorXd got = psi_vector_fixed(w, f, l);
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-15);
    for (Eigen::Index j = 0; j < got.size(); ++j) {
      const double scaled = got(j) * (5 - r + 1);
      CHECK(std::abs(scaled - std::round(scaled)) <= 1e-12);
    }
  }
}

TEST_CASE("fixed-weight variance") {
  SelectedCovariance id{{0, 1}, Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2)};
  CHECK(var_fixed(Eigen::Vector2d(1.0, 1.0), id, 1.0).value == doctest::Approx(2.0));

  std::mt19937_64 rng(5);
  const Eigen::MatrixXd g = support::random_matrix(rng, 5, 5);
  const Eigen::MatrixXd spd = g * g.transpose() + 0.5 * Eigen::MatrixXd::Identity(5, 5);
  const SelectedCovariance c{{0, 1, 2, 3, 4}, spd, spd.inverse()};
  CHECK(var_fixed(Eigen::VectorXd::Unit(5, 0), c, 3.0).value == doctest::Approx(3.0 * spd.inverse()(0, 0)));
  const Eigen::VectorXd psi = support::random_vector(rng, 5);
  const double want = 2.0 * psi.dot(spd.fullPivLu().solve(psi));
  CHECK(std::abs(var_fixed(psi, c, 2.0).value - want) <= 1e-10 * (1.0 + want));

  // Only the selected entries of psi enter.
  const SelectedCovariance sub{{1, 3}, Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2)};
  Eigen::VectorXd wide = Eigen::VectorXd::Zero(5);
  wide(0) = 7.0;
  const VarianceEstimate v = var_fixed(wide, sub, 1.0);
  CHECK(v.degenerate);
  wide(3) = 2.0;
  CHECK(var_fixed(wide, sub, 1.0).value == doctest::Approx(4.0));
  CHECK_FALSE(var_fixed(wide, sub, 1.0).degenerate);
}

TEST_CASE("fixed-weight variance ignores an orthogonal zero-weight column") {
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd a = support::orthonormal_design(rng, 40, 4);
  Eigen::MatrixXd b = a;
  b.col(1) = a.col(0) + 0.5 * a.col(1);  // correlated with column 0, orthogonal to 3
  const Eigen::VectorXd psi = Eigen::Vector4d(1.0, -2.0, 0.0, 0.0);
  const double small = var_fixed(psi, selected_cov_reparameterized(b, {0, 1}), 1.5).value;
  const double large = var_fixed(psi, selected_cov_reparameterized(b, {0, 1, 3}), 1.5).value;
  CHECK(std::abs(small - large) <= 1e-8);
}

TEST_CASE("multinomial share covariance") {
  const Eigen::MatrixXd m = sigma_m_hat(counts_of(2, {{2, 1}, {3, 1}}), 4);
  Eigen::Matrix3d want;
  want << 4, -2, -2, -2, 3, -1, -2, -1, 3;
  CHECK((m - want / 16.0).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(sigma_m_hat(counts_of(0, {{2, 5}, {4, 0}})).isZero(0.0));

  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> n(0, 30);
  for (int rep = 0; rep < 100; ++rep) {
    const CohortCounts c = counts_of(n(rng), {{2, n(rng)}, {3, n(rng)}, {5, n(rng) + 1}});
    const Eigen::MatrixXd s = sigma_m_hat(c);
    CHECK(s.rowwise().sum().cwiseAbs().maxCoeff() <= 1e-15);
  }
}

TEST_CASE("share Jacobian") {
  const Eigen::MatrixXd j = jacobian_cohort_share(Eigen::Vector3d(0.5, 0.25, 0.25));
  CHECK(j(1, 0) == doctest::Approx(1.0));
  CHECK(j(2, 0) == doctest::Approx(-1.0));
  CHECK(j(0, 0) == 0.0);
  CHECK(j.row(0).isZero(0.0));
  CHECK(jacobian_cohort_share(Eigen::Vector2d(0.3, 0.7)).isZero(1e-15));
  CHECK_THROWS_AS(jacobian_cohort_share(counts_of(4, {{2, 0}})), Error);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd pi(4);
    for (int k = 0; k < 4; ++k) pi(k) = u(rng);
    pi /= pi.sum();
    const Eigen::MatrixXd got = jacobian_cohort_share(pi);
    CHECK((got - jacobian_oracle(pi)).cwiseAbs().maxCoeff() <= 1e-12);
    const double h = 1e-6;
    for (int w = 0; w < 4; ++w) {
      Eigen::VectorXd up = pi, down = pi;
      up(w) += h;
      down(w) -= h;
      for (int r = 0; r < 3; ++r) {
        const double fd = (up(r + 1) / up.tail(3).sum() - down(r + 1) / down.tail(3).sum()) / (2.0 * h);
        CHECK(std::abs(fd - got(w, r)) <= 1e-6);
      }
    }
  }
}

TEST_CASE("share-weighted variance") {
  const DesignLayout l(4, {2, 3}, 1);
  const FusionMatrix f = build_fusion(l);
  const Eigen::MatrixXd dinv = support::dense(f.d_mat()).inverse();
  std::mt19937_64 rng(13);
  const Eigen::MatrixXd z = support::random_matrix(rng, 80, l.p());
  const std::vector<int> s{0, 3, 5, 7, 8, 10, 14, 19};
  const SelectedCovariance cov = selected_cov(z, f, s);
  const CohortCounts counts = counts_of(7, {{2, 5}, {3, 8}});
  BridgeFit fit;
  fit.theta_hat = Eigen::VectorXd::Zero(l.p());
  for (int j : s) fit.theta_hat(j) = support::random_vector(rng, 1)(0);
  const double sigma_sq = 2.5;

  SUBCASE("formula replay") {
    Eigen::MatrixXd m(2, static_cast<Eigen::Index>(s.size()));
    Eigen::VectorXd psi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.size()));
    const double n_tau = 13.0;
    int k = 0;
    for (int r : {2, 3}) {
      Eigen::VectorXd row = Eigen::VectorXd::Zero(l.p());
      for (int t = r; t <= 4; ++t) row += dinv.row(l.tau_col(r, t)).transpose() / (4 - r + 1);
      m.row(k++) = select_entries(row, s).transpose();
      psi += counts.at(r) / n_tau * select_entries(row, s);
    }
    const Eigen::MatrixXd cinv = cov.matrix.fullPivLu().inverse();
    const double first = sigma_sq * psi.dot(cinv * psi);
    const Eigen::Vector3d pi(7.0 / 20, 5.0 / 20, 8.0 / 20);
    Eigen::Matrix3d sm;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) sm(a, b) = (a == b ? pi(a) * (1 - pi(a)) : -pi(a) * pi(b));
    const Eigen::MatrixXd jac = jacobian_oracle(pi);
    const Eigen::MatrixXd v = 4.0 * m.transpose() * jac.transpose() * sm * jac * m;
    const Eigen::VectorXd ts = select_entries(fit.theta_hat, s);
    const double second = ts.dot(v * ts);

    const WeightedVariance got = var_weighted(fit, l, f, cov, counts, sigma_sq);
    CHECK(std::abs(got.first - first) <= 1e-10 * (1.0 + first));
    CHECK(std::abs(got.second - second) <= 1e-10 * (1.0 + second));
    CHECK(got.split.value == doctest::Approx(first + second).epsilon(1e-12));
    CHECK(got.conservative.value >= got.split.value);
    CHECK(got.split.kind == VarianceKind::WeightedSplit);
    CHECK(got.conservative.kind == VarianceKind::WeightedConservative);
  }
  SUBCASE("zero coefficients leave only the first term") {
    BridgeFit zero = fit;
    zero.theta_hat.setZero();
    const WeightedVariance got = var_weighted(zero, l, f, cov, counts, sigma_sq);
    CHECK(got.second == 0.0);
    CellMap weights;
    for (const auto& [cell, w] : cohort_average_weights(l))
      weights[cell] = w * counts.at(cell.first) / static_cast<double>(counts.n_tau);
    const double fixed = var_fixed(psi_vector_fixed(weights, f, l), cov, sigma_sq).value;
    CHECK(got.first == doctest::Approx(fixed).epsilon(1e-12));
  }
  SUBCASE("single cohort has no share term") {
    const DesignLayout l1(4, {3}, 0);
    const FusionMatrix f1 = build_fusion(l1);
    const Eigen::MatrixXd z1 = support::random_matrix(rng, 40, l1.p());
    std::vector<int> all(static_cast<std::size_t>(l1.p()));
    for (int j = 0; j < l1.p(); ++j) all[static_cast<std::size_t>(j)] = j;
    BridgeFit f1fit;
    f1fit.theta_hat = support::random_vector(rng, l1.p());
    const WeightedVariance got =
        var_weighted(f1fit, l1, f1, selected_cov(z1, f1, all), counts_of(3, {{3, 6}}), 1.0);
    CHECK(got.second == 0.0);
  }
}

TEST_CASE("conservative combination") {
  CHECK(var_conservative(1.0, 0.0).value == 1.0);
  CHECK(var_conservative(4.0, 1.0).value == doctest::Approx(9.0));
  CHECK(var_conservative(2.0, 3.0).value == doctest::Approx(5.0 + 2.0 * std::sqrt(6.0)));
  CHECK(var_conservative(2.0, 3.0).value == doctest::Approx(9.898979).epsilon(1e-6));
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int k = 0; k < 1000; ++k) {
    const double a = u(rng);
    const double b = u(rng);
    CHECK(var_conservative(a, b).value >= a + b);
  }
  CHECK_THROWS_AS(var_conservative(-1.0, 0.0), Error);
}

TEST_CASE("confidence intervals") {
  const ConfidenceInterval a = conf_interval(0.0, {100.0, VarianceKind::Fixed, false}, 100, 0.05);
  CHECK(a.low == doctest::Approx(-1.959964).epsilon(1e-6));
  CHECK(a.high == doctest::Approx(1.959964).epsilon(1e-6));
  CHECK(a.se == 1.0);

  const double se = 4.58;
  const ConfidenceInterval b = conf_interval(-3.76, {se * se * 42 * 33, VarianceKind::WeightedConservative, false},
                                             42 * 33, 0.05);
  CHECK(b.se == doctest::Approx(se));
  CHECK(b.low == doctest::Approx(-12.74).epsilon(0.0005));
  CHECK(b.high == doctest::Approx(5.22).epsilon(0.002));

  const ConfidenceInterval c = conf_interval(1.5, {3.0, VarianceKind::Fixed, false}, 10, 1.0);
  CHECK(c.low == 1.5);
  CHECK(c.high == 1.5);

  const ConfidenceInterval d = conf_interval(0.0, {0.0, VarianceKind::Fixed, true}, 10, 0.05);
  CHECK(d.degenerate);
}

TEST_CASE("normal quantile accuracy") {
  for (double u = 1e-6; u < 1.0 - 1e-6; u += 1e-3) CHECK(std::abs(normal_cdf(normal_quantile(u)) - u) <= 1e-12);
  for (double u : {1e-6, 1e-5, 0.02425, 0.97575, 1.0 - 1e-6}) CHECK(std::abs(normal_cdf(normal_quantile(u)) - u) <= 1e-12);
  CHECK(std::abs(normal_quantile(0.5)) <= 1e-15);
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-13));
}
