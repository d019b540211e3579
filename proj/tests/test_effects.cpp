#include "fetwfe/effects.hpp"
#include "fetwfe/error.hpp"
#include "fetwfe/fusion.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace fetwfe;

namespace {

Eigen::VectorXd with_tau(const DesignLayout& l, const CellMap& tau) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(l.p());
  for (const auto& [cell, v] : tau) b(l.tau_col(cell.first, cell.second)) = v;
  return b;
}

CohortCounts counts_of(int n0, std::map<int, int> nr) {
  CohortCounts c;
  c.n_0 = n0;
  c.n_r = std::move(nr);
  for (const auto& [r, n] : c.n_r) c.n_tau += n;
  return c;
}

}  // namespace

TEST_CASE("coefficient blocks from a unit theta") {
  const DesignLayout l(5, {2, 3, 4}, 2);
  const FusionMatrix f = build_fusion(l);
  // Dense inverse computed numerically, independent of the closed form.
  const Eigen::MatrixXd dinv = support::dense(f.d_mat()).inverse();
  const int j = l.tau_col(2, 2);
  BridgeFit fit;
  fit.theta_hat = Eigen::VectorXd::Unit(l.p(), j);
  attach_beta(fit, f);
  const CellMap att = att_point(fit, l);
  for (const auto& [r, t] : l.treatment_cells())
    CHECK(att.at({r, t}) == doctest::Approx(dinv(l.tau_col(r, t), j)).epsilon(1e-12));
  // The first cohort's first effect feeds every later effect.
  for (const auto& [cell, v] : att) CHECK(v == doctest::Approx(1.0));

  const CoefficientBlocks zero = recover_beta_blocks(Eigen::VectorXd::Zero(l.p()), l);
  CHECK(zero.tau.isZero(0.0));
  CHECK(zero.rho.isZero(0.0));
  CHECK(zero.xi.rows() == 4);
  CHECK(zero.zeta.rows() == 3);
  CHECK(zero.zeta.cols() == 2);
  CHECK_THROWS_AS(recover_beta_blocks(Eigen::VectorXd::Zero(l.p() - 1), l), Error);
}

TEST_CASE("blocks are read from their columns") {
  const DesignLayout l(4, {2, 4}, 2);
  std::mt19937_64 rng(3);
  const Eigen::VectorXd b = support::random_vector(rng, l.p());
  const CoefficientBlocks blk = recover_beta_blocks(b, l);
  CHECK(blk.nu(1) == b(l.nu_col(4)));
  CHECK(blk.gamma(0) == b(l.gamma_col(2)));
  CHECK(blk.kappa(1) == b(l.kappa_col(1)));
  CHECK(blk.zeta(1, 0) == b(l.zeta_col(4, 0)));
  CHECK(blk.xi(2, 1) == b(l.xi_col(4, 1)));
  CHECK(blk.tau(1) == b(l.tau_col(2, 3)));
  CHECK(blk.rho(2, 1) == b(l.rho_col(2, 4, 1)));
}

TEST_CASE("cell effects") {
  const DesignLayout l(3, {2}, 0);
  const CellMap att = att_point(with_tau(l, {{{2, 2}, 1.0}, {{2, 3}, 3.0}}), l);
  CHECK(att == CellMap{{{2, 2}, 1.0}, {{2, 3}, 3.0}});
  CHECK(cohort_att(att, l).at(2) == 2.0);
  for (const auto& [cell, v] : att_point(Eigen::VectorXd::Zero(l.p()), l)) CHECK(v == 0.0);
}

TEST_CASE("cell effects are linear in theta") {
  const DesignLayout l(5, {2, 3, 4}, 1);
  const FusionMatrix f = build_fusion(l);
  std::mt19937_64 rng(5);
  const Eigen::VectorXd t1 = support::random_vector(rng, l.p());
  const Eigen::VectorXd t2 = support::random_vector(rng, l.p());
  const CellMap a = att_point(f.apply_inverse(t1), l);
  const CellMap b = att_point(f.apply_inverse(t2), l);
  const CellMap c = att_point(f.apply_inverse(t1 + t2), l);
  for (const auto& [cell, v] : c) CHECK(v == doctest::Approx(a.at(cell) + b.at(cell)).epsilon(1e-12));
}

TEST_CASE("fixed-weight aggregation") {
  const CellMap att{{{2, 2}, 1.0}, {{2, 3}, 3.0}, {{3, 3}, -4.0}};
  CHECK(aggregate_fixed(att, {{{2, 2}, 0.5}, {{2, 3}, 0.5}}) == 2.0);
  CHECK(aggregate_fixed(att, {{{2, 2}, 0.0}, {{3, 3}, 0.0}}) == 0.0);
  CHECK(aggregate_fixed(att, {{{3, 3}, 1.0}}) == -4.0);
  try {
    aggregate_fixed(att, {{{4, 4}, 1.0}});
    FAIL("expected UnknownKey");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownKey);
  }
}

TEST_CASE("cohort weights") {
  const DesignLayout l(5, {2, 4}, 0);
  const CellMap w = cohort_average_weights(l);
  CHECK(w.at({2, 2}) == doctest::Approx(0.25));
  CHECK(w.at({4, 5}) == doctest::Approx(0.5));
  const CellMap s = single_cohort_weights(l, 4);
  CHECK(s.size() == 2);
  CHECK(s.at({4, 4}) == doctest::Approx(0.5));
}

TEST_CASE("share-weighted aggregation") {
  SUBCASE("one cohort") {
    const DesignLayout l(4, {3}, 0);
    const CellMap att{{{3, 3}, 2.0}, {{3, 4}, 5.0}};
    CHECK(aggregate_weighted(att, counts_of(2, {{3, 4}}), l) == doctest::Approx(3.5));
  }
  SUBCASE("two cohorts") {
    const DesignLayout l(3, {2, 3}, 0);
    const CellMap att{{{2, 2}, 4.0}, {{2, 3}, 4.0}, {{3, 3}, 0.0}};
    CHECK(aggregate_weighted(att, counts_of(5, {{2, 1}, {3, 3}}), l) == doctest::Approx(1.0));
  }
  SUBCASE("telescoping identity") {
    const DesignLayout l(6, {2, 3, 5}, 0);
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> n(1, 40);
    for (int rep = 0; rep < 200; ++rep) {
      CellMap att;
      for (const auto& cell : l.treatment_cells()) att[cell] = support::random_vector(rng, 1)(0);
      const CohortCounts c = counts_of(n(rng), {{2, n(rng)}, {3, n(rng)}, {5, n(rng)}});
      const CohortMap cohorts = cohort_att(att, l);
      double want = 0.0;
      for (const auto& [r, v] : cohorts) want += static_cast<double>(c.at(r)) / c.n_tau * v;
      CHECK(std::abs(aggregate_weighted(att, c, l) - want) <= 1e-12);
      double share_sum = 0.0;
      for (const auto& [r, f] : default_shares(c)) share_sum += f;
      CHECK(share_sum == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
  SUBCASE("no treated units") {
    const DesignLayout l(3, {2}, 0);
    try {
      aggregate_weighted({{{2, 2}, 1.0}, {{2, 3}, 1.0}}, counts_of(3, {{2, 0}}), l);
      FAIL("expected NoTreatedUnits");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NoTreatedUnits);
    }
  }
}

TEST_CASE("conditional effects") {
  DesignLayout l(3, {2, 3}, 1);
  Eigen::MatrixXd means(2, 1);
  means << 1.0, -2.0;
  l.set_cohort_means(means);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(l.p());
  b(l.tau_col(2, 3)) = 1.0;
  b(l.rho_col(2, 3, 0)) = 2.0;
  Eigen::VectorXd x(1);
  x << 1.5;
  CHECK(catt_point(b, l, 2, 3, x) == doctest::Approx(2.0));
  x << 1.0;
  CHECK(catt_point(b, l, 2, 3, x) == 1.0);
  CHECK_THROWS_AS(catt_point(b, l, 3, 2, x), Error);
  try {
    catt_point(b, l, 3, 2, x);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CohortTimeOutOfRange);
  }
  CHECK_THROWS_AS(catt_point(b, l, 2, 3, Eigen::VectorXd::Zero(2)), Error);
}

TEST_CASE("conditional effects on random fits") {
  DesignLayout l(5, {2, 4}, 3);
  std::mt19937_64 rng(11);
  l.set_cohort_means(support::random_matrix(rng, 2, 3));
  const Eigen::VectorXd b = support::random_vector(rng, l.p());
  const CellMap att = att_point(b, l);
  for (const auto& [r, t] : l.treatment_cells()) {
    const Eigen::VectorXd x = support::random_vector(rng, 3);
    const Eigen::VectorXd xbar = l.cohort_means().row(l.cohort_position(r)).transpose();
    double want = b(l.tau_col(r, t));
    for (int j = 0; j < 3; ++j) want += (x(j) - xbar(j)) * b(l.rho_col(r, t, j));
    CHECK(catt_point(b, l, r, t, x) == doctest::Approx(want).epsilon(1e-12));
    CHECK(catt_point(b, l, r, t, xbar) == att.at({r, t}));
  }

  const Eigen::VectorXd x = support::random_vector(rng, 3);
  const CellMap psi = cohort_average_weights(l);
  double fixed = 0.0;
  for (const auto& [cell, w] : psi) fixed += w * catt_point(b, l, cell.first, cell.second, x);
  CHECK(catt_fixed(b, l, psi, x) == doctest::Approx(fixed).epsilon(1e-12));

  const CohortMap prop{{2, 0.2}, {4, 0.6}};
  double weighted = 0.0;
  for (const auto& [cell, w] : psi) weighted += w * prop.at(cell.first) / 0.8 * catt_point(b, l, cell.first, cell.second, x);
  CHECK(catt_weighted(b, l, psi, x, prop) == doctest::Approx(weighted).epsilon(1e-12));
}

TEST_CASE("untreated-trend diagnostic") {
  const DesignLayout l(4, {2, 3}, 2);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(l.p());
  b(l.tau_col(2, 2)) = 3.0;
  CHECK(ciun_diagnostic(b, l).holds);
  b(l.xi_col(3, 1)) = 0.1;
  const CiunDiagnostic d = ciun_diagnostic(b, l);
  CHECK_FALSE(d.holds);
  REQUIRE(d.violations.size() == 1);
  CHECK(d.violations[0] == std::pair<int, int>{3, 1});
}
