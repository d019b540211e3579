#include "fetwfe/fusion.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace fetwfe;

namespace {

struct Config {
  int t;
  std::vector<int> cohorts;
  int d;
};

std::vector<Config> configs() {
  return {{2, {2}, 0},        {2, {2}, 3},          {5, {2, 3, 4}, 2},     {5, {3, 5}, 1},
          {6, {2, 4, 5}, 2},  {6, {6}, 0},          {30, {2, 3, 4, 5, 6}, 1},
          {33, {6, 7, 8, 9, 10, 11, 12, 13, 14, 17, 21, 22}, 2}};
}

// Penalty terms enumerated coefficient by coefficient.
double penalty_terms(const Eigen::VectorXd& b, double q, const DesignLayout& l) {
  double s = 0.0;
  auto term = [&](double v) { s += std::pow(std::abs(v), q); };
  const auto& c = l.cohorts();
  const int R = l.n_cohorts();
  const int T = l.n_times();
  auto chain_cohort = [&](auto col) {
    for (int k = 0; k + 1 < R; ++k) term(b(col(c[k])) - b(col(c[k + 1])));
    term(b(col(c[R - 1])));
  };
  auto chain_time = [&](auto col) {
    for (int t = 2; t < T; ++t) term(b(col(t)) - b(col(t + 1)));
    term(b(col(T)));
  };
  auto treatment = [&](auto col) {
    term(b(col(c[0], c[0])));
    for (int k = 1; k < R; ++k) term(b(col(c[k], c[k])) - b(col(c[k - 1], c[k - 1])));
    for (int r : c)
      for (int t = r + 1; t <= T; ++t) term(b(col(r, t)) - b(col(r, t - 1)));
  };
  chain_cohort([&](int r) { return l.nu_col(r); });
  chain_time([&](int t) { return l.gamma_col(t); });
  for (int j = 0; j < l.d(); ++j) {
    term(b(l.kappa_col(j)));
    chain_cohort([&](int r) { return l.zeta_col(r, j); });
    chain_time([&](int t) { return l.xi_col(t, j); });
  }
  treatment([&](int r, int t) { return l.tau_col(r, t); });
  for (int j = 0; j < l.d(); ++j) treatment([&](int r, int t) { return l.rho_col(r, t, j); });
  return s;
}

}  // namespace

TEST_CASE("first-difference blocks") {
  Eigen::Matrix3d want;
  want << 1, -1, 0, 0, 1, -1, 0, 0, 1;
  CHECK(build_d1(3) == want);
  CHECK(build_d1(1) == Eigen::MatrixXd::Ones(1, 1));
  Eigen::Matrix3d ones;
  ones << 1, 1, 1, 0, 1, 1, 0, 0, 1;
  CHECK(build_d1_inverse(3) == ones);
  for (int t : {1, 2, 7, 29})
    CHECK((build_d1(t) * build_d1_inverse(t) - Eigen::MatrixXd::Identity(t, t)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("treatment differences") {
  const Eigen::MatrixXd d2 = build_d2(3, {2, 3});
  Eigen::Vector3d tau(1.5, 4.0, -2.0);  // tau22, tau23, tau33
  const Eigen::Vector3d got = d2 * tau;
  CHECK(got(0) == 1.5);
  CHECK(got(1) == 4.0 - 1.5);
  CHECK(got(2) == -2.0 - 1.5);

  CHECK(build_d2(2, {2}) == Eigen::MatrixXd::Identity(1, 1));

  const Eigen::MatrixXd a = build_d2(6, {2, 4, 5});
  const Eigen::MatrixXd ai = build_d2_inverse(6, {2, 4, 5});
  CHECK((a * ai - Eigen::MatrixXd::Identity(a.rows(), a.cols())).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("smallest layout is the identity") {
  const FusionMatrix f = build_fusion(DesignLayout(2, {2}, 0));
  CHECK(support::dense(f.d_mat()) == Eigen::MatrixXd::Identity(3, 3));
  CHECK(support::dense(f.d_inv()) == Eigen::MatrixXd::Identity(3, 3));
}

TEST_CASE("exact inverse and entry structure") {
  for (const Config& c : configs()) {
    CAPTURE(c.t);
    const DesignLayout l(c.t, c.cohorts, c.d);
    const FusionMatrix f = build_fusion(l);
    REQUIRE(f.p() == l.p());
    const Eigen::MatrixXd d = support::dense(f.d_mat());
    const Eigen::MatrixXd di = support::dense(f.d_inv());
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(l.p(), l.p());
    CHECK((d * di - id).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((di * d - id).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((d.array() * (d.array() - 1.0) * (d.array() + 1.0)).abs().maxCoeff() == 0.0);
    CHECK((di.array() * (di.array() - 1.0)).abs().maxCoeff() == 0.0);
    const int limit = (c.t - 1) * (c.t - 1);
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      CHECK((d.row(i).array() != 0.0).count() <= 2);
      CHECK((di.row(i).array() != 0.0).count() <= std::max(limit, 1));
    }
  }
}

TEST_CASE("singular value bounds") {
  for (const Config& c : configs()) {
    CAPTURE(c.t);
    const DesignLayout l(c.t, c.cohorts, c.d);
    const FusionMatrix f = build_fusion(l);
    const SingularValueRange sv = singular_value_range(f);
    const double lower = 1.0 / (c.t * std::sqrt(2.0 * c.t));
    CHECK(sv.max <= 3.0);
    CHECK(sv.min >= lower);
    if (l.p() <= 400) {
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(support::dense(f.d_mat()));
      const auto s = svd.singularValues();
      CHECK(s.maxCoeff() == doctest::Approx(sv.max).epsilon(1e-9));
      CHECK(s.minCoeff() == doctest::Approx(sv.min).epsilon(1e-9));
    }
  }
}

TEST_CASE("penalty value") {
  const DesignLayout l(5, {2, 3, 4}, 2);
  const FusionMatrix f = build_fusion(l);
  CHECK(penalty_value(Eigen::VectorXd::Zero(l.p()), 0.5, f) == 0.0);
  for (int j : {0, 7, 30, 49}) {
    const Eigen::VectorXd e = Eigen::VectorXd::Unit(l.p(), j);
    for (double q : {0.5, 1.0, 2.0}) CHECK(penalty_value(f.apply_inverse(e), q, f) == doctest::Approx(1.0));
  }
  std::mt19937_64 rng(17);
  for (const Config& c : configs()) {
    const DesignLayout lc(c.t, c.cohorts, c.d);
    const FusionMatrix fc = build_fusion(lc);
    for (double q : {0.5, 1.0, 1.5}) {
      const Eigen::VectorXd b = support::random_vector(rng, lc.p());
      CHECK(std::abs(penalty_value(b, q, fc) - penalty_terms(b, q, lc)) <= 1e-10 * (1.0 + penalty_terms(b, q, lc)));
    }
  }
}

TEST_CASE("direct penalty is the identity") {
  const DesignLayout l(5, {2, 3, 4}, 2);
  const FusionMatrix f = DirectPenalty().build(l);
  CHECK(support::dense(f.d_mat()) == Eigen::MatrixXd::Identity(l.p(), l.p()));
  CHECK(support::dense(f.d_inv()) == Eigen::MatrixXd::Identity(l.p(), l.p()));
}

TEST_CASE("reparameterize multiplies by the inverse") {
  std::mt19937_64 rng(23);
  const DesignLayout l(5, {2, 4}, 1);
  const FusionMatrix f = build_fusion(l);
  const Eigen::MatrixXd z = support::random_matrix(rng, 12, l.p());
  CHECK((f.reparameterize(z) - z * support::dense(f.d_inv())).cwiseAbs().maxCoeff() <= 1e-12);
}
