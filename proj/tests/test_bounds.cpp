#include <catch_amalgamated.hpp>

#include <random>

#include "fixtures.hpp"

using namespace koopcert;
using Catch::Approx;

namespace {

BoundInputs table_inputs() {
  BoundInputs in;
  in.c_abs = 1.0;
  in.sigma = 0.02;
  in.m = 1;
  in.q = 1;
  in.delta = 0.05;
  in.N = 800;
  in.beta_N = 0.0885;
  return in;
}

BoundInputs mart_inputs() {
  BoundInputs in;
  in.sigma = 0.02;
  in.q = 1;
  in.lambda = 1e-6;
  in.V_N_logdet_term = 10.0;
  in.s_min = 5.0;
  in.K_star_norm = 1.0;
  in.residual_term = 0.01;
  return in;
}

}  // namespace

TEST_CASE("fixed_design_bound", "[bounds]") {
  BoundInputs zero = table_inputs();
  zero.sigma = 0.0;
  CHECK(fixed_design_bound(zero) == 0.0);

  const BoundInputs in = table_inputs();
  CHECK(fixed_design_bound(in) == Approx(0.02 * std::sqrt((2.0 + std::log(20.0)) / 70.8)).epsilon(1e-12));
  CHECK(fixed_design_bound(in) == Approx(0.00531).epsilon(2e-3));

  BoundInputs with_resid = in;
  with_resid.eps_psi = 0.01;
  CHECK(fixed_design_bound(with_resid) == Approx(fixed_design_bound(in) + 0.01 / std::sqrt(0.0885)));

  BoundInputs none = in;
  none.beta_N = 0.0;
  CHECK(std::isinf(fixed_design_bound(none)));
}

TEST_CASE("fixed_design_bound monotonicity", "[bounds]") {
  BoundInputs in = table_inputs();
  in.eps_psi = 0.001;
  double prev = std::numeric_limits<double>::infinity();
  for (double beta : {0.001, 0.01, 0.1, 1.0}) {
    in.beta_N = beta;
    CHECK(fixed_design_bound(in) < prev);
    prev = fixed_design_bound(in);
  }
  in = table_inputs();
  prev = std::numeric_limits<double>::infinity();
  for (long n : {50L, 100L, 800L, 10000L}) {
    in.N = n;
    CHECK(fixed_design_bound(in) < prev);
    prev = fixed_design_bound(in);
  }
  in = table_inputs();
  prev = -1.0;
  for (double s : {0.0, 0.01, 0.1}) {
    in.sigma = s;
    CHECK(fixed_design_bound(in) > prev);
    prev = fixed_design_bound(in);
  }
  in = table_inputs();
  prev = -1.0;
  for (double e : {0.0, 0.01, 0.1}) {
    in.eps_psi = e;
    CHECK(fixed_design_bound(in) > prev);
    prev = fixed_design_bound(in);
  }
}

TEST_CASE("martingale_bound", "[bounds]") {
  BoundInputs in = mart_inputs();
  const double expected =
      (0.02 * std::sqrt(10.0 - std::log(0.05)) + 0.01 + std::sqrt(1e-6) * 1.0) / std::sqrt(5.0);
  CHECK(martingale_bound(in) == Approx(expected).epsilon(1e-12));

  BoundInputs zero = in;
  zero.sigma = 0.0;
  zero.residual_term = 0.0;
  zero.K_star_norm = 0.0;
  CHECK(martingale_bound(zero) == 0.0);

  SECTION("monotone in s_min, sigma, K*, residual") {
    double prev = std::numeric_limits<double>::infinity();
    for (double s : {0.1, 1.0, 10.0, 100.0}) {
      BoundInputs b = in;
      b.s_min = s;
      CHECK(martingale_bound(b) < prev);
      prev = martingale_bound(b);
    }
    BoundInputs more = in;
    more.sigma *= 2;
    CHECK(martingale_bound(more) > martingale_bound(in));
    more = in;
    more.K_star_norm *= 2;
    CHECK(martingale_bound(more) > martingale_bound(in));
    more = in;
    more.residual_term *= 2;
    CHECK(martingale_bound(more) > martingale_bound(in));
  }
  SECTION("domain errors") {
    BoundInputs bad = in;
    bad.V_N_logdet_term = -10.0;
    CHECK_THROWS_AS(martingale_bound(bad), NumericDomainError);
    bad = in;
    bad.lambda = 0.0;
    CHECK_THROWS_AS(martingale_bound(bad), ConfigError);
    bad = in;
    bad.s_min = 0.0;
    CHECK_THROWS_AS(martingale_bound(bad), ConfigError);
    bad = in;
    bad.delta = 1.0;
    CHECK_THROWS_AS(martingale_bound(bad), ConfigError);
    bad = in;
    bad.sigma = -1.0;
    CHECK_THROWS_AS(fixed_design_bound(bad), ConfigError);
  }
}

TEST_CASE("martingale bound approaches fixed-design scaling as lambda -> 0", "[bounds]") {
  std::mt19937_64 rng(1);
  const Matrix z = oracle::gaussian(rng, 2, 200), u = oracle::gaussian(rng, 1, 200);
  const Matrix up = project_out_state(z, u);
  const double target = linalg::min_sym_eigenvalue(up * up.transpose());
  const BoundInputs in = bound_inputs_from_data(z, u, 1e-10, 2);
  CHECK(in.s_min == Approx(target).epsilon(1e-6));
  CHECK(in.beta_N == Approx(target / 200.0).epsilon(1e-9));
  CHECK(in.N == 200);
  CHECK(in.d == 2);
  Matrix phi(3, 200);
  phi << z, u;
  const Matrix vn = phi * phi.transpose() + 1e-10 * Matrix::Identity(3, 3);
  const double ref = 0.5 * std::log(oracle::to_eigen(oracle::from_eigen(vn)).determinant()) - 1.5 * std::log(1e-10);
  CHECK(in.V_N_logdet_term == Approx(ref).epsilon(1e-10));
}

TEST_CASE("residual_term", "[bounds]") {
  std::mt19937_64 rng(2);
  const Matrix phi = oracle::gaussian(rng, 2, 30);
  CHECK(residual_term(Matrix::Zero(1, 30), phi, 1e-3) == 0.0);
  const Matrix r = oracle::gaussian(rng, 1, 30);
  // ||R Phi^T V^{-1/2}||^2 = R Phi^T V^{-1} Phi R^T for a single row
  const Matrix vn = phi * phi.transpose() + 1e-3 * Matrix::Identity(2, 2);
  const double ref = std::sqrt((r * phi.transpose() * vn.inverse() * phi * r.transpose())(0, 0));
  CHECK(residual_term(r, phi, 1e-3) == Approx(ref).epsilon(1e-10));
}

TEST_CASE("crlb", "[bounds]") {
  CHECK(crlb(0.02, 800, 0.1) == Approx(5.0e-5).epsilon(1e-12));
  CHECK(std::sqrt(crlb(0.02, 800, 0.1)) == Approx(7.071e-3).epsilon(1e-3));
  CHECK(std::isinf(crlb(0.02, 800, 0.0)));
  CHECK(crlb(0.02, 800, 0.6) == Approx(crlb(0.02, 800, 0.3) / 4.0));
  CHECK_THROWS_AS(crlb(0.02, 0, 0.1), ConfigError);
}

TEST_CASE("feedback_margin_check", "[bounds]") {
  const Matrix p = Matrix::Identity(1, 1);
  const Matrix a = Matrix::Constant(1, 1, 0.5), b = Matrix::Zero(1, 1), l = Matrix::Zero(1, 1);
  SECTION("zero perturbation is certified with slack alpha/2") {
    const auto r = feedback_margin_check(a, b, l, p, 0.5, 0.0, 0.0);
    CHECK(r.certified);
    CHECK(r.margin_slack == Approx(0.25));
  }
  SECTION("scalar arithmetic") {
    const auto r = feedback_margin_check(a, b, l, p, 0.5, 0.1, 0.0);
    CHECK(r.certified);
    CHECK(r.eta_cl == Approx(0.1));
    CHECK(r.margin_slack == Approx(0.25 - 0.11));
  }
  SECTION("gain enters through ||L|| eta_B") {
    const Matrix bb = Matrix::Constant(1, 1, 1.0), ll = Matrix::Constant(1, 1, -2.0);
    const auto r = feedback_margin_check(Matrix::Constant(1, 1, 2.5), bb, ll, p, 0.5, 0.0, 0.05);
    CHECK(r.eta_cl == Approx(0.1));
    CHECK(r.certified);
  }
  SECTION("large radius is not certified") {
    const auto r = feedback_margin_check(a, b, l, p, 0.5, 1.0, 0.0);
    CHECK_FALSE(r.certified);
    CHECK(r.margin_slack < 0.0);
  }
  SECTION("nominal loop failing the decrease") {
    const auto r = feedback_margin_check(Matrix::Constant(1, 1, 0.9), b, l, p, 0.5, 0.0, 0.0);
    CHECK_FALSE(r.certified);
    CHECK_FALSE(r.reason.empty());
  }
  CHECK_THROWS_AS(feedback_margin_check(a, b, l, -p, 0.5, 0.0, 0.0), ConfigError);
  CHECK_THROWS_AS(feedback_margin_check(a, b, l, p, 0.0, 0.0, 0.0), ConfigError);
  Matrix asym(2, 2);
  asym << 1, 0.5, 0, 1;
  CHECK_THROWS_AS(feedback_margin_check(Matrix::Zero(2, 2), Matrix::Zero(2, 1), Matrix::Zero(1, 2), asym, 0.5, 0, 0),
                  ConfigError);
}

TEST_CASE("perturbations inside a certified ball keep the decrease", "[bounds]") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  int certified = 0;
  for (int sys = 0; sys < 20; ++sys) {
    Matrix a = oracle::gaussian(rng, 3, 3);
    a *= 0.5 / linalg::spectral_radius(a);
    const Matrix b = oracle::gaussian(rng, 3, 1), l = 0.05 * oracle::gaussian(rng, 1, 3);
    const Matrix f = a + b * l;
    if (linalg::spectral_radius(f) >= 0.95) continue;
    const Matrix p = solve_discrete_lyapunov(f, 1.0);
    const double eta_a = 0.002, eta_b = 0.002;
    const auto check = feedback_margin_check(a, b, l, p, 1.0, eta_a, eta_b);
    if (!check.certified) continue;
    ++certified;
    for (int k = 0; k < 20; ++k) {
      Matrix da = oracle::gaussian(rng, 3, 3), db = oracle::gaussian(rng, 3, 1);
      da *= eta_a * std::abs(unit(rng)) / linalg::op_norm(da);
      db *= eta_b * std::abs(unit(rng)) / linalg::op_norm(db);
      const Matrix ft = (a + da) + (b + db) * l;
      const Matrix lyap = ft.transpose() * p * ft - p + 0.5 * Matrix::Identity(3, 3);
      CHECK(linalg::max_sym_eigenvalue(lyap) <= 1e-9);
    }
  }
  CHECK(certified > 0);
}

TEST_CASE("solve_discrete_lyapunov", "[bounds]") {
  CHECK((solve_discrete_lyapunov(Matrix::Zero(2, 2), 0.3) - 0.3 * Matrix::Identity(2, 2)).norm() <= 1e-15);
  CHECK(solve_discrete_lyapunov(Matrix::Constant(1, 1, 0.5), 0.75)(0, 0) == Approx(1.0).epsilon(1e-12));
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    Matrix f = oracle::gaussian(rng, 3, 3);
    f *= 0.9 / linalg::spectral_radius(f);
    const Matrix p = solve_discrete_lyapunov(f, 1.0);
    CHECK((f.transpose() * p * f - p + Matrix::Identity(3, 3)).norm() <= 1e-8);
  }
  CHECK_THROWS_AS(solve_discrete_lyapunov(Matrix::Constant(1, 1, 1.0), 1.0), InstabilityError);
  CHECK_THROWS_AS(solve_discrete_lyapunov(Matrix::Zero(2, 3), 1.0), ConfigError);
}
