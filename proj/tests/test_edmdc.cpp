#include <catch_amalgamated.hpp>

#include <random>

#include "fixtures.hpp"

using namespace koopcert;
using Catch::Approx;

namespace {

LiftedRegressionData scalar_data(double eps, long n, std::uint64_t seed) {
  return prepare(simulate_scalar(scalar_system(), scalar_policy(-0.7, eps), n, 0.0, seed),
                 build_dictionary(DictionaryKind::identity, 1));
}

}  // namespace

TEST_CASE("fit_ls recovers noiseless linear dynamics", "[edmdc]") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto in = fixtures::random_instance(rng);
    const auto model = fit_ls(fixtures::regression_data(in.Z, in.U, in.Y));
    CHECK((model.A - in.A).norm() <= 1e-8 * std::max(1.0, in.A.norm()));
    CHECK((model.B - in.B).norm() <= 1e-8 * std::max(1.0, in.B.norm()));
  }
}

TEST_CASE("fit_ls residual is minimal", "[edmdc]") {
  std::mt19937_64 rng(2);
  const auto in = fixtures::random_instance(rng, 0.1);
  const auto data = fixtures::regression_data(in.Z, in.U, in.Y);
  const Matrix k = fit_ls(data).K();
  const double best = (data.Y - k * data.Phi).norm();
  for (int t = 0; t < 20; ++t) {
    const Matrix pert = k + 1e-3 * oracle::gaussian(rng, k.rows(), k.cols());
    CHECK((data.Y - pert * data.Phi).norm() >= best);
  }
}

TEST_CASE("fit_ls on deterministic feedback reproduces the closed loop", "[edmdc]") {
  const auto data = scalar_data(0.0, 800, 3);
  const auto model = fit_ls(data);
  // u = kappa x exactly, so only the closed-loop coefficient is determined: it
  // equals the simple regression of y on z.
  const double kappa = data.stats.input_scales(0) / data.stats.feature_scales(0) * (data.U(0, 0) / data.Z(0, 0));
  CHECK(kappa == Approx(-0.7).epsilon(1e-9));
  const double closed = model.raw_A()(0, 0) + model.raw_B()(0, 0) * kappa;
  const double slope = data.Y.row(0).dot(data.Z.row(0)) / data.Z.row(0).squaredNorm();
  CHECK(closed == Approx(slope).epsilon(1e-8));
  CHECK(closed == Approx(0.43).margin(0.1));
  // Minimum-norm representative: standardized [A, B] lies in the range of Phi, spanned by (1, -1).
  CHECK(std::abs(model.A(0, 0) + model.B(0, 0)) <= 1e-8);
}

TEST_CASE("closed-loop coefficient is exact on noiseless feedback data", "[edmdc]") {
  const auto sim = simulate_scalar(scalar_system(0.85, 0.6, 0.0), scalar_policy(-0.7, 0.0), 30, 1.0, 1);
  const auto raw = assemble(sim, build_dictionary(DictionaryKind::identity, 1));
  const auto data = standardize(raw, {true}, {false, false});
  const auto model = fit_ls(data);
  CHECK(model.A(0, 0) + model.B(0, 0) * -0.7 == Approx(0.43).epsilon(1e-8));
}

TEST_CASE("fit_ls interpolates when N < d + m", "[edmdc]") {
  std::mt19937_64 rng(4);
  const Matrix z = oracle::gaussian(rng, 4, 3), u = oracle::gaussian(rng, 2, 3), y = oracle::gaussian(rng, 4, 3);
  const auto model = fit_ls(fixtures::regression_data(z, u, y));
  CHECK((y - model.A * z - model.B * u).norm() <= 1e-10 * y.norm());
}

TEST_CASE("fit_ridge", "[edmdc]") {
  std::mt19937_64 rng(5);
  const auto in = fixtures::random_instance(rng, 0.05);
  const auto data = fixtures::regression_data(in.Z, in.U, in.Y);
  CHECK(fit_ridge(data, 1e12).K().norm() <= 1e-6 * fit_ls(data).K().norm());
  CHECK((fit_ridge(data, 0.0).K() - fit_ls(data).K()).norm() <= 1e-12);
  CHECK((fit_ridge(data, 1e-12).K() - fit_ls(data).K()).norm() <= 1e-8 * fit_ls(data).K().norm());
  const Matrix ref = oracle::to_eigen(oracle::ridge(oracle::from_eigen(data.Y), oracle::from_eigen(data.Phi), 0.3));
  CHECK((fit_ridge(data, 0.3).K() - ref).norm() <= 1e-10 * ref.norm());
  CHECK_THROWS_AS(fit_ridge(data, -1.0), ConfigError);

  SECTION("continuity as lambda -> 0") {
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : {1e-1, 1e-3, 1e-5, 1e-7}) {
      const double gap = (fit_ridge(data, lambda).K() - fit_ls(data).K()).norm();
      CHECK(gap < prev);
      prev = gap;
    }
    CHECK(prev <= 1e-5);
  }
}

TEST_CASE("fit_ridge scalar closed form", "[edmdc]") {
  Matrix z(1, 3), u(1, 3), y(1, 3);
  z << 1, 2, 3;
  u << 1, 0, -1;
  y << 2, 1, 0;
  const double lambda = 0.5;
  // G = [[14+l, -2], [-2, 2+l]], r = Y Phi^T = [4, 2]
  const double g11 = 14 + lambda, g12 = -2, g22 = 2 + lambda, det = g11 * g22 - g12 * g12;
  const double a = (4 * g22 - 2 * g12) / det, b = (2 * g11 - 4 * g12) / det;
  const auto model = fit_ridge(fixtures::regression_data(z, u, y), lambda);
  CHECK(model.A(0, 0) == Approx(a).epsilon(1e-12));
  CHECK(model.B(0, 0) == Approx(b).epsilon(1e-12));
}

TEST_CASE("select_ridge", "[edmdc]") {
  std::mt19937_64 rng(6);
  SECTION("single candidate") {
    const auto data = scalar_data(0.3, 100, 1);
    CHECK(select_ridge(data, {0.25}) == 0.25);
  }
  SECTION("noiseless linear data prefers the smallest candidate") {
    const Matrix z = oracle::gaussian(rng, 3, 40), u = oracle::gaussian(rng, 2, 40);
    const Matrix y = oracle::gaussian(rng, 3, 3, 0.5) * z + oracle::gaussian(rng, 3, 2) * u;
    CHECK(select_ridge(fixtures::regression_data(z, u, y), {1e-8, 1e-2, 1e2}) == 1e-8);
  }
  SECTION("whole segments are held out") {
    const auto sim = simulate_controlled(duffing_system(), {Matrix::Constant(1, 2, -1.0), 0.1, true, 0}, 10, 6, 1,
                                         InitialBox{0.5}, 3);
    const auto data = prepare(sim.data, build_dictionary(DictionaryKind::polynomial, 2, 2));
    const auto split = holdout_split(data, 9);
    CHECK(split.validation.size() == 10);  // 2 of 10 segments, 5 transitions each
    CHECK(split.train.size() + split.validation.size() == static_cast<std::size_t>(data.N()));
  }
  SECTION("deterministic given the seed") {
    const auto data = scalar_data(0.1, 200, 4);
    const auto first = select_ridge_detailed(data, {1e-8, 1e-2, 1e2}, 17);
    const auto second = select_ridge_detailed(data, {1e-8, 1e-2, 1e2}, 17);
    CHECK(first.lambda == second.lambda);
    CHECK(first.validation_errors == second.validation_errors);
  }
  SECTION("ties go to the larger lambda") {
    const auto data = fixtures::regression_data(Matrix::Zero(1, 10), Matrix::Zero(1, 10), Matrix::Zero(1, 10));
    CHECK(select_ridge(data, {1e-3, 1e-1, 1.0}) == 1.0);
  }
  CHECK_THROWS_AS(select_ridge(scalar_data(0.1, 20, 1), {}), ConfigError);
  CHECK(default_ridge_grid().size() == 13);
  CHECK(default_ridge_grid().front() == Approx(1e-10));
  CHECK(default_ridge_grid().back() == Approx(1e2));
}

TEST_CASE("residualized_b equals the least-squares B-block", "[edmdc]") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 100; ++t) {
    const auto in = fixtures::random_instance(rng, 0.1);
    const auto data = fixtures::regression_data(in.Z, in.U, in.Y);
    const Matrix b_ls = fit_ls(data).B;
    CHECK((residualized_b(data) - b_ls).norm() <= 1e-7 * std::max(1.0, b_ls.norm()));
  }
  const auto noiseless = fixtures::random_instance(rng);
  CHECK((residualized_b(fixtures::regression_data(noiseless.Z, noiseless.U, noiseless.Y)) - noiseless.B).norm() <=
        1e-8 * noiseless.B.norm());
}

TEST_CASE("residualized_b refuses non-identifiable data", "[edmdc]") {
  const auto data = scalar_data(0.0, 200, 5);
  try {
    residualized_b(data);
    FAIL("expected NonIdentifiableError");
  } catch (const NonIdentifiableError& e) {
    REQUIRE(e.direction().size() == 1);
    CHECK(std::abs(e.direction()[0]) == Approx(1.0));
  }
}

TEST_CASE("scalar eps = 0.3 control error", "[edmdc]") {
  std::vector<double> errs;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto data = scalar_data(0.3, 800, 1000 + s);
    const Matrix b = residualized_b(data);
    errs.push_back(std::abs(b(0, 0) * data.stats.feature_scales(0) / data.stats.input_scales(0) - 0.6));
  }
  std::sort(errs.begin(), errs.end());
  const double med = 0.5 * (errs[24] + errs[25]);
  CHECK(med >= 0.00153 / 2);
  CHECK(med <= 0.00153 * 2);
}

TEST_CASE("construct_confounder", "[edmdc]") {
  const auto data = scalar_data(0.0, 300, 6);
  const auto base = fit_ls(data);
  const auto pair = construct_confounder(data, base, Vector::Constant(1, 1.0));
  CHECK(std::abs(pair.direction_a(0)) == Approx(1.0));
  // standardized u = -z, so a^T U = h^T Z gives h = -a
  CHECK(pair.direction_h(0) == Approx(-pair.direction_a(0)).epsilon(1e-9));
  CHECK(pair.confounded.B(0, 0) == Approx(base.B(0, 0) + pair.direction_a(0)));
  const Matrix gap = (pair.confounded.A * data.Z + pair.confounded.B * data.U) - (base.A * data.Z + base.B * data.U);
  CHECK(gap.norm() <= 1e-6 * data.Y.norm());

  SECTION("counterfactual gap matches c (a^T u - h^T z)") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 10; ++t) {
      const Vector z = oracle::gaussian(rng, 1, 1).col(0), u = oracle::gaussian(rng, 1, 1).col(0);
      const Vector diff = (pair.confounded.A * z + pair.confounded.B * u) - (base.A * z + base.B * u);
      const double expected = pair.direction_a.dot(u) - pair.direction_h.dot(z);
      CHECK(diff(0) == Approx(expected).margin(1e-8));
    }
  }
  SECTION("c = 0 returns the base model") {
    const auto same = construct_confounder(data, base, Vector::Zero(1));
    CHECK(same.confounded.A == base.A);
    CHECK(same.confounded.B == base.B);
  }
  CHECK_THROWS_AS(construct_confounder(scalar_data(1.0, 300, 6), base, Vector::Ones(1)), ConfigError);
  CHECK_THROWS_AS(construct_confounder(data, base, Vector::Ones(2)), ConfigError);
}

TEST_CASE("predict_one_step", "[edmdc]") {
  Matrix z(1, 3), u(1, 3), y(1, 3);
  z << 1, 2, 3;
  u << 0, 1, 0;
  y << 0.5, 2, 1.5;  // y = 0.5 z + 1 u
  auto data = fixtures::regression_data(z, u, y);
  const auto model = fit_ls(data);
  const auto p = predict_one_step(model, Vector::Constant(1, 2.0), Vector::Constant(1, -1.0));
  CHECK(p.state(0) == Approx(0.0).margin(1e-12));
  CHECK(p.standardized(0) == Approx(0.0).margin(1e-12));

  SECTION("zero standardized state and input predict the feature means") {
    const auto prepared = scalar_data(0.3, 100, 2);
    auto m = fit_ls(prepared);
    const Vector x = Vector::Constant(1, prepared.stats.feature_means(0));
    const Vector uu = Vector::Constant(1, prepared.stats.input_means(0));
    const auto q = predict_one_step(m, x, uu);
    CHECK(q.features(0) == Approx(prepared.stats.feature_means(0)).margin(1e-12));
  }
  CHECK_THROWS_AS(predict_one_step(model, Vector::Constant(1, 0.0), Vector::Zero(2)), ConfigError);
  CHECK_THROWS_AS(predict_one_step(model, Vector::Constant(1, 0.0), Vector::Constant(1, NAN)), NumericInputError);
  CHECK_THROWS_AS(predict_one_step(model, Vector::Constant(1, NAN), Vector::Constant(1, 0.0)), NumericInputError);
}

TEST_CASE("Duffing cubic dictionary fits behavior data closely", "[edmdc]") {
  const DitherSweepConfig cfg;
  const auto cell = fit_dither_cell(cfg, "duffing", 80, 0.0, 1);
  // Raw coordinates: the one-step map lies in the span of the lifted regressors.
  const auto raw = assemble(cell.ident.data, cell.data.dict);
  const auto frame = standardize(raw, select_active(raw.Z), {false, false});
  CHECK(behavior_rmse(fit_ls(frame), cell.test.data) <= 1e-6);
  // Centering Y with the feature means leaves an offset the pipeline has no intercept for.
  const double offset = (raw.Y - raw.Z).topRows(2).rowwise().mean().norm();
  CHECK(behavior_rmse(cell.model, cell.test.data) <= 10 * offset);
}

TEST_CASE("model JSON round trip", "[edmdc]") {
  auto model = fit_ls(scalar_data(0.3, 50, 3));
  model.nonidentifiable_b = true;
  const auto j = to_json(model);
  CHECK(j.at("warning") == "NONIDENTIFIABLE_B");
  const auto back = model_from_json(j);
  CHECK(back.A == model.A);
  CHECK(back.B == model.B);
  CHECK(back.nonidentifiable_b);
  CHECK(back.stats.feature_scales == model.stats.feature_scales);
}
