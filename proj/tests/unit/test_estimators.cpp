#include "helpers.hpp"
#include "oracle_fixtures.hpp"
#include "rerand/errors.hpp"
#include "rerand/estimators.hpp"
#include "rerand/glm.hpp"
#include "rerand/solver.hpp"

#include <doctest.h>

using namespace rerand;
using testutil::FrameBuilder;

namespace {

double diag_value(const EstimateResult& r, const std::string& key) {
  for (const auto& [k, v] : r.diagnostics) {
    if (k == key) return v;
  }
  FAIL("missing diagnostic " << key);
  return 0;
}

TrialFrame four_rows() { return FrameBuilder{}.y({3, 5, 1, 2}).arms({1, 1, 0, 0}).x("X", {0, 1, 0, 1}).build(); }

}  // namespace

TEST_CASE("solver reproduces least squares normal equations") {
  Eigen::MatrixXd X(4, 2);
  X << 1, 0, 1, 1, 1, 2, 1, 3;
  Eigen::VectorXd y(4);
  y << 1.0, 2.5, 2.9, 4.2;
  PsiSpec spec;
  spec.dim = 2;
  spec.units = 4;
  spec.theta0 = Eigen::VectorXd::Zero(2);
  spec.evaluate = [&](std::size_t i, const Eigen::VectorXd& th, Eigen::Ref<Eigen::VectorXd> out) {
    const auto r = static_cast<Eigen::Index>(i);
    out = X.row(r).transpose() * (y[r] - X.row(r).dot(th));
  };
  const auto sol = solve_estimating_equations(spec);
  const Eigen::VectorXd oracle = (X.transpose() * X).ldlt().solve(X.transpose() * y);
  CHECK((sol.theta - oracle).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(mean_psi(spec, sol.theta).cwiseAbs().maxCoeff() <= 1e-10);
  CHECK(sol.parts.if_matrix.colwise().sum().cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("solver fails on separated logistic score") {
  const double x[2] = {-1, 1}, y[2] = {0, 1};
  PsiSpec spec;
  spec.dim = 1;
  spec.units = 2;
  spec.theta0 = Eigen::VectorXd::Zero(1);
  spec.evaluate = [&](std::size_t i, const Eigen::VectorXd& th, Eigen::Ref<Eigen::VectorXd> out) {
    out[0] = x[i] * (y[i] - expit(x[i] * th[0]));
  };
  CHECK_THROWS_AS(solve_estimating_equations(spec), ConvergenceError);
}

TEST_CASE("solver reports a singular Jacobian") {
  PsiSpec spec;
  spec.dim = 2;
  spec.units = 3;
  spec.theta0 = Eigen::VectorXd::Zero(2);
  spec.evaluate = [&](std::size_t i, const Eigen::VectorXd& th, Eigen::Ref<Eigen::VectorXd> out) {
    out[0] = static_cast<double>(i) - th[0] - th[1];
    out[1] = 2.0 * (static_cast<double>(i) - th[0] - th[1]);
  };
  CHECK_THROWS_AS(solve_estimating_equations(spec), SingularityError);
}

TEST_CASE("unadjusted hand fixture") {
  const auto f = FrameBuilder{}.y({3, 5, 1, 2}).arms({1, 1, 0, 0}).build();
  const auto r = estimate_unadjusted(f, {});
  CHECK(r.delta_hat == doctest::Approx(2.5).epsilon(1e-12));
  const double expect[4] = {-2, 2, 1, -1};
  for (int i = 0; i < 4; ++i) CHECK(r.if_values[i] == doctest::Approx(expect[i]).epsilon(1e-10));
  CHECK(r.if_values.squaredNorm() / 4 == doctest::Approx(2.5).epsilon(1e-10));
  const auto q = estimate_unadjusted(f, EstimandSpec{Contrast::ratio});
  CHECK(q.delta_hat == doctest::Approx(4 / 1.5).epsilon(1e-12));
  const auto same = FrameBuilder{}.y({2, 2, 2, 2}).arms({1, 0, 1, 0}).build();
  const auto z = estimate_unadjusted(same, {});
  CHECK(z.delta_hat == doctest::Approx(0));
  CHECK(z.if_values.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ancova four-row fixture") {
  const auto r = estimate_ancova(four_rows(), Adjustment{{"X"}}, {});
  CHECK(std::abs(r.delta_hat - 2.5) < 1e-8);
  // beta on uncentered X: intercept 0.75, arm 2.5, X 1.5; centering moves only the intercept
  CHECK(r.theta_hat[4] == doctest::Approx(2.5));
  CHECK(r.theta_hat[5] == doctest::Approx(1.5));
  CHECK(r.theta_hat[3] == doctest::Approx(0.75 + 1.5 * 0.5));
}

TEST_CASE("ancova reductions and oracle") {
  const auto f = FrameBuilder{}.y({3, 5, 1, 2}).arms({1, 1, 0, 0}).x("X", {0, 1, 0, 1}).build();
  const auto a = estimate_ancova(f, Adjustment{}, {});
  const auto u = estimate_unadjusted(f, {});
  CHECK(a.delta_hat == doctest::Approx(u.delta_hat).epsilon(1e-12));
  CHECK((a.if_values - u.if_values).cwiseAbs().maxCoeff() < 1e-9);

  const auto g = FrameBuilder{}
                     .y(fixtures::kAncY)
                     .arms(fixtures::kAncA)
                     .x("x1", fixtures::kAncX1)
                     .x("x2", fixtures::kAncX2)
                     .build();
  const auto r = estimate_ancova(g, Adjustment{{"x1", "x2"}, true, {}}, {});
  CHECK(std::abs(r.delta_hat - fixtures::kAncDelta) < 1e-8);
  CHECK(r.if_values.squaredNorm() / 40 == doctest::Approx(fixtures::kAncV).epsilon(1e-6));
  CHECK(std::abs(r.if_values.sum()) < 1e-8);
  // with centered interactions and N1 = N0 the g-computation equals the arm coefficient
  CHECK(r.delta_hat == doctest::Approx(r.theta_hat[4]).epsilon(1e-10));
}

TEST_CASE("logistic g-computation") {
  const auto f = FrameBuilder{}.y({1, 0, 1, 1, 0, 1, 0, 0}).arms({1, 1, 1, 1, 0, 0, 0, 0}).build();
  const auto r = estimate_gcomp_logistic(f, Adjustment{}, EstimandSpec{Contrast::ratio});
  CHECK(r.delta_hat == doctest::Approx(0.75 / 0.25).epsilon(1e-9));

  std::vector<double> y(fixtures::kLogitY.begin(), fixtures::kLogitY.end());
  const auto g = FrameBuilder{}.y(y).arms(fixtures::kLogitA).x("x", fixtures::kLogitX).build();
  CHECK(std::abs(estimate_gcomp_logistic(g, Adjustment{{"x"}}, EstimandSpec{Contrast::ratio}).delta_hat -
                 fixtures::kLogitRatio) < 1e-6);
  CHECK(std::abs(estimate_gcomp_logistic(g, Adjustment{{"x"}}, {}).delta_hat - fixtures::kLogitDiff) < 1e-6);

  const auto ones = FrameBuilder{}.y({1, 1, 1, 1}).arms({1, 0, 1, 0}).build();
  CHECK_THROWS_AS(estimate_gcomp_logistic(ones, Adjustment{}, {}), ConvergenceError);
  const auto bad = FrameBuilder{}.y({1, 0.5, 0, 1}).arms({1, 0, 1, 0}).build();
  CHECK_THROWS_AS(estimate_gcomp_logistic(bad, Adjustment{}, {}), ValidationError);
}

TEST_CASE("drwls with complete data equals ancova") {
  const auto g = FrameBuilder{}
                     .y(fixtures::kAncY)
                     .arms(fixtures::kAncA)
                     .x("x1", fixtures::kAncX1)
                     .x("x2", fixtures::kAncX2)
                     .build();
  const Adjustment adj{{"x1", "x2"}};
  const auto a = estimate_ancova(g, adj, {});
  const auto d = estimate_drwls(g, DrwlsOptions{adj, {"x1"}, Link::identity}, {});
  CHECK(std::abs(a.delta_hat - d.delta_hat) < 1e-8);
  CHECK(std::abs(d.if_values.sum()) < 1e-8);
  CHECK(diag_value(d, "missingness_model") == 0);
}

TEST_CASE("drwls with missing outcomes matches weighted regression oracle") {
  const auto f = FrameBuilder{}.y(fixtures::kDrY).observed(fixtures::kDrR).arms(fixtures::kDrA).x("x", fixtures::kDrX).build();
  const auto r = estimate_drwls(f, DrwlsOptions{Adjustment{{"x"}}, {"x"}, Link::identity}, {});
  CHECK(std::abs(r.delta_hat - fixtures::kDrDelta) < 1e-8);
  CHECK(std::abs(r.if_values.mean()) < 1e-8);
  CHECK(diag_value(r, "clipped_propensities") == 0);
  CHECK(diag_value(r, "missingness_model") == 1);
}

TEST_CASE("mixed model ancova") {
  SUBCASE("singleton clusters reduce to ancova") {
    std::vector<int> cl(40);
    for (int i = 0; i < 40; ++i) cl[static_cast<std::size_t>(i)] = i;
    const auto g = FrameBuilder{}
                       .y(fixtures::kAncY)
                       .arms(fixtures::kAncA)
                       .x("x1", fixtures::kAncX1)
                       .clusters(cl)
                       .build();
    const auto m = estimate_mixed_ancova(g, Adjustment{{"x1"}}, {});
    const auto a = estimate_ancova(g, Adjustment{{"x1"}}, {});
    CHECK(diag_value(m, "tau2") == 0);
    CHECK(std::abs(m.delta_hat - a.delta_hat) < 1e-6);
  }
  SUBCASE("profile likelihood optimum matches a grid oracle") {
    const auto g = FrameBuilder{}
                       .y(fixtures::kLmmY)
                       .arms(fixtures::kLmmA)
                       .x("x", fixtures::kLmmX)
                       .clusters(fixtures::kLmmCluster)
                       .build();
    const auto m = estimate_mixed_ancova(g, Adjustment{{"x"}}, {});
    CHECK(std::abs(diag_value(m, "sigma2") - fixtures::kLmmSigma2) < 1e-4);
    CHECK(std::abs(diag_value(m, "tau2") - fixtures::kLmmTau2) < 1e-4);
    CHECK(std::abs(m.delta_hat - fixtures::kLmmDelta) < 1e-4);
    CHECK(m.units() == 4);
    CHECK(std::abs(m.if_values.sum()) < 1e-8);
  }
  SUBCASE("contract errors") {
    const auto g = FrameBuilder{}.y({1, 2, 3, 4}).arms({1, 0, 1, 0}).clusters({0, 0, 1, 1}).build();
    CHECK_THROWS_AS(estimate_mixed_ancova(g, Adjustment{}, {}), ValidationError);
    const auto h = FrameBuilder{}.y({1, 2, 3, 4}).arms({1, 0, 1, 0}).build();
    CHECK_THROWS_AS(estimate_mixed_ancova(h, Adjustment{}, {}), ValidationError);
  }
}
