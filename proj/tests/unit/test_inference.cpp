#include "helpers.hpp"
#include "oracle_fixtures.hpp"
#include "rerand/errors.hpp"
#include "rerand/estimators.hpp"
#include "rerand/inference.hpp"

#include <doctest.h>

#include <algorithm>

using namespace rerand;
using testutil::columns;
using testutil::to_eigen;

namespace {

double sample_variance(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

}  // namespace

TEST_CASE("simple variance and R2 hand fixture") {
  const Eigen::VectorXd IF = to_eigen({-2, 2, 1, -1});
  CHECK(variance_simple(IF) == doctest::Approx(2.5));
  CHECK(variance_simple(Eigen::VectorXd::Zero(4)) == 0);
  const auto r2 = rsquared_simple(IF, {1, 1, 0, 0}, columns({{1, 2, 3, 4}}), 0.5);
  CHECK(r2.C[0] == doctest::Approx(1.5));
  CHECK(r2.VI(0, 0) == doctest::Approx(5));
  CHECK(r2.value == doctest::Approx(0.18));
  // weighted IF (2,-2,-2,2) is orthogonal to the centered covariate
  const auto zero = rsquared_simple(to_eigen({1, 1, 1, 1}), {1, 0, 0, 1}, columns({{1, 2, 3, 4}}), 0.5);
  CHECK(zero.C[0] == doctest::Approx(0));
  CHECK(zero.value == doctest::Approx(0));
  CHECK_THROWS_AS(rsquared_simple(IF, {1, 1, 0, 0}, columns({{2, 2, 2, 2}}), 0.5), SingularityError);
}

TEST_CASE("R2 of an interacted ancova fit matches the oracle") {
  const auto f = testutil::FrameBuilder{}
                     .y(fixtures::kAncY)
                     .arms(fixtures::kAncA)
                     .x("x1", fixtures::kAncX1)
                     .x("x2", fixtures::kAncX2)
                     .build();
  const auto r = estimate_ancova(f, Adjustment{{"x1", "x2"}, true, {}}, {});
  const auto r2 = rsquared_simple(r.if_values, f.arms(), f.covariates(), 0.5);
  CHECK(r2.value == doctest::Approx(fixtures::kAncR2).epsilon(1e-5));
}

TEST_CASE("stratified variance and R2 match the oracle") {
  const Eigen::VectorXd IF = to_eigen(fixtures::kStrIF);
  Eigen::MatrixXd X(40, 2);
  X.col(0) = to_eigen(fixtures::kAncX1);
  X.col(1) = to_eigen(fixtures::kAncX2);
  const auto v = variance_stratified(IF, fixtures::kStrA, fixtures::kStrS, 0.5);
  CHECK(v.value == doctest::Approx(fixtures::kStrV).epsilon(1e-12));
  const auto r2 = rsquared_stratified(IF, fixtures::kStrA, fixtures::kStrS, X, 0.5);
  CHECK(r2.value == doctest::Approx(fixtures::kStrR2).epsilon(1e-10));
}

TEST_CASE("stratified variance with a single stratum") {
  const Eigen::VectorXd IF = to_eigen({-2, 2, 1, -1});
  const auto v = variance_stratified(IF, {1, 1, 0, 0}, {0, 0, 0, 0}, 0.5);
  CHECK(v.value == doctest::Approx(2.5));
  CHECK(variance_stratified(Eigen::VectorXd::Zero(4), {1, 1, 0, 0}, {0, 0, 0, 0}, 0.5).value == 0);
}

TEST_CASE("stratified R2 with one stratum tracks the simple R2") {
  const Eigen::VectorXd IF = to_eigen({-1.5, 0.7, 2.1, -0.4, 0.3, -1.2});
  const std::vector<int> arms{1, 0, 1, 0, 1, 0};
  const Eigen::MatrixXd X = columns({{0.2, 1.4, -0.3, 2.2, 0.9, -1.0}});
  const auto s = rsquared_simple(IF, arms, X, 0.5);
  const auto t = rsquared_stratified(IF, arms, std::vector<int>(6, 0), X, 0.5);
  CHECK(t.C[0] == doctest::Approx(s.C[0]));
  CHECK(t.VI(0, 0) == doctest::Approx(s.VI(0, 0)));
  // same projection; only the denominator moves from V-hat to the stratified V
  const double vs = variance_simple(IF), vt = variance_stratified(IF, arms, std::vector<int>(6, 0), 0.5).value;
  CHECK(t.value * vt == doctest::Approx(s.value * vs));
  CHECK_THROWS_AS(rsquared_stratified(IF, arms, {0, 0, 0, 1, 1, 1}, columns({{1, 1, 1, 2, 2, 2}}), 0.5),
                  SingularityError);
}

TEST_CASE("truncated variance factor") {
  CHECK(std::abs(v_qt(2, 1.0) - 0.22926) < 1e-5);
  CHECK(v_qt(2, 1.0) == doctest::Approx(fixtures::kV21).epsilon(1e-12));
  CHECK(v_qt(3, kInf) == 1);
}

TEST_CASE("limit sampler variance") {
  LimitSpec s;
  s.V = 1;
  s.q = 2;
  s.t = 1;
  s.R2 = 0.5;
  const auto d = sample_limit(s, 200000, 3);
  CHECK(sample_variance(d) == doctest::Approx(1 - 0.5 * (1 - v_qt(2, 1))).epsilon(0.02));
  double m = 0;
  for (double x : d) m += x;
  m /= static_cast<double>(d.size());
  CHECK(std::abs(m) <= 4 * std::sqrt(sample_variance(d) / static_cast<double>(d.size())));
  s.R2 = 0;
  s.V = 2;
  CHECK(sample_variance(sample_limit(s, 200000, 4)) == doctest::Approx(2).epsilon(0.02));
  s.R2 = 0.7;
  s.t = kInf;
  CHECK(sample_variance(sample_limit(s, 200000, 5)) == doctest::Approx(2).epsilon(0.02));
  s.t = 1e-9;
  CHECK_THROWS_AS(sample_limit(s, 10, 1), NumericError);
}

TEST_CASE("general-distance sampler reduces to Mahalanobis when H = VI") {
  LimitSpec s;
  s.V = 1;
  s.q = 2;
  s.t = 1;
  s.R2 = 0.6;
  s.distance.kind = DistanceKind::general;
  Eigen::MatrixXd VI(2, 2);
  VI << 2, 0.5, 0.5, 1;
  // choose C so that C' VI^-1 C = R2 * V
  Eigen::VectorXd C(2);
  C << 1, 0.4;
  C *= std::sqrt(0.6 / C.dot(VI.ldlt().solve(C)));
  s.projection = Projection{C, VI, VI};
  const auto d = sample_limit(s, 200000, 6);
  CHECK(sample_variance(d) == doctest::Approx(1 - 0.6 * (1 - v_qt(2, 1))).epsilon(0.02));
}

TEST_CASE("confidence intervals") {
  LimitSpec s;
  s.V = 1;
  s.q = 2;
  s.t = 1;
  const auto ci = confidence_interval(0, s, 100, 0.05, 1000000, 7);
  CHECK(std::abs(ci.lower + 0.196) < 0.003);
  CHECK(std::abs(ci.upper - 0.196) < 0.003);
  s.R2 = 1;
  s.t = kInf;
  const auto un = confidence_interval(0, s, 100, 0.05, 1000000, 7);
  CHECK(std::abs(un.upper - 0.196) < 0.003);
  CHECK_THROWS_AS(confidence_interval(0, s, 100, 0.05, 10, 7), ValidationError);

  const auto nrm = normal_interval(0, 4, 100, 0.05);
  CHECK(nrm.lower == doctest::Approx(-0.392).epsilon(1e-3));
  CHECK(nrm.upper == doctest::Approx(0.392).epsilon(1e-3));
  const auto pt = normal_interval(1.5, 0, 100, 0.05);
  CHECK(pt.lower == 1.5);
  CHECK(pt.upper == 1.5);
  const auto a1 = normal_interval(1.5, 4, 100, 1.0);
  CHECK(a1.lower == doctest::Approx(1.5));
  CHECK(a1.upper == doctest::Approx(1.5));
}

TEST_CASE("type-7 quantiles") {
  const std::vector<double> v{1, 2, 3, 4};
  CHECK(quantile_sorted(v, 0) == 1);
  CHECK(quantile_sorted(v, 1) == 4);
  CHECK(quantile_sorted(v, 0.5) == doctest::Approx(2.5));
  CHECK(quantile_sorted(v, 0.25) == doctest::Approx(1.75));
}
