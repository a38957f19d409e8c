#include "helpers.hpp"
#include "rerand/allocation.hpp"
#include "rerand/dgp.hpp"
#include "rerand/dml.hpp"
#include "rerand/errors.hpp"
#include "rerand/learners.hpp"

#include <doctest.h>

#include <map>
#include <set>

using namespace rerand;
using testutil::FrameBuilder;

TEST_CASE("learner grammar") {
  CHECK(learner_from_string("knn:7").k_neighbors == 7);
  const auto s = learner_from_string("stumps:50:0.2");
  CHECK(s.kind == LearnerKind::stump_ensemble);
  CHECK(s.trees == 50);
  CHECK(s.learning_rate == doctest::Approx(0.2));
  CHECK(learner_from_string("glm:logit").link == Link::logit);
  CHECK(to_string(learner_from_string(to_string(s))) == to_string(s));
  CHECK_THROWS_AS(learner_from_string("forest"), ParseError);
}

TEST_CASE("learners recover simple structure") {
  Rng rng = make_rng(3);
  std::normal_distribution<double> N;
  Eigen::MatrixXd X(300, 2);
  Eigen::VectorXd y(300), b(300);
  for (int i = 0; i < 300; ++i) {
    X(i, 0) = N(rng);
    X(i, 1) = N(rng);
    y[i] = 1 + 2 * X(i, 0) + 0.1 * N(rng);
    b[i] = X(i, 0) > 0 ? 1 : 0;
  }
  const auto glm = fit_learner(learner_from_string("glm"), LearnerTarget::outcome, X, y);
  Eigen::RowVectorXd x0(2);
  x0 << 0.5, -1;
  CHECK(glm->predict(x0) == doctest::Approx(2).epsilon(0.05));
  const auto knn = fit_learner(learner_from_string("knn:10"), LearnerTarget::outcome, X, y);
  CHECK(knn->predict(x0) == doctest::Approx(2).epsilon(0.2));
  const auto st = fit_learner(learner_from_string("stumps:200:0.1"), LearnerTarget::outcome, X, y);
  CHECK(st->predict(x0) == doctest::Approx(2).epsilon(0.2));
  const auto prop = fit_learner(learner_from_string("stumps"), LearnerTarget::missingness, X, b);
  const auto p = prop->predict_all(X);
  CHECK(p.minCoeff() > 0);
  CHECK(p.maxCoeff() < 1);
  const auto mean = fit_learner(learner_from_string("mean"), LearnerTarget::outcome, X, y);
  CHECK(mean->predict(x0) == doctest::Approx(y.mean()));
}

TEST_CASE("plain fold sizes") {
  for (int n : {10, 11}) {
    std::vector<int> arms(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) arms[static_cast<std::size_t>(i)] = i % 2;
    const auto f = FrameBuilder{}.arms(arms).build();
    const auto plan = make_folds(f, 2, FoldMode::plain, 4);
    int c[2] = {0, 0};
    for (int k : plan.assignment) c[k]++;
    CHECK(std::min(c[0], c[1]) == n / 2);
    CHECK(std::max(c[0], c[1]) == n - n / 2);
  }
}

TEST_CASE("stratum-arm folds split every cell evenly") {
  std::vector<int> arms, strata;
  for (int s = 0; s < 2; ++s) {
    for (int i = 0; i < 16; ++i) {
      arms.push_back(i % 2);
      strata.push_back(s);
    }
  }
  const auto f = FrameBuilder{}.arms(arms).strata(strata).build();
  const auto plan = make_folds(f, 4, FoldMode::stratum_arm, 9);
  std::map<std::tuple<int, int, int>, int> counts;
  for (std::size_t i = 0; i < arms.size(); ++i) counts[{arms[i], strata[i], plan.assignment[i]}]++;
  CHECK(counts.size() == 16);
  for (const auto& [key, c] : counts) CHECK(c == 2);
  const auto small = FrameBuilder{}.arms({1, 0, 1, 0}).strata({0, 0, 0, 0}).build();
  CHECK_THROWS_AS(make_folds(small, 4, FoldMode::stratum_arm, 1), ValidationError);
}

TEST_CASE("dml with a constant learner and exact balance returns arm means") {
  std::vector<double> y;
  std::vector<int> arms, strata;
  Rng rng = make_rng(12);
  std::normal_distribution<double> N;
  std::vector<double> x;
  for (int i = 0; i < 40; ++i) {
    arms.push_back(i % 2);
    strata.push_back(0);
    x.push_back(N(rng));
    y.push_back(1 + arms.back() + x.back() + N(rng));
  }
  const auto f = FrameBuilder{}.y(y).arms(arms).strata(strata).x("x", x).build();
  DmlOptions o;
  o.covariates = {"x"};
  o.outcome_learner = learner_from_string("mean");
  o.missingness_learner.reset();
  o.K = 4;
  o.mode = FoldMode::stratum_arm;
  const auto r = estimate_dml(f, o, {}, 5);
  double m1 = 0, m0 = 0;
  for (int i = 0; i < 40; ++i) (arms[static_cast<std::size_t>(i)] ? m1 : m0) += y[static_cast<std::size_t>(i)] / 20;
  CHECK(std::abs(r.mu_hat.first - m1) < 1e-10);
  CHECK(std::abs(r.mu_hat.second - m0) < 1e-10);
  CHECK(std::abs(r.if_values.sum()) < 1e-8);
}

TEST_CASE("dml cross-fitting never predicts on training rows") {
  DgpSpec dgp;
  dgp.missingness = true;
  const auto trial = generate_trial(dgp, 2);
  Design d;
  d.scheme = Scheme::stratified;
  const auto alloc = rerandomize(trial.frame, d, 3);
  const auto f = reveal(trial, alloc.arms);
  std::vector<FitRecord> trace;
  DmlOptions o;
  o.covariates = {"X1", "X2", "stratum"};
  o.outcome_learner = learner_from_string("stumps:50:0.1");
  o.mode = FoldMode::stratum_arm;
  o.trace = &trace;
  const auto r = estimate_dml(f, o, {}, 8);
  CHECK(std::isfinite(r.delta_hat));
  CHECK(!trace.empty());
  bool any_missingness = false;
  for (const auto& fit : trace) {
    const std::set<std::size_t> train(fit.train.begin(), fit.train.end());
    for (auto e : fit.eval) CHECK(train.count(e) == 0);
    any_missingness |= fit.missingness;
  }
  CHECK(any_missingness);
  CHECK(estimate_dml(f, o, {}, 8).delta_hat == r.delta_hat);
}

TEST_CASE("learner degenerate cases") {
  Eigen::MatrixXd X(3, 2);
  X << 0, 0, 1, 0, 0, 1;
  const Eigen::Vector3d y(1.0, 3.0, -2.0);
  // three points determine the plane 1 + 2 x1 - 3 x2
  const auto glm = fit_learner(learner_from_string("glm"), LearnerTarget::outcome, X, y);
  Eigen::RowVector2d x0(0.4, 0.7);
  CHECK(glm->predict(x0) == doctest::Approx(1 + 2 * 0.4 - 3 * 0.7));
  const auto all = fit_learner(learner_from_string("knn:3"), LearnerTarget::outcome, X, y);
  CHECK(all->predict(x0) == doctest::Approx(y.mean()));
  const auto none = fit_learner(learner_from_string("stumps:0"), LearnerTarget::outcome, X, y);
  CHECK(none->predict(x0) == doctest::Approx(y.mean()));
  CHECK_THROWS_AS(fit_learner(learner_from_string("glm"), LearnerTarget::outcome, Eigen::MatrixXd(0, 2),
                              Eigen::VectorXd(0)),
                  ValidationError);
}

TEST_CASE("dml fold count has no systematic effect on linear data") {
  DgpSpec dgp;
  dgp.family = DgpFamily::custom;
  dgp.custom.b0 = 1;
  dgp.custom.ba = 1;
  dgp.custom.b1 = 1.5;
  dgp.custom.b2 = -1;
  dgp.n = 200;
  DmlOptions o;
  o.covariates = {"X1", "X2"};
  o.outcome_learner = learner_from_string("glm");
  o.missingness_learner.reset();
  double sum = 0, sq = 0;
  const int reps = 60;
  for (int r = 0; r < reps; ++r) {
    const auto t = generate_trial(dgp, 40 + static_cast<std::uint64_t>(r));
    const auto f = reveal(t, simple_assign(dgp.n, 0.5, 90 + static_cast<std::uint64_t>(r)));
    o.K = 2;
    const double a = estimate_dml(f, o, {}, 1).delta_hat;
    o.K = 5;
    const double b = estimate_dml(f, o, {}, 1).delta_hat;
    sum += a - b;
    sq += (a - b) * (a - b);
  }
  const double mean = sum / reps, sd = std::sqrt((sq - reps * mean * mean) / (reps - 1));
  CHECK(std::abs(mean) <= 3 * sd / std::sqrt(static_cast<double>(reps)));
}
