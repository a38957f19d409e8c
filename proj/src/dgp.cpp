#include "rerand/dgp.hpp"

#include "rerand/errors.hpp"
#include "rerand/glm.hpp"
#include "rerand/random.hpp"

#include <cmath>

namespace rerand {

std::string to_string(DgpFamily f) {
  switch (f) {
    case DgpFamily::continuous_sec7: return "continuous_sec7";
    case DgpFamily::binary_sec7: return "binary_sec7";
    case DgpFamily::custom: return "custom";
  }
  return "custom";
}

DgpFamily dgp_family_from_string(const std::string& s) {
  if (s == "continuous_sec7") return DgpFamily::continuous_sec7;
  if (s == "binary_sec7") return DgpFamily::binary_sec7;
  if (s == "custom") return DgpFamily::custom;
  throw ParseError("unknown data-generating process '" + s + "'");
}

namespace {

struct Covariates {
  double x1, x2;
  int s;
};

Covariates draw_covariates(Rng& rng, std::normal_distribution<double>& N01) {
  Covariates c;
  c.x1 = 1.0 + N01(rng);
  c.s = bernoulli(rng, c.x1 < 1.0 ? 0.6 : 0.4);
  c.x2 = N01(rng);
  return c;
}

// Linear predictor (binary families) or conditional mean (continuous).
double outcome_index(const DgpSpec& d, const Covariates& c, int a) {
  switch (d.family) {
    case DgpFamily::continuous_sec7:
      return 4.0 * a * c.s * c.x2 * c.x2 + 2.0 * std::exp(c.x1) + std::abs(c.x2);
    case DgpFamily::binary_sec7:
      return -4.0 + 4.0 * a * c.s * c.x2 * c.x2 + std::exp(c.x1) - std::abs(c.x2);
    case DgpFamily::custom: {
      const auto& p = d.custom;
      return p.b0 + p.ba * a + p.b1 * c.x1 + p.b2 * c.x2 + p.bs * c.s + p.bas * a * c.s;
    }
  }
  return 0.0;
}

bool binary_outcome(const DgpSpec& d) {
  return d.family == DgpFamily::binary_sec7 || (d.family == DgpFamily::custom && d.custom.binary);
}

double conditional_mean(const DgpSpec& d, const Covariates& c, int a) {
  const double e = outcome_index(d, c, a);
  return binary_outcome(d) ? expit(e) : e;
}

double missing_index(const DgpSpec& d, const Covariates& c, int a) {
  if (d.family == DgpFamily::custom) {
    const auto& p = d.custom;
    return p.m0 + p.ma * a + p.m1 * c.x1 + p.m2 * c.x2 + p.m22 * c.x2 * c.x2 + p.ms * c.s;
  }
  return 0.6 + 0.6 * a + c.x2 + c.s;
}

}  // namespace

CompleteTrial generate_trial(const DgpSpec& dgp, std::uint64_t seed) {
  if (dgp.n < 2) throw ValidationError("trial size must be at least 2");
  if (dgp.family == DgpFamily::custom && !(dgp.custom.noise_sd >= 0)) {
    throw ValidationError("noise sd must be nonnegative");
  }
  auto rng = make_rng(seed);
  std::normal_distribution<double> N01;
  const auto n = static_cast<Eigen::Index>(dgp.n);
  FrameColumns cols;
  cols.covariate_names = {"X1", "X2"};
  cols.covariates.resize(n, 2);
  cols.strata.resize(dgp.n);
  CompleteTrial t;
  t.y1.resize(n);
  t.y0.resize(n);
  t.r1.assign(dgp.n, 1);
  t.r0.assign(dgp.n, 1);
  const bool binary = binary_outcome(dgp);
  const bool shared = dgp.family == DgpFamily::custom && dgp.custom.shared_noise;
  const double sd = dgp.family == DgpFamily::custom ? dgp.custom.noise_sd : 1.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto c = draw_covariates(rng, N01);
    cols.covariates(i, 0) = c.x1;
    cols.covariates(i, 1) = c.x2;
    cols.strata[static_cast<std::size_t>(i)] = c.s ? "1" : "0";
    const double e1 = N01(rng);
    const double e0 = shared ? e1 : N01(rng);
    const double u1 = uniform01(rng), u0 = uniform01(rng);
    if (binary) {
      t.y1[i] = u1 < expit(outcome_index(dgp, c, 1)) ? 1.0 : 0.0;
      t.y0[i] = u0 < expit(outcome_index(dgp, c, 0)) ? 1.0 : 0.0;
    } else {
      t.y1[i] = outcome_index(dgp, c, 1) + sd * e1;
      t.y0[i] = outcome_index(dgp, c, 0) + sd * e0;
    }
    const double v1 = uniform01(rng), v0 = uniform01(rng);
    if (dgp.missingness) {
      t.r1[static_cast<std::size_t>(i)] = v1 < expit(missing_index(dgp, c, 1)) ? 1 : 0;
      t.r0[static_cast<std::size_t>(i)] = v0 < expit(missing_index(dgp, c, 0)) ? 1 : 0;
    }
  }
  t.frame = TrialFrame::from_columns(std::move(cols));
  return t;
}

TrialFrame reveal(const CompleteTrial& trial, const std::vector<int>& arms) {
  const auto n = trial.frame.n();
  if (arms.size() != n) throw ValidationError("assignment length does not match the trial");
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  std::vector<int> r(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    r[i] = arms[i] ? trial.r1[i] : trial.r0[i];
    y[ii] = r[i] ? (arms[i] ? trial.y1[ii] : trial.y0[ii]) : 0.0;
  }
  return trial.frame.with_arms(arms).with_outcomes(std::move(y), std::move(r));
}

TruthEstimate true_delta(const DgpSpec& dgp, const EstimandSpec& estimand, std::uint64_t seed, std::size_t draws) {
  if (draws < 2) throw ValidationError("truth needs at least 2 draws");
  auto rng = make_rng(seed);
  std::normal_distribution<double> N01;
  // Welford accumulators for m1, m0 and their cross moment.
  double mean1 = 0, mean0 = 0, c11 = 0, c00 = 0, c10 = 0;
  for (std::size_t k = 1; k <= draws; ++k) {
    const auto c = draw_covariates(rng, N01);
    const double m1 = conditional_mean(dgp, c, 1), m0 = conditional_mean(dgp, c, 0);
    const double d1 = m1 - mean1, d0 = m0 - mean0;
    mean1 += d1 / static_cast<double>(k);
    mean0 += d0 / static_cast<double>(k);
    c11 += d1 * (m1 - mean1);
    c00 += d0 * (m0 - mean0);
    c10 += d1 * (m0 - mean0);
  }
  const double N = static_cast<double>(draws);
  const double v11 = c11 / (N - 1), v00 = c00 / (N - 1), v10 = c10 / (N - 1);
  const auto [g1, g0] = estimand.gradient(mean1, mean0);
  TruthEstimate out;
  out.value = estimand.apply(mean1, mean0);
  out.mcse = std::sqrt(std::max(g1 * g1 * v11 + g0 * g0 * v00 + 2 * g1 * g0 * v10, 0.0) / N);
  out.draws = draws;
  return out;
}

}  // namespace rerand
