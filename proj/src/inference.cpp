#include "rerand/inference.hpp"

#include "rerand/allocation.hpp"
#include "rerand/errors.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>

namespace rerand {

namespace {

int count_levels(const std::vector<int>& strata) {
  int m = 0;
  for (int s : strata) m = std::max(m, s + 1);
  return m;
}

Eigen::VectorXd arm_weights(const std::vector<int>& arms, double pi) {
  if (!(pi > 0 && pi < 1)) throw ValidationError("pi must lie in (0,1)");
  Eigen::VectorXd w(static_cast<Eigen::Index>(arms.size()));
  for (std::size_t i = 0; i < arms.size(); ++i) w[static_cast<Eigen::Index>(i)] = (arms[i] - pi) / (pi * (1 - pi));
  return w;
}

void check_lengths(const Eigen::VectorXd& f, const std::vector<int>& arms) {
  if (static_cast<std::size_t>(f.size()) != arms.size()) throw ValidationError("influence values and arms differ in length");
  if (f.size() < 2) throw ValidationError("need at least two units");
}

RSquared finish_r2(Eigen::VectorXd C, Eigen::MatrixXd VI, double V) {
  if (!(V > 0)) throw NumericError("R-squared undefined: variance estimate is zero");
  RSquared r;
  r.raw = balance_distance(C, VI) / V;
  r.value = std::clamp(r.raw, 0.0, 1.0);
  r.clamped = r.value != r.raw;
  r.C = std::move(C);
  r.VI = std::move(VI);
  return r;
}

// d-hat_s for every stratum.
std::vector<double> stratum_d(const Eigen::VectorXd& f, const Eigen::VectorXd& w, const std::vector<int>& strata,
                              std::vector<double>& p) {
  const int m = count_levels(strata);
  const double n = static_cast<double>(strata.size());
  p.assign(m, 0.0);
  std::vector<double> d(m, 0.0);
  for (std::size_t i = 0; i < strata.size(); ++i) {
    p[strata[i]] += 1.0 / n;
    d[strata[i]] += w[static_cast<Eigen::Index>(i)] * f[static_cast<Eigen::Index>(i)] / n;
  }
  for (int s = 0; s < m; ++s) {
    if (p[s] == 0) throw ValidationError("empty stratum " + std::to_string(s));
    d[s] /= p[s];
  }
  return d;
}

}  // namespace

double variance_simple(const Eigen::VectorXd& if_values) {
  if (if_values.size() == 0) throw ValidationError("no influence values");
  return if_values.squaredNorm() / static_cast<double>(if_values.size());
}

RSquared rsquared_simple(const Eigen::VectorXd& if_values, const std::vector<int>& arms, const Eigen::MatrixXd& xr,
                         double pi) {
  check_lengths(if_values, arms);
  const auto n = static_cast<double>(arms.size());
  const Eigen::VectorXd w = arm_weights(arms, pi);
  const Eigen::MatrixXd xc = xr.rowwise() - xr.colwise().mean();
  Eigen::VectorXd C = xc.transpose() * w.cwiseProduct(if_values) / n;
  Eigen::MatrixXd VI = n * imbalance_simple(xr, arms).V;
  return finish_r2(std::move(C), std::move(VI), variance_simple(if_values));
}

StratifiedVariance variance_stratified(const Eigen::VectorXd& if_values, const std::vector<int>& arms,
                                       const std::vector<int>& strata, double pi) {
  check_lengths(if_values, arms);
  std::vector<double> p;
  const auto d = stratum_d(if_values, arm_weights(arms, pi), strata, p);
  double adj = 0;
  for (std::size_t s = 0; s < d.size(); ++s) adj += p[s] * d[s] * d[s];
  StratifiedVariance out;
  out.raw = variance_simple(if_values) - pi * (1 - pi) * adj;
  out.value = std::max(out.raw, 0.0);
  out.floored = out.raw < 0;
  return out;
}

RSquared rsquared_stratified(const Eigen::VectorXd& if_values, const std::vector<int>& arms,
                             const std::vector<int>& strata, const Eigen::MatrixXd& xr, double pi) {
  check_lengths(if_values, arms);
  const auto n = static_cast<double>(arms.size());
  const Eigen::VectorXd w = arm_weights(arms, pi);
  std::vector<double> p;
  const auto d = stratum_d(if_values, w, strata, p);
  const int m = static_cast<int>(d.size());
  Eigen::MatrixXd xbar = Eigen::MatrixXd::Zero(xr.cols(), m);
  for (std::size_t i = 0; i < strata.size(); ++i) xbar.col(strata[i]) += xr.row(static_cast<Eigen::Index>(i)).transpose();
  Eigen::VectorXd C = xr.transpose() * w.cwiseProduct(if_values) / n;
  for (int s = 0; s < m; ++s) {
    xbar.col(s) /= p[s] * n;
    C -= p[s] * d[s] * xbar.col(s);
  }
  Eigen::MatrixXd VI = n * imbalance_stratified(xr, arms, strata).V;
  return finish_r2(std::move(C), std::move(VI), variance_stratified(if_values, arms, strata, pi).value);
}

void validate_limit(const LimitSpec& s) {
  if (!(s.V >= 0) || !std::isfinite(s.V)) throw ValidationError("limit variance must be finite and nonnegative");
  if (!(s.R2 >= 0 && s.R2 <= 1)) throw ValidationError("R2 must lie in [0,1]");
  if (s.q < 1) throw ValidationError("q must be at least 1");
  if (!(s.t > 0)) throw ValidationError("threshold t must be positive");
  if (s.distance.kind == DistanceKind::general) {
    if (!s.projection) throw ValidationError("general distance needs the projection (C, VI, H)");
    const auto q = s.projection->C.size();
    if (q != s.q || s.projection->VI.rows() != q || s.projection->H.rows() != q) {
      throw ValidationError("projection dimensions disagree with q");
    }
  } else if (s.projection) {
    throw ValidationError("projection given for a Mahalanobis limit");
  }
}

double v_qt(int q, double t) {
  if (std::isinf(t)) return 1.0;
  return chi_square_cdf(q + 2, t) / chi_square_cdf(q, t);
}

std::vector<double> sample_limit(const LimitSpec& spec, std::size_t m, Rng& rng) {
  validate_limit(spec);
  std::normal_distribution<double> N01;
  std::vector<double> out(m);
  const double sv = std::sqrt(spec.V);
  const bool truncated = std::isfinite(spec.t);
  const int q = spec.q;

  if (spec.distance.kind == DistanceKind::mahalanobis) {
    const double a = sv * std::sqrt(1 - spec.R2), b = sv * std::sqrt(spec.R2);
    if (truncated && b > 0 && chi_square_cdf(q, spec.t) < 1e-4) {
      throw NumericError("acceptance probability below 1e-4 for the truncated component; use a larger t");
    }
    Eigen::VectorXd d(q);
    for (auto& x : out) {
      const double z = N01(rng);
      double r = 0;
      if (b > 0) {
        do {
          for (int j = 0; j < q; ++j) d[j] = N01(rng);
        } while (truncated && !(d.squaredNorm() < spec.t));
        r = d[0];
      }
      x = a * z + b * r;
    }
    return out;
  }

  // General weight matrix: C' VI^{-1/2} D with D accepted on the H metric.
  const auto& P = *spec.projection;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(P.VI);
  if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0)) {
    throw SingularityError("projection covariance VI is not positive definite");
  }
  const Eigen::MatrixXd VIh = es.operatorSqrt();
  const Eigen::RowVectorXd load = P.C.transpose() * es.operatorInverseSqrt();
  Eigen::LLT<Eigen::MatrixXd> hl(P.H);
  if (hl.info() != Eigen::Success) throw SingularityError("weight matrix H is not positive definite");
  const Eigen::MatrixXd Hinv = hl.solve(Eigen::MatrixXd::Identity(q, q));
  const Eigen::MatrixXd G = VIh * Hinv * VIh;
  const double a = sv * std::sqrt(1 - spec.R2);
  Eigen::VectorXd d(q);
  auto accept = [&] { return !truncated || d.dot(G * d) < spec.t; };
  if (truncated) {
    std::size_t hits = 0;
    const std::size_t pilot = 10000;
    for (std::size_t k = 0; k < pilot; ++k) {
      for (int j = 0; j < q; ++j) d[j] = N01(rng);
      hits += accept();
    }
    if (static_cast<double>(hits) / pilot < 1e-4) {
      throw NumericError("estimated acceptance probability below 1e-4 after a 10^4-draw pilot; use a larger t");
    }
  }
  for (auto& x : out) {
    const double z = N01(rng);
    do {
      for (int j = 0; j < q; ++j) d[j] = N01(rng);
    } while (!accept());
    x = a * z + load.dot(d);
  }
  return out;
}

std::vector<double> sample_limit(const LimitSpec& spec, std::size_t m, std::uint64_t seed) {
  auto rng = make_rng(seed);
  return sample_limit(spec, m, rng);
}

double quantile_sorted(const std::vector<double>& x, double p) {
  if (x.empty()) throw ValidationError("quantile of an empty sample");
  const double h = (static_cast<double>(x.size()) - 1) * std::clamp(p, 0.0, 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= x.size()) return x.back();
  return x[lo] + (h - static_cast<double>(lo)) * (x[lo + 1] - x[lo]);
}

CIResult confidence_interval(double delta_hat, const LimitSpec& spec, std::size_t n, double alpha, std::size_t m,
                             std::uint64_t seed) {
  if (m < 1000) throw ValidationError("confidence interval needs at least 1000 draws");
  if (n < 2) throw ValidationError("sample size must be at least 2");
  if (!(alpha > 0 && alpha < 1)) throw ValidationError("alpha must lie in (0,1)");
  auto draws = sample_limit(spec, m, seed);
  std::sort(draws.begin(), draws.end());
  const double rn = std::sqrt(static_cast<double>(n));
  CIResult ci;
  ci.lower = delta_hat + quantile_sorted(draws, alpha / 2) / rn;
  ci.upper = delta_hat + quantile_sorted(draws, 1 - alpha / 2) / rn;
  ci.alpha = alpha;
  ci.draws = m;
  ci.v_qt = v_qt(spec.q, spec.t);
  ci.method = spec.distance.kind == DistanceKind::general ? "projection_mixture" : "truncated_mixture";
  return ci;
}

CIResult normal_interval(double delta_hat, double V, std::size_t n, double alpha) {
  if (!(alpha > 0 && alpha <= 1)) throw ValidationError("alpha must lie in (0,1]");
  if (!(V >= 0)) throw ValidationError("variance must be nonnegative");
  if (n < 1) throw ValidationError("sample size must be positive");
  const double z = boost::math::quantile(boost::math::normal(), 1 - alpha / 2);
  const double half = z * std::sqrt(V / static_cast<double>(n));
  CIResult ci;
  ci.lower = delta_hat - half;
  ci.upper = delta_hat + half;
  ci.alpha = alpha;
  ci.draws = 0;
  ci.v_qt = 1.0;
  ci.method = "normal";
  return ci;
}

}  // namespace rerand
