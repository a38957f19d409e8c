#pragma once

#include "rerand/data_model.hpp"
#include "rerand/random.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rerand {

// V-hat: mean squared influence value.
double variance_simple(const Eigen::VectorXd& if_values);

struct RSquared {
  double value = 0.0;
  double raw = 0.0;
  bool clamped = false;
  Eigen::VectorXd C;   // covariance of the weighted IF with Xr
  Eigen::MatrixXd VI;  // n * Var-hat(I)
};

RSquared rsquared_simple(const Eigen::VectorXd& if_values, const std::vector<int>& arms, const Eigen::MatrixXd& xr,
                         double pi);

struct StratifiedVariance {
  double value = 0.0;
  double raw = 0.0;
  bool floored = false;
};

StratifiedVariance variance_stratified(const Eigen::VectorXd& if_values, const std::vector<int>& arms,
                                       const std::vector<int>& strata, double pi);

RSquared rsquared_stratified(const Eigen::VectorXd& if_values, const std::vector<int>& arms,
                             const std::vector<int>& strata, const Eigen::MatrixXd& xr, double pi);

// General-distance limit: sqrt(V (1 - R2)) z + C' VI^{-1/2} D with D standard
// normal conditioned on D' VI^{1/2} H^{-1} VI^{1/2} D < t.
struct Projection {
  Eigen::VectorXd C;
  Eigen::MatrixXd VI;
  Eigen::MatrixXd H;
};

struct LimitSpec {
  double V = 0.0;
  double R2 = 0.0;
  int q = 1;
  double t = kInf;
  DistanceSpec distance;
  bool stratified = false;
  std::optional<Projection> projection;
};

void validate_limit(const LimitSpec& spec);

// P(chi2_{q+2} < t) / P(chi2_q < t): variance of the truncated component.
double v_qt(int q, double t);

std::vector<double> sample_limit(const LimitSpec& spec, std::size_t m, Rng& rng);
std::vector<double> sample_limit(const LimitSpec& spec, std::size_t m, std::uint64_t seed);

struct CIResult {
  double lower = 0.0;
  double upper = 0.0;
  double alpha = 0.05;
  std::size_t draws = 0;
  double v_qt = 1.0;
  std::string method;
};

// Type-7 quantile of a sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double p);

CIResult confidence_interval(double delta_hat, const LimitSpec& spec, std::size_t n, double alpha, std::size_t m,
                             std::uint64_t seed);
CIResult normal_interval(double delta_hat, double V, std::size_t n, double alpha);

}  // namespace rerand
