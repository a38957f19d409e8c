#pragma once

#include "rerand/data_model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rerand {

enum class DgpFamily { continuous_sec7, binary_sec7, custom };

std::string to_string(DgpFamily f);
DgpFamily dgp_family_from_string(const std::string& s);

// Covariates: X1 ~ N(1,1), S | X1 ~ Bern(0.4 + 0.2 I{X1 < 1}), X2 ~ N(0,1). Custom outcome:
//   eta(a) = b0 + ba a + b1 X1 + b2 X2 + bs S + bas a S
//   Y(a) = eta(a) + noise_sd e     (e shared across arms when shared_noise)
//   Y(a) ~ Bern(expit(eta(a)))     when binary
// Missingness: logit P(R(a) = 1) = m0 + ma a + m1 X1 + m2 X2 + m22 X2^2 + ms S.
struct CustomDgp {
  double b0 = 0, ba = 0, b1 = 0, b2 = 0, bs = 0, bas = 0;
  double noise_sd = 1.0;
  bool shared_noise = true;
  bool binary = false;
  double m0 = 2, ma = 0, m1 = 0, m2 = 0, m22 = 0, ms = 0;
};

struct DgpSpec {
  DgpFamily family = DgpFamily::continuous_sec7;
  std::size_t n = 400;
  bool missingness = false;
  CustomDgp custom;
};

// Complete data: covariates X1, X2 and stratum S in the frame, both potential
// outcomes and potential missingness indicators alongside.
struct CompleteTrial {
  TrialFrame frame;
  Eigen::VectorXd y1, y0;
  std::vector<int> r1, r0;
};

CompleteTrial generate_trial(const DgpSpec& dgp, std::uint64_t seed);

// Observed data under a given assignment.
TrialFrame reveal(const CompleteTrial& trial, const std::vector<int>& arms);

struct TruthEstimate {
  double value = 0.0;
  double mcse = 0.0;
  std::size_t draws = 0;
};

// Monte-Carlo E[Y(1)], E[Y(0)] contrast, averaging the conditional means
// E[Y(a) | X1, X2, S] over `draws` covariate draws.
TruthEstimate true_delta(const DgpSpec& dgp, const EstimandSpec& estimand, std::uint64_t seed,
                         std::size_t draws = 10'000'000);

}  // namespace rerand
