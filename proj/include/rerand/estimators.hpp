#pragma once

#include "rerand/data_model.hpp"
#include "rerand/glm.hpp"

#include <string>
#include <vector>

namespace rerand {

// Outcome-model covariates. With `interactions`, arm-by-covariate terms are
// added for `interaction_covariates` (all adjustment covariates when empty).
struct Adjustment {
  std::vector<std::string> covariates;
  bool interactions = false;
  std::vector<std::string> interaction_covariates;
};

EstimateResult estimate_unadjusted(const TrialFrame& frame, const EstimandSpec& estimand);

// Linear working model fitted by OLS on observed rows, then g-computation.
EstimateResult estimate_ancova(const TrialFrame& frame, const Adjustment& adj, const EstimandSpec& estimand);

// Logistic working model, g-computation.
EstimateResult estimate_gcomp_logistic(const TrialFrame& frame, const Adjustment& adj,
                                       const EstimandSpec& estimand);

struct DrwlsOptions {
  Adjustment outcome;
  std::vector<std::string> missing_covariates;
  Link link = Link::identity;
  double clip_floor = 0.01;
};

// Inverse-propensity-weighted outcome regression plus g-computation.
EstimateResult estimate_drwls(const TrialFrame& frame, const DrwlsOptions& opts, const EstimandSpec& estimand);

// Random-intercept linear mixed model by maximum likelihood; analysis units
// are clusters.
EstimateResult estimate_mixed_ancova(const TrialFrame& frame, const Adjustment& adj,
                                     const EstimandSpec& estimand);

}  // namespace rerand
