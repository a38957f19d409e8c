#pragma once

#include "rerand/data_model.hpp"

#include <Eigen/Dense>

#include <cmath>

#include <string>
#include <vector>

namespace rerand {

enum class Link { identity, logit };

std::string to_string(Link link);
Link link_from_string(const std::string& s);

inline double expit(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double inverse_link(Link link, double eta) { return link == Link::identity ? eta : expit(eta); }

// Covariate block for adjustment. The reserved name "stratum" expands to
// dummy columns for every stratum level but the first. Columns are centered
// at their sample means.
struct AdjustmentColumns {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
};

AdjustmentColumns adjustment_columns(const TrialFrame& frame, const std::vector<std::string>& covariates);

// Regression design Z = (1, A, X, A * X[:, inter]) together with its two
// counterfactual versions Z(1), Z(0).
struct ArmDesign {
  Eigen::MatrixXd Z, Z1, Z0;
  std::vector<std::string> names;
};

ArmDesign arm_design(const AdjustmentColumns& cols, const std::vector<int>& arms,
                     const std::vector<std::size_t>& interaction_cols);

// Weighted least squares over rows with w > 0. Throws SingularityError on
// rank deficiency.
Eigen::VectorXd weighted_least_squares(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& w);

// Weighted logistic regression by IRLS. Throws SeparationError when fitted
// probabilities saturate or ConvergenceError when IRLS stalls.
Eigen::VectorXd logistic_irls(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& w);

// Canonical-link GLM fit: least squares or logistic.
Eigen::VectorXd fit_glm(Link link, const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& w);

}  // namespace rerand
