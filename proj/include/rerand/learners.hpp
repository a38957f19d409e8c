#pragma once

#include "rerand/glm.hpp"

#include <Eigen/Dense>

#include <memory>
#include <string>

namespace rerand {

enum class LearnerKind { glm, knn, stump_ensemble, mean, zero };

// What a learner predicts: an outcome regression E[Y | X] or a missingness
// propensity P(R = 1 | X). Propensity learners fit on the logistic scale
// where that applies.
enum class LearnerTarget { outcome, missingness };

struct LearnerSpec {
  LearnerKind kind = LearnerKind::glm;
  Link link = Link::identity;  // glm outcome learners
  int k_neighbors = 10;
  int trees = 200;
  double learning_rate = 0.1;
  int min_leaf = 5;
};

// Grammar: glm[:identity|:logit], knn[:k], stumps[:trees[:rate]], mean, zero.
LearnerSpec learner_from_string(const std::string& text);
std::string to_string(const LearnerSpec& spec);

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const = 0;
  Eigen::VectorXd predict_all(const Eigen::MatrixXd& X) const;
};

// Fits on rows of X with targets y. Pure and deterministic.
std::unique_ptr<Predictor> fit_learner(const LearnerSpec& spec, LearnerTarget target, const Eigen::MatrixXd& X,
                                       const Eigen::VectorXd& y);

}  // namespace rerand
