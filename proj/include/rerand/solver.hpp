#pragma once

#include "rerand/data_model.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <functional>

namespace rerand {

// Estimating function psi(O_i; theta) over `units` analysis units.
struct PsiSpec {
  using Eval = std::function<void(std::size_t unit, const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> out)>;
  using Jac = std::function<void(std::size_t unit, const Eigen::VectorXd& theta, Eigen::Ref<Eigen::MatrixXd> out)>;

  int dim = 0;
  std::size_t units = 0;
  Eval evaluate;
  Jac jacobian;  // optional; central differences when empty
  Eigen::VectorXd theta0;
  int target_index = 0;
};

struct SandwichParts {
  Eigen::MatrixXd B_hat;      // n^-1 sum d psi / d theta
  Eigen::MatrixXd meat;       // n^-1 sum psi psi'
  Eigen::MatrixXd if_matrix;  // row i: -B^-1 psi_i
};

struct SolverOptions {
  double tolerance = 1e-10;  // on max |n^-1 sum psi|
  int max_iterations = 100;
  int max_halvings = 30;
};

struct SolveResult {
  Eigen::VectorXd theta;
  SandwichParts parts;
  SolverDiagnostics diag;
};

// n^-1 sum_i psi(O_i; theta)
Eigen::VectorXd mean_psi(const PsiSpec& spec, const Eigen::VectorXd& theta);
Eigen::MatrixXd mean_jacobian(const PsiSpec& spec, const Eigen::VectorXd& theta);
SandwichParts sandwich(const PsiSpec& spec, const Eigen::VectorXd& theta);

// Damped Newton from spec.theta0. Converged when the residual is below
// tolerance and the Newton step has stopped moving theta; throws
// ConvergenceError otherwise and SingularityError for a singular B.
SolveResult solve_estimating_equations(const PsiSpec& spec, const SolverOptions& opts = {});

}  // namespace rerand
