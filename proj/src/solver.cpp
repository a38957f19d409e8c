#include "rerand/solver.hpp"

#include "rerand/errors.hpp"

#include <algorithm>
#include <cmath>

namespace rerand {

namespace {

constexpr double kRcondFloor = 1e-12;

Eigen::PartialPivLU<Eigen::MatrixXd> factor(const Eigen::MatrixXd& B) {
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
  const double rc = lu.rcond();
  if (!B.allFinite() || !(rc >= kRcondFloor)) {
    throw SingularityError("estimating-equation Jacobian is singular (rcond " + std::to_string(rc) + ")");
  }
  return lu;
}

double sup_norm(const Eigen::VectorXd& v) {
  if (!v.allFinite()) return std::numeric_limits<double>::infinity();
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

}  // namespace

Eigen::VectorXd mean_psi(const PsiSpec& spec, const Eigen::VectorXd& theta) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(spec.dim);
  Eigen::VectorXd buf(spec.dim);
  for (std::size_t i = 0; i < spec.units; ++i) {
    buf.setZero();
    spec.evaluate(i, theta, buf);
    sum += buf;
  }
  return sum / static_cast<double>(spec.units);
}

Eigen::MatrixXd mean_jacobian(const PsiSpec& spec, const Eigen::VectorXd& theta) {
  const int d = spec.dim;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(d, d);
  if (spec.jacobian) {
    Eigen::MatrixXd buf(d, d);
    for (std::size_t i = 0; i < spec.units; ++i) {
      buf.setZero();
      spec.jacobian(i, theta, buf);
      J += buf;
    }
    return J / static_cast<double>(spec.units);
  }
  Eigen::VectorXd tp = theta, tm = theta;
  for (int j = 0; j < d; ++j) {
    const double h = std::max(1e-6, 1e-6 * std::abs(theta[j]));
    tp[j] = theta[j] + h;
    tm[j] = theta[j] - h;
    J.col(j) = (mean_psi(spec, tp) - mean_psi(spec, tm)) / (tp[j] - tm[j]);
    tp[j] = tm[j] = theta[j];
  }
  return J;
}

SandwichParts sandwich(const PsiSpec& spec, const Eigen::VectorXd& theta) {
  SandwichParts parts;
  parts.B_hat = mean_jacobian(spec, theta);
  const auto lu = factor(parts.B_hat);
  const auto n = static_cast<Eigen::Index>(spec.units);
  Eigen::MatrixXd psi(spec.dim, n);
  Eigen::VectorXd buf(spec.dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    buf.setZero();
    spec.evaluate(static_cast<std::size_t>(i), theta, buf);
    psi.col(i) = buf;
  }
  parts.meat = psi * psi.transpose() / static_cast<double>(n);
  parts.if_matrix = -lu.solve(psi).transpose();
  return parts;
}

SolveResult solve_estimating_equations(const PsiSpec& spec, const SolverOptions& opts) {
  if (spec.dim <= 0 || spec.units == 0) throw ValidationError("empty estimating-equation problem");
  if (spec.theta0.size() != spec.dim || !spec.theta0.allFinite()) {
    throw ValidationError("initial parameter vector must be finite with the right length");
  }
  SolveResult out;
  Eigen::VectorXd theta = spec.theta0;
  Eigen::VectorXd g = mean_psi(spec, theta);
  double gnorm = sup_norm(g);
  if (!std::isfinite(gnorm)) throw ConvergenceError("estimating function not finite at the initial value");
  int it = 0;
  for (;; ++it) {
    Eigen::VectorXd step;
    try {
      step = -factor(mean_jacobian(spec, theta)).solve(g);
    } catch (const SingularityError& e) {
      if (it == 0) throw;
      // A Jacobian that degenerates along the path means theta is running off
      // to infinity (e.g. separation in a logistic block).
      throw ConvergenceError(std::string("Newton solver diverged: ") + e.what());
    }
    const double move = sup_norm(step);
    const bool stalled = move <= 1e-6 * (1.0 + sup_norm(theta));
    if (gnorm <= opts.tolerance && stalled) break;
    if (it >= opts.max_iterations) {
      throw ConvergenceError("Newton solver did not converge in " + std::to_string(opts.max_iterations) +
                             " iterations (residual " + std::to_string(gnorm) + ")");
    }
    double lambda = 1.0;
    bool improved = false;
    Eigen::VectorXd trial, gt;
    for (int h = 0; h <= opts.max_halvings; ++h, lambda *= 0.5) {
      trial = theta + lambda * step;
      gt = mean_psi(spec, trial);
      if (sup_norm(gt) < gnorm || (gnorm <= opts.tolerance && sup_norm(gt) <= opts.tolerance)) {
        improved = true;
        break;
      }
    }
    if (!improved) {
      throw ConvergenceError("Newton step failed to reduce the residual after " +
                             std::to_string(opts.max_halvings) + " halvings (residual " +
                             std::to_string(gnorm) + ")");
    }
    theta = trial;
    g = gt;
    gnorm = sup_norm(g);
  }
  out.theta = theta;
  out.diag.iterations = it;
  out.diag.residual_norm = gnorm;
  out.diag.converged = true;
  out.parts = sandwich(spec, theta);
  return out;
}

}  // namespace rerand
