#include "rerand/estimators.hpp"

#include "rerand/errors.hpp"
#include "rerand/solver.hpp"

#include <algorithm>
#include <cmath>

namespace rerand {

namespace {

void require_arms(const TrialFrame& frame) {
  if (!frame.has_arms()) throw ValidationError("estimation requires an arm column");
  std::size_t obs1 = 0, obs0 = 0;
  for (std::size_t i = 0; i < frame.n(); ++i) {
    if (!frame.observed()[i]) continue;
    (frame.arms()[i] ? obs1 : obs0)++;
  }
  if (obs1 == 0 || obs0 == 0) throw ValidationError("each arm needs at least one observed outcome");
}

EstimateResult finish(const SolveResult& sol) {
  EstimateResult r;
  r.theta_hat = sol.theta;
  r.delta_hat = sol.theta[0];
  r.mu_hat = {sol.theta[1], sol.theta[2]};
  r.if_values = sol.parts.if_matrix.col(0);
  r.solver_diag = sol.diag;
  return r;
}

std::vector<std::size_t> interaction_columns(const AdjustmentColumns& cols, const Adjustment& adj) {
  std::vector<std::size_t> out;
  if (!adj.interactions) return out;
  if (adj.interaction_covariates.empty()) {
    for (std::size_t j = 0; j < cols.names.size(); ++j) out.push_back(j);
    return out;
  }
  for (const auto& name : adj.interaction_covariates) {
    if (std::find(adj.covariates.begin(), adj.covariates.end(), name) == adj.covariates.end()) {
      throw ValidationError("interaction covariate '" + name + "' is not an adjustment covariate");
    }
    bool found = false;
    for (std::size_t j = 0; j < cols.names.size(); ++j) {
      const auto& cn = cols.names[j];
      if (cn == name || (name == "stratum" && cn.rfind("stratum[", 0) == 0)) {
        out.push_back(j);
        found = true;
      }
    }
    if (!found && name != "stratum") throw ValidationError("unknown interaction covariate '" + name + "'");
  }
  return out;
}

// Stacked working-model problem: theta = (Delta, mu1, mu0, beta, alpha).
struct GcompProblem {
  const TrialFrame* frame = nullptr;
  EstimandSpec estimand;
  Link link = Link::identity;
  ArmDesign design;
  Eigen::MatrixXd M;  // missingness design; zero columns when absent
  double clip_floor = 0.01;

  int pz() const { return static_cast<int>(design.Z.cols()); }
  int pm() const { return static_cast<int>(M.cols()); }
  int dim() const { return 3 + pz() + pm(); }

  double propensity(std::size_t i, const Eigen::VectorXd& theta) const {
    if (pm() == 0) return 1.0;
    const auto ii = static_cast<Eigen::Index>(i);
    return std::max(clip_floor, expit(M.row(ii).dot(theta.tail(pm()))));
  }

  void evaluate(std::size_t i, const Eigen::VectorXd& theta, Eigen::Ref<Eigen::VectorXd> out) const {
    const auto ii = static_cast<Eigen::Index>(i);
    const auto beta = theta.segment(3, pz());
    out[0] = estimand.apply(theta[1], theta[2]) - theta[0];
    out[1] = inverse_link(link, design.Z1.row(ii).dot(beta)) - theta[1];
    out[2] = inverse_link(link, design.Z0.row(ii).dot(beta)) - theta[2];
    const int r = frame->observed()[i];
    if (r) {
      const double resid = frame->outcome()[ii] - inverse_link(link, design.Z.row(ii).dot(beta));
      out.segment(3, pz()) = (resid / propensity(i, theta)) * design.Z.row(ii).transpose();
    } else {
      out.segment(3, pz()).setZero();
    }
    if (pm() > 0) {
      const double e = expit(M.row(ii).dot(theta.tail(pm())));
      out.tail(pm()) = (r - e) * M.row(ii).transpose();
    }
  }

  PsiSpec spec(Eigen::VectorXd theta0) const {
    PsiSpec s;
    s.dim = dim();
    s.units = frame->n();
    s.theta0 = std::move(theta0);
    s.evaluate = [this](std::size_t i, const Eigen::VectorXd& th, Eigen::Ref<Eigen::VectorXd> out) {
      evaluate(i, th, out);
    };
    return s;
  }

  EstimateResult solve(const Eigen::VectorXd& alpha, const Eigen::VectorXd& beta) const {
    const auto n = static_cast<double>(frame->n());
    Eigen::VectorXd theta0(dim());
    double mu1 = 0, mu0 = 0;
    for (Eigen::Index i = 0; i < design.Z.rows(); ++i) {
      mu1 += inverse_link(link, design.Z1.row(i).dot(beta));
      mu0 += inverse_link(link, design.Z0.row(i).dot(beta));
    }
    mu1 /= n;
    mu0 /= n;
    theta0 << estimand.apply(mu1, mu0), mu1, mu0, beta, alpha;
    return finish(solve_estimating_equations(spec(theta0)));
  }
};

Eigen::VectorXd observed_weights(const TrialFrame& frame) {
  Eigen::VectorXd w(static_cast<Eigen::Index>(frame.n()));
  for (std::size_t i = 0; i < frame.n(); ++i) w[static_cast<Eigen::Index>(i)] = frame.observed()[i];
  return w;
}

EstimateResult regression_gcomp(const TrialFrame& frame, const Adjustment& adj, Link link,
                                const EstimandSpec& estimand) {
  require_arms(frame);
  const auto cols = adjustment_columns(frame, adj.covariates);
  GcompProblem prob;
  prob.frame = &frame;
  prob.estimand = estimand;
  prob.link = link;
  prob.design = arm_design(cols, frame.arms(), interaction_columns(cols, adj));
  prob.M.resize(static_cast<Eigen::Index>(frame.n()), 0);
  const Eigen::VectorXd beta = fit_glm(link, prob.design.Z, frame.outcome(), observed_weights(frame));
  return prob.solve(Eigen::VectorXd(0), beta);
}

}  // namespace

EstimateResult estimate_unadjusted(const TrialFrame& frame, const EstimandSpec& estimand) {
  require_arms(frame);
  const auto& arms = frame.arms();
  const auto& obs = frame.observed();
  const auto& y = frame.outcome();
  double s1 = 0, s0 = 0, n1 = 0, n0 = 0;
  for (std::size_t i = 0; i < frame.n(); ++i) {
    if (!obs[i]) continue;
    if (arms[i]) {
      s1 += y[static_cast<Eigen::Index>(i)];
      n1 += 1;
    } else {
      s0 += y[static_cast<Eigen::Index>(i)];
      n0 += 1;
    }
  }
  const double m1 = s1 / n1, m0 = s0 / n0;
  PsiSpec spec;
  spec.dim = 3;
  spec.units = frame.n();
  spec.theta0 = Eigen::Vector3d(estimand.apply(m1, m0), m1, m0);
  spec.evaluate = [&](std::size_t i, const Eigen::VectorXd& th, Eigen::Ref<Eigen::VectorXd> out) {
    const double yi = y[static_cast<Eigen::Index>(i)];
    const double r = obs[i];
    out[0] = estimand.apply(th[1], th[2]) - th[0];
    out[1] = r * arms[i] * (yi - th[1]);
    out[2] = r * (1 - arms[i]) * (yi - th[2]);
  };
  spec.jacobian = [&](std::size_t i, const Eigen::VectorXd& th, Eigen::Ref<Eigen::MatrixXd> out) {
    const auto [g1, g0] = estimand.gradient(th[1], th[2]);
    const double r = obs[i];
    out.setZero();
    out(0, 0) = -1;
    out(0, 1) = g1;
    out(0, 2) = g0;
    out(1, 1) = -r * arms[i];
    out(2, 2) = -r * (1 - arms[i]);
  };
  return finish(solve_estimating_equations(spec));
}

EstimateResult estimate_ancova(const TrialFrame& frame, const Adjustment& adj, const EstimandSpec& estimand) {
  return regression_gcomp(frame, adj, Link::identity, estimand);
}

EstimateResult estimate_gcomp_logistic(const TrialFrame& frame, const Adjustment& adj,
                                       const EstimandSpec& estimand) {
  for (std::size_t i = 0; i < frame.n(); ++i) {
    const double y = frame.outcome()[static_cast<Eigen::Index>(i)];
    if (frame.observed()[i] && y != 0.0 && y != 1.0) {
      throw ValidationError("row " + std::to_string(i + 1) + ": logistic g-computation needs binary outcomes");
    }
  }
  return regression_gcomp(frame, adj, Link::logit, estimand);
}

EstimateResult estimate_drwls(const TrialFrame& frame, const DrwlsOptions& opts, const EstimandSpec& estimand) {
  require_arms(frame);
  if (!(opts.clip_floor > 0 && opts.clip_floor < 1)) throw ValidationError("clip floor must lie in (0,1)");
  if (opts.link == Link::logit) {
    for (std::size_t i = 0; i < frame.n(); ++i) {
      const double y = frame.outcome()[static_cast<Eigen::Index>(i)];
      if (frame.observed()[i] && y != 0.0 && y != 1.0) {
        throw ValidationError("row " + std::to_string(i + 1) + ": logit link needs binary outcomes");
      }
    }
  }
  const auto n = static_cast<Eigen::Index>(frame.n());
  const auto cols = adjustment_columns(frame, opts.outcome.covariates);
  GcompProblem prob;
  prob.frame = &frame;
  prob.estimand = estimand;
  prob.link = opts.link;
  prob.clip_floor = opts.clip_floor;
  prob.design = arm_design(cols, frame.arms(), interaction_columns(cols, opts.outcome));

  const bool any_missing = frame.observed_count() < frame.n();
  Eigen::VectorXd alpha(0);
  Eigen::VectorXd weights = observed_weights(frame);
  double clipped = 0;
  if (any_missing) {
    const auto mcols = adjustment_columns(frame, opts.missing_covariates);
    prob.M.resize(n, 2 + mcols.X.cols());
    prob.M.col(0).setOnes();
    for (Eigen::Index i = 0; i < n; ++i) prob.M(i, 1) = frame.arms()[static_cast<std::size_t>(i)];
    prob.M.rightCols(mcols.X.cols()) = mcols.X;
    alpha = logistic_irls(prob.M, weights, Eigen::VectorXd::Ones(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double e = expit(prob.M.row(i).dot(alpha));
      if (e < opts.clip_floor) clipped += 1;
      weights[i] /= std::max(e, opts.clip_floor);
    }
  } else {
    prob.M.resize(n, 0);
  }
  const Eigen::VectorXd beta = fit_glm(opts.link, prob.design.Z, frame.outcome(), weights);
  auto result = prob.solve(alpha, beta);
  result.diagnostics.emplace_back("clipped_propensities", clipped);
  result.diagnostics.emplace_back("missingness_model", any_missing ? 1.0 : 0.0);
  return result;
}

}  // namespace rerand
