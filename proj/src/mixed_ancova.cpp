#include "rerand/errors.hpp"
#include "rerand/estimators.hpp"
#include "rerand/solver.hpp"

#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <limits>

namespace rerand {

namespace {

struct Cluster {
  std::vector<std::size_t> rows;  // all rows
  std::vector<std::size_t> obs;   // rows with an observed outcome
  int arm = 0;
  Eigen::MatrixXd ZtZ;
  Eigen::VectorXd Zt1, ZtY;
  double oneY = 0, YY = 0;
};

// Random-intercept model profiled over gamma = tau^2 / sigma^2.
class MixedModel {
 public:
  MixedModel(const TrialFrame& frame, const Adjustment& adj) : frame_(frame) {
    if (!frame.has_clusters()) throw ValidationError("mixed-model ANCOVA requires a cluster column");
    if (!frame.has_arms()) throw ValidationError("estimation requires an arm column");
    const auto cols = adjustment_columns(frame, adj.covariates);
    std::vector<std::size_t> inter;
    if (adj.interactions) {
      if (adj.interaction_covariates.empty()) {
        for (std::size_t j = 0; j < cols.names.size(); ++j) inter.push_back(j);
      } else {
        for (const auto& name : adj.interaction_covariates) {
          bool found = false;
          for (std::size_t j = 0; j < cols.names.size(); ++j) {
            if (cols.names[j] == name || (name == "stratum" && cols.names[j].rfind("stratum[", 0) == 0)) {
              inter.push_back(j);
              found = true;
            }
          }
          if (!found) throw ValidationError("unknown interaction covariate '" + name + "'");
        }
      }
    }
    design_ = arm_design(cols, frame.arms(), inter);
    const auto& codes = frame.cluster_codes();
    clusters_.resize(frame.cluster_levels().size());
    for (std::size_t i = 0; i < frame.n(); ++i) {
      auto& c = clusters_[static_cast<std::size_t>(codes[i])];
      if (!c.rows.empty() && frame.arms()[c.rows.front()] != frame.arms()[i]) {
        throw ValidationError("cluster '" + frame.cluster_levels()[static_cast<std::size_t>(codes[i])] +
                              "' mixes arms; treatment must be assigned at cluster level");
      }
      c.rows.push_back(i);
      c.arm = frame.arms()[i];
      if (frame.observed()[i]) c.obs.push_back(i);
    }
    int per_arm[2] = {0, 0};
    for (const auto& c : clusters_) per_arm[c.arm]++;
    if (per_arm[0] < 2 || per_arm[1] < 2) {
      throw ValidationError("mixed-model ANCOVA needs at least 2 clusters in each arm");
    }
    const auto p = design_.Z.cols();
    for (auto& c : clusters_) {
      c.ZtZ = Eigen::MatrixXd::Zero(p, p);
      c.Zt1 = Eigen::VectorXd::Zero(p);
      c.ZtY = Eigen::VectorXd::Zero(p);
      for (auto r : c.obs) {
        const auto ri = static_cast<Eigen::Index>(r);
        const Eigen::VectorXd z = design_.Z.row(ri).transpose();
        const double y = frame.outcome()[ri];
        c.ZtZ += z * z.transpose();
        c.Zt1 += z;
        c.ZtY += y * z;
        c.oneY += y;
        c.YY += y * y;
      }
      n_obs_ += static_cast<double>(c.obs.size());
    }
    if (n_obs_ <= static_cast<double>(p)) throw ValidationError("too few observed outcomes for the mixed model");
  }

  struct Profile {
    double loglik;
    double sigma2;
    Eigen::VectorXd beta;
  };

  Profile profile(double gamma) const {
    const auto p = design_.Z.cols();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    double yWy = 0, logdet = 0;
    for (const auto& c : clusters_) {
      const double m = static_cast<double>(c.obs.size());
      if (m == 0) continue;
      const double k = gamma / (1.0 + m * gamma);
      A += c.ZtZ - k * c.Zt1 * c.Zt1.transpose();
      b += c.ZtY - k * c.oneY * c.Zt1;
      yWy += c.YY - k * c.oneY * c.oneY;
      logdet += std::log1p(m * gamma);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success || !(ldlt.rcond() >= 1e-12)) {
      throw SingularityError("mixed-model design is rank deficient");
    }
    Profile pr;
    pr.beta = ldlt.solve(b);
    pr.sigma2 = std::max(yWy - b.dot(pr.beta), 0.0) / n_obs_;
    if (!(pr.sigma2 > 0)) throw NumericError("mixed-model residual variance is zero");
    pr.loglik = -0.5 * (n_obs_ * std::log(pr.sigma2) + logdet);
    return pr;
  }

  // Returns gamma-hat; 0 on the boundary.
  double maximize() const {
    const double lo = std::log(1e-8), hi = std::log(1e6);
    const int grid = 57;
    int best = 0;
    std::vector<double> ll(grid);
    for (int k = 0; k < grid; ++k) {
      ll[k] = profile(std::exp(lo + (hi - lo) * k / (grid - 1))).loglik;
      if (ll[k] > ll[best]) best = k;
    }
    const double a = lo + (hi - lo) * std::max(best - 1, 0) / (grid - 1);
    const double b = lo + (hi - lo) * std::min(best + 1, grid - 1) / (grid - 1);
    auto neg = [&](double u) { return -profile(std::exp(u)).loglik; };
    const auto [u, f] = boost::math::tools::brent_find_minima(neg, a, b, 50);
    const double l0 = profile(0.0).loglik;
    if (l0 >= -f - 1e-9 * std::max(1.0, std::abs(l0))) return 0.0;
    return std::exp(u);
  }

  const ArmDesign& design() const { return design_; }
  const std::vector<Cluster>& clusters() const { return clusters_; }
  const TrialFrame& frame() const { return frame_; }

 private:
  const TrialFrame& frame_;
  ArmDesign design_;
  std::vector<Cluster> clusters_;
  double n_obs_ = 0;
};

}  // namespace

EstimateResult estimate_mixed_ancova(const TrialFrame& frame, const Adjustment& adj,
                                     const EstimandSpec& estimand) {
  const MixedModel model(frame, adj);
  const double gamma = model.maximize();
  const auto prof = model.profile(gamma);
  const bool boundary = gamma == 0.0;
  const auto& D = model.design();
  const int pz = static_cast<int>(D.Z.cols());
  const int dim = 3 + pz + 1 + (boundary ? 0 : 1);
  const auto& clusters = model.clusters();
  const auto& y = frame.outcome();

  auto arm_means = [&](const Cluster& c, const Eigen::VectorXd& beta) {
    double m1 = 0, m0 = 0;
    for (auto r : c.rows) {
      m1 += D.Z1.row(static_cast<Eigen::Index>(r)).dot(beta);
      m0 += D.Z0.row(static_cast<Eigen::Index>(r)).dot(beta);
    }
    const double N = static_cast<double>(c.rows.size());
    return std::pair{m1 / N, m0 / N};
  };

  PsiSpec spec;
  spec.dim = dim;
  spec.units = clusters.size();
  spec.evaluate = [&](std::size_t u, const Eigen::VectorXd& th, Eigen::Ref<Eigen::VectorXd> out) {
    const auto& c = clusters[u];
    const Eigen::VectorXd beta = th.segment(3, pz);
    const double s2 = th[3 + pz];
    const double t2 = boundary ? 0.0 : th[4 + pz];
    const auto [m1, m0] = arm_means(c, beta);
    out[0] = estimand.apply(th[1], th[2]) - th[0];
    out[1] = m1 - th[1];
    out[2] = m0 - th[2];
    const auto m = static_cast<Eigen::Index>(c.obs.size());
    if (m == 0) {
      out.tail(dim - 3).setZero();
      return;
    }
    Eigen::VectorXd r(m);
    Eigen::MatrixXd Zc(m, pz);
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto row = static_cast<Eigen::Index>(c.obs[static_cast<std::size_t>(k)]);
      Zc.row(k) = D.Z.row(row);
      r[k] = y[row] - D.Z.row(row).dot(beta);
    }
    const double md = static_cast<double>(m);
    const double denom = s2 + md * t2;
    const double sr = r.sum();
    // V r = (r - tau2 / denom * 1 1'r) / sigma2
    const Eigen::VectorXd Vr = (r.array() - t2 / denom * sr).matrix() / s2;
    out.segment(3, pz) = Zc.transpose() * Vr;
    const double trV = md / s2 - md * t2 / (s2 * denom);
    out[3 + pz] = -trV + Vr.squaredNorm();
    if (!boundary) {
      const double oneVr = sr / denom;
      out[4 + pz] = -md / denom + oneVr * oneVr;
    }
  };

  const auto [mu1, mu0] = [&] {
    double a = 0, b = 0;
    for (const auto& c : clusters) {
      const auto [m1, m0] = arm_means(c, prof.beta);
      a += m1;
      b += m0;
    }
    const double k = static_cast<double>(clusters.size());
    return std::pair{a / k, b / k};
  }();
  spec.theta0.resize(dim);
  spec.theta0.head(3) << estimand.apply(mu1, mu0), mu1, mu0;
  spec.theta0.segment(3, pz) = prof.beta;
  spec.theta0[3 + pz] = prof.sigma2;
  if (!boundary) spec.theta0[4 + pz] = gamma * prof.sigma2;

  const auto sol = solve_estimating_equations(spec);
  EstimateResult res;
  res.theta_hat = sol.theta;
  res.delta_hat = sol.theta[0];
  res.mu_hat = {sol.theta[1], sol.theta[2]};
  res.if_values = sol.parts.if_matrix.col(0);
  res.solver_diag = sol.diag;
  for (const auto& c : clusters) res.unit_rows.push_back(c.rows);
  res.diagnostics.emplace_back("sigma2", sol.theta[3 + pz]);
  res.diagnostics.emplace_back("tau2", boundary ? 0.0 : sol.theta[4 + pz]);
  res.diagnostics.emplace_back("tau2_boundary", boundary ? 1.0 : 0.0);
  if (!boundary && sol.theta[4 + pz] < 0) throw ConvergenceError("mixed-model polish left tau2 negative");
  return res;
}

}  // namespace rerand
