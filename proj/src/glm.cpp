#include "rerand/glm.hpp"

#include "rerand/errors.hpp"

#include <algorithm>
#include <cmath>

namespace rerand {

std::string to_string(Link link) { return link == Link::identity ? "identity" : "logit"; }

Link link_from_string(const std::string& s) {
  if (s == "identity") return Link::identity;
  if (s == "logit") return Link::logit;
  throw ParseError("unknown link '" + s + "' (expected identity or logit)");
}

AdjustmentColumns adjustment_columns(const TrialFrame& frame, const std::vector<std::string>& covariates) {
  AdjustmentColumns out;
  std::vector<Eigen::VectorXd> cols;
  const auto n = static_cast<Eigen::Index>(frame.n());
  for (const auto& name : covariates) {
    if (name == "stratum" && !std::count(frame.covariate_names().begin(), frame.covariate_names().end(), name)) {
      if (!frame.has_strata()) throw ValidationError("adjustment for 'stratum' requested but the data have no strata");
      const auto& codes = frame.stratum_codes();
      for (std::size_t lev = 1; lev < frame.stratum_levels().size(); ++lev) {
        Eigen::VectorXd d(n);
        for (Eigen::Index i = 0; i < n; ++i) d[i] = codes[static_cast<std::size_t>(i)] == static_cast<int>(lev) ? 1.0 : 0.0;
        cols.push_back(d);
        out.names.push_back("stratum[" + frame.stratum_levels()[lev] + "]");
      }
      continue;
    }
    cols.push_back(frame.covariates().col(static_cast<Eigen::Index>(frame.covariate_index(name))));
    out.names.push_back(name);
  }
  out.X.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    const auto& c = cols[j];
    out.X.col(static_cast<Eigen::Index>(j)) = c.array() - c.mean();
  }
  return out;
}

ArmDesign arm_design(const AdjustmentColumns& cols, const std::vector<int>& arms,
                     const std::vector<std::size_t>& interaction_cols) {
  const auto n = cols.X.rows();
  const auto p = cols.X.cols();
  const auto m = static_cast<Eigen::Index>(interaction_cols.size());
  ArmDesign d;
  d.Z1.resize(n, 2 + p + m);
  d.Z0.resize(n, 2 + p + m);
  d.Z1.col(0).setOnes();
  d.Z0.col(0).setOnes();
  d.Z1.col(1).setOnes();
  d.Z0.col(1).setZero();
  d.Z1.middleCols(2, p) = cols.X;
  d.Z0.middleCols(2, p) = cols.X;
  d.names = {"(intercept)", "arm"};
  d.names.insert(d.names.end(), cols.names.begin(), cols.names.end());
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto j = static_cast<Eigen::Index>(interaction_cols[static_cast<std::size_t>(k)]);
    d.Z1.col(2 + p + k) = cols.X.col(j);
    d.Z0.col(2 + p + k).setZero();
    d.names.push_back("arm:" + cols.names[static_cast<std::size_t>(j)]);
  }
  d.Z = d.Z0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (arms[static_cast<std::size_t>(i)]) d.Z.row(i) = d.Z1.row(i);
  }
  return d;
}

Eigen::VectorXd weighted_least_squares(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& w) {
  const Eigen::VectorXd sw = w.cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd A = sw.asDiagonal() * Z;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
  qr.setThreshold(1e-10);
  if (qr.rank() < Z.cols()) {
    throw SingularityError("regression design is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                           std::to_string(Z.cols()) + " columns)");
  }
  return qr.solve(sw.cwiseProduct(y));
}

Eigen::VectorXd logistic_irls(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  const auto n = Z.rows();
  double wsum = 0, ysum = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w[i] <= 0) continue;
    if (y[i] != 0.0 && y[i] != 1.0) throw ValidationError("logistic model requires binary outcomes");
    wsum += w[i];
    ysum += w[i] * y[i];
  }
  if (wsum <= 0) throw ValidationError("logistic model has no rows to fit");
  const double ybar = ysum / wsum;
  if (ybar <= 0.0 || ybar >= 1.0) throw SeparationError("logistic fit degenerate: all responses equal");
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(Z.cols());
  beta[0] = std::log(ybar / (1 - ybar));
  auto deviance = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = Z * b;
    double dev = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (w[i] <= 0) continue;
      // log(1 + e^eta) - y eta, stably.
      const double e = eta[i];
      dev += w[i] * ((e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e))) - y[i] * e);
    }
    return dev;
  };
  double dev = deviance(beta);
  bool converged = false;
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd eta = Z * beta;
    Eigen::VectorXd wt(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = expit(eta[i]);
      const double v = std::max(p * (1 - p), 1e-300);
      wt[i] = std::max(w[i], 0.0) * v;
      z[i] = eta[i] + (y[i] - p) / v;
    }
    Eigen::VectorXd next = weighted_least_squares(Z, z, wt);
    double nd = deviance(next);
    for (int h = 0; h < 30 && !(nd <= dev + 1e-12 * std::abs(dev)); ++h) {
      next = 0.5 * (next + beta);
      nd = deviance(next);
    }
    const double change = std::abs(nd - dev) / (std::abs(nd) + 0.1);
    beta = next;
    dev = nd;
    if (change < 1e-13) {
      converged = true;
      break;
    }
  }
  const Eigen::VectorXd eta = Z * beta;
  double worst = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w[i] > 0) worst = std::max(worst, std::abs(eta[i]));
  }
  if (worst > 27.6) {
    throw SeparationError("logistic fit separated: fitted probabilities within 1e-12 of 0 or 1");
  }
  if (!converged) throw ConvergenceError("logistic IRLS did not converge in 100 iterations");
  return beta;
}

Eigen::VectorXd fit_glm(Link link, const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
  return link == Link::identity ? weighted_least_squares(Z, y, w) : logistic_irls(Z, y, w);
}

}  // namespace rerand
