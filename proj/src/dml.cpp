#include "rerand/dml.hpp"

#include "rerand/errors.hpp"
#include "rerand/glm.hpp"
#include "rerand/random.hpp"

#include <algorithm>
#include <map>
#include <numeric>

namespace rerand {

std::string to_string(FoldMode m) { return m == FoldMode::plain ? "plain" : "stratum-arm"; }

FoldMode fold_mode_from_string(const std::string& s) {
  if (s == "plain") return FoldMode::plain;
  if (s == "stratum-arm" || s == "stratum_arm") return FoldMode::stratum_arm;
  throw ParseError("unknown fold mode '" + s + "' (expected plain or stratum-arm)");
}

namespace {

void deal(std::vector<std::size_t> units, int K, Rng& rng, std::vector<int>& assignment) {
  for (std::size_t j = units.size(); j > 1; --j) {
    const auto r = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(j)), j - 1);
    std::swap(units[j - 1], units[r]);
  }
  for (std::size_t j = 0; j < units.size(); ++j) assignment[units[j]] = static_cast<int>(j % static_cast<std::size_t>(K));
}

}  // namespace

FoldPlan make_folds(const TrialFrame& frame, int K, FoldMode mode, std::uint64_t seed) {
  if (K < 2) throw ValidationError("cross-fitting needs K >= 2 folds");
  const auto n = frame.n();
  if (n < static_cast<std::size_t>(K)) throw ValidationError("fewer units than folds");
  FoldPlan plan;
  plan.mode = mode;
  plan.K = K;
  plan.assignment.assign(n, 0);
  auto rng = make_rng(derive_seed(seed, "folds"));
  if (mode == FoldMode::plain) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    deal(std::move(all), K, rng, plan.assignment);
    return plan;
  }
  if (!frame.has_strata()) throw ValidationError("stratum-arm cross-fitting requires strata");
  if (!frame.has_arms()) throw ValidationError("stratum-arm cross-fitting requires arms");
  std::map<std::pair<int, int>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < n; ++i) cells[{frame.arms()[i], frame.stratum_codes()[i]}].push_back(i);
  for (auto& [key, units] : cells) {
    if (units.size() < static_cast<std::size_t>(K)) {
      throw ValidationError("cell (arm " + std::to_string(key.first) + ", stratum '" +
                            frame.stratum_levels()[static_cast<std::size_t>(key.second)] + "') has " +
                            std::to_string(units.size()) + " units, fewer than K = " + std::to_string(K));
    }
    deal(units, K, rng, plan.assignment);
  }
  return plan;
}

EstimateResult estimate_dml(const TrialFrame& frame, const DmlOptions& opts, const EstimandSpec& estimand,
                            std::uint64_t seed) {
  if (!frame.has_arms()) throw ValidationError("estimation requires an arm column");
  if (!(opts.pi > 0 && opts.pi < 1)) throw ValidationError("pi must lie in (0,1)");
  const auto n = frame.n();
  const bool any_missing = frame.observed_count() < n;
  if (any_missing && !opts.missingness_learner) {
    throw ValidationError("outcomes are missing but no missingness learner was given");
  }
  const auto plan = make_folds(frame, opts.K, opts.mode, seed);
  const Eigen::MatrixXd X = adjustment_columns(frame, opts.covariates).X;
  const auto& arms = frame.arms();
  const auto& obs = frame.observed();
  const auto& y = frame.outcome();

  // eta[a], kappa[a] evaluated at every unit from fits that exclude it.
  Eigen::MatrixXd eta(static_cast<Eigen::Index>(n), 2), kappa = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(n), 2);
  double clipped = 0;

  // Groups sharing training data: the whole sample (plain) or each stratum.
  std::vector<int> group(n, 0);
  int groups = 1;
  if (opts.mode == FoldMode::stratum_arm) {
    group = frame.stratum_codes();
    groups = static_cast<int>(frame.stratum_levels().size());
  }

  auto rows_of = [&](const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), X.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = X.row(static_cast<Eigen::Index>(idx[k]));
    return out;
  };

  for (int gr = 0; gr < groups; ++gr) {
    for (int k = 0; k < opts.K; ++k) {
      std::vector<std::size_t> eval;
      for (std::size_t i = 0; i < n; ++i) {
        if (group[i] == gr && plan.assignment[i] == k) eval.push_back(i);
      }
      if (eval.empty()) continue;
      const Eigen::MatrixXd Xe = rows_of(eval);
      for (int a = 0; a <= 1; ++a) {
        std::vector<std::size_t> train_all, train_obs;
        for (std::size_t i = 0; i < n; ++i) {
          if (group[i] != gr || plan.assignment[i] == k || arms[i] != a) continue;
          train_all.push_back(i);
          if (obs[i]) train_obs.push_back(i);
        }
        if (train_obs.empty()) {
          throw ValidationError("no observed training outcomes for arm " + std::to_string(a) + " in fold " +
                                std::to_string(k));
        }
        Eigen::VectorXd yt(static_cast<Eigen::Index>(train_obs.size()));
        for (std::size_t j = 0; j < train_obs.size(); ++j) yt[static_cast<Eigen::Index>(j)] = y[static_cast<Eigen::Index>(train_obs[j])];
        const auto eta_fit = fit_learner(opts.outcome_learner, LearnerTarget::outcome, rows_of(train_obs), yt);
        const Eigen::VectorXd pe = eta_fit->predict_all(Xe);
        for (std::size_t j = 0; j < eval.size(); ++j) eta(static_cast<Eigen::Index>(eval[j]), a) = pe[static_cast<Eigen::Index>(j)];
        if (opts.trace) opts.trace->push_back({a, k, false, train_obs, eval});

        if (any_missing) {
          Eigen::VectorXd rt(static_cast<Eigen::Index>(train_all.size()));
          for (std::size_t j = 0; j < train_all.size(); ++j) rt[static_cast<Eigen::Index>(j)] = obs[train_all[j]];
          const auto kappa_fit =
              fit_learner(*opts.missingness_learner, LearnerTarget::missingness, rows_of(train_all), rt);
          const Eigen::VectorXd pk = kappa_fit->predict_all(Xe);
          for (std::size_t j = 0; j < eval.size(); ++j) {
            double v = pk[static_cast<Eigen::Index>(j)];
            if (v < opts.clip_floor) {
              v = opts.clip_floor;
              clipped += 1;
            }
            kappa(static_cast<Eigen::Index>(eval[j]), a) = std::min(v, 1.0);
          }
          if (opts.trace) opts.trace->push_back({a, k, true, train_all, eval});
        }
      }
    }
  }

  // Per-unit AIPW terms for each arm.
  Eigen::MatrixXd term(static_cast<Eigen::Index>(n), 2);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (int a = 0; a <= 1; ++a) {
      const double pa = a ? opts.pi : 1 - opts.pi;
      const double ind = arms[i] == a ? 1.0 : 0.0;
      const double resid = obs[i] ? (y[ii] - eta(ii, a)) / kappa(ii, a) : 0.0;
      term(ii, a) = ind / pa * resid + eta(ii, a);
    }
  }
  const double mu1 = term.col(1).mean(), mu0 = term.col(0).mean();
  const auto [g1, g0] = estimand.gradient(mu1, mu0);
  EstimateResult res;
  res.delta_hat = estimand.apply(mu1, mu0);
  res.mu_hat = {mu1, mu0};
  res.theta_hat = Eigen::Vector3d(res.delta_hat, mu1, mu0);
  res.if_values = g1 * (term.col(1).array() - mu1) + g0 * (term.col(0).array() - mu0);
  res.solver_diag = {0, 0.0, true};
  res.diagnostics.emplace_back("clipped_propensities", clipped);
  res.diagnostics.emplace_back("folds", opts.K);
  return res;
}

}  // namespace rerand
