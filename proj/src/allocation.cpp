#include "rerand/allocation.hpp"

#include "rerand/errors.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>

namespace rerand {

namespace {

void check_pi(double pi) {
  if (!(pi >= 0.0 && pi <= 1.0)) throw ValidationError("pi must lie in [0,1]");
}

std::string join(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
  return out;
}

int count_levels(const std::vector<int>& strata) {
  int m = 0;
  for (int s : strata) m = std::max(m, s + 1);
  return m;
}

bool both_arms(const std::vector<int>& arms) {
  bool t = false, c = false;
  for (int a : arms) (a ? t : c) = true;
  return t && c;
}

bool both_arms_each_stratum(const std::vector<int>& arms, const std::vector<int>& strata) {
  const int m = count_levels(strata);
  std::vector<int> t(m, 0), c(m, 0);
  for (std::size_t i = 0; i < arms.size(); ++i) (arms[i] ? t : c)[strata[i]]++;
  for (int s = 0; s < m; ++s) {
    if (t[s] + c[s] > 0 && (t[s] == 0 || c[s] == 0)) return false;
  }
  return true;
}

}  // namespace

std::vector<int> simple_assign(std::size_t n, double pi, Rng& rng) {
  check_pi(pi);
  std::vector<int> arms(n);
  for (auto& a : arms) a = bernoulli(rng, pi);
  return arms;
}

std::vector<int> simple_assign(std::size_t n, double pi, std::uint64_t seed) {
  auto rng = make_rng(seed);
  return simple_assign(n, pi, rng);
}

std::vector<int> permuted_block_assign(const std::vector<int>& strata, double pi, int k, Rng& rng) {
  if (k < 2) throw ValidationError("block size k must be at least 2");
  check_pi(pi);
  const double pk = pi * k;
  if (std::abs(pk - std::round(pk)) > 1e-9) {
    throw ValidationError("pi*k not integer (pi=" + std::to_string(pi) + ", k=" + std::to_string(k) + ")");
  }
  const int ones = static_cast<int>(std::round(pk));
  const int m = count_levels(strata);
  std::vector<std::vector<int>> block(m);
  std::vector<std::size_t> pos(m, 0);
  std::vector<int> arms(strata.size());
  for (std::size_t i = 0; i < strata.size(); ++i) {
    const int s = strata[i];
    if (s < 0) throw ValidationError("negative stratum code");
    if (pos[s] == block[s].size()) {
      block[s].assign(static_cast<std::size_t>(k), 0);
      std::fill(block[s].begin(), block[s].begin() + ones, 1);
      // Fisher-Yates with the portable uniform.
      for (int j = k - 1; j > 0; --j) {
        const auto r = static_cast<int>(uniform01(rng) * (j + 1));
        std::swap(block[s][j], block[s][std::min(r, j)]);
      }
      pos[s] = 0;
    }
    arms[i] = block[s][pos[s]++];
  }
  return arms;
}

std::vector<int> permuted_block_assign(const std::vector<int>& strata, double pi, int k,
                                       std::uint64_t seed) {
  auto rng = make_rng(seed);
  return permuted_block_assign(strata, pi, k, rng);
}

Imbalance imbalance_simple(const Eigen::MatrixXd& xr, const std::vector<int>& arms) {
  const auto n = xr.rows();
  if (static_cast<std::size_t>(n) != arms.size()) throw ValidationError("arms length mismatch");
  const Eigen::Index q = xr.cols();
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(q), s0 = Eigen::VectorXd::Zero(q);
  double n1 = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (arms[i]) {
      s1 += xr.row(i).transpose();
      n1 += 1;
    } else {
      s0 += xr.row(i).transpose();
    }
  }
  const double n0 = static_cast<double>(n) - n1;
  if (n1 == 0 || n0 == 0) throw ValidationError("imbalance needs both arms non-empty");
  Imbalance out;
  out.I = s1 / n1 - s0 / n0;
  const Eigen::RowVectorXd mean = xr.colwise().mean();
  const Eigen::MatrixXd c = xr.rowwise() - mean;
  out.V = (c.transpose() * c) / (n1 * n0);
  return out;
}

Imbalance imbalance_stratified(const Eigen::MatrixXd& xr, const std::vector<int>& arms,
                               const std::vector<int>& strata) {
  const auto n = xr.rows();
  if (static_cast<std::size_t>(n) != strata.size()) throw ValidationError("strata length mismatch");
  Imbalance out;
  out.I = imbalance_simple(xr, arms).I;
  const int m = count_levels(strata);
  const Eigen::Index q = xr.cols();
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(q, m);
  std::vector<double> counts(m, 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    sums.col(strata[i]) += xr.row(i).transpose();
    counts[strata[i]] += 1;
  }
  Eigen::MatrixXd inner = (xr.transpose() * xr) / static_cast<double>(n);
  for (int s = 0; s < m; ++s) {
    if (counts[s] == 0) throw ValidationError("empty stratum " + std::to_string(s));
    const Eigen::VectorXd xs = sums.col(s) / counts[s];
    inner -= (counts[s] / static_cast<double>(n)) * xs * xs.transpose();
  }
  double n1 = 0;
  for (int a : arms) n1 += a;
  const double n0 = static_cast<double>(n) - n1;
  out.V = inner * (static_cast<double>(n) / (n1 * n0));
  return out;
}

Eigen::VectorXd imbalance_stratified_dagger(const Eigen::MatrixXd& xr, const std::vector<int>& arms,
                                            const std::vector<int>& strata) {
  const auto n = xr.rows();
  const int m = count_levels(strata);
  const Eigen::Index q = xr.cols();
  Eigen::MatrixXd s1 = Eigen::MatrixXd::Zero(q, m), s0 = Eigen::MatrixXd::Zero(q, m);
  std::vector<double> n1(m, 0.0), n0(m, 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (arms[i]) {
      s1.col(strata[i]) += xr.row(i).transpose();
      n1[strata[i]] += 1;
    } else {
      s0.col(strata[i]) += xr.row(i).transpose();
      n0[strata[i]] += 1;
    }
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(q);
  for (int s = 0; s < m; ++s) {
    if (n1[s] == 0 || n0[s] == 0) {
      throw ValidationError("stratum " + std::to_string(s) + " does not contain both arms");
    }
    const double ps = (n1[s] + n0[s]) / static_cast<double>(n);
    out += ps * (s1.col(s) / n1[s] - s0.col(s) / n0[s]);
  }
  return out;
}

double balance_distance(const Eigen::VectorXd& I, const Eigen::MatrixXd& W,
                        const std::vector<std::string>& names) {
  if (W.rows() != I.size() || W.cols() != I.size()) throw ValidationError("dimension mismatch in balance_distance");
  const auto label = [&] { return names.empty() ? std::string("rerandomization covariates") : "covariates {" + join(names) + "}"; };
  Eigen::LLT<Eigen::MatrixXd> llt(W);
  if (llt.info() != Eigen::Success || !(llt.rcond() >= 1e-12)) {
    throw SingularityError("imbalance variance is numerically singular for " + label() +
                           "; drop constant or collinear covariates");
  }
  const Eigen::VectorXd z = llt.matrixL().solve(I);
  return z.squaredNorm();
}

Eigen::MatrixXd weight_matrix(const Eigen::MatrixXd& V, const DistanceSpec& spec) {
  if (spec.kind == DistanceKind::mahalanobis) return V;
  return V.diagonal().asDiagonal();
}

double chi_square_cdf(double q, double t) {
  if (!(q > 0)) throw ValidationError("chi-square degrees of freedom must be positive");
  if (std::isnan(t) || t < 0) throw ValidationError("chi-square argument must be nonnegative");
  if (std::isinf(t)) return 1.0;
  if (t == 0.0) return 0.0;
  return boost::math::gamma_p(q / 2.0, t / 2.0);
}

namespace {

struct Proposal {
  std::vector<int> arms;
  bool valid = false;
};

struct Evaluation {
  bool accepted = false;
  double distance = 0.0;
  std::vector<double> tiers;
  Imbalance imbalance;
};

class Allocator {
 public:
  Allocator(const TrialFrame& frame, const Design& design)
      : frame_(frame), checked_(validate_design(design, frame)) {
    const auto& d = checked_.design;
    if (uses_rerandomization(d.scheme)) {
      xr_ = frame.select_covariates(checked_.rerand_index);
      names_ = d.rerand_covariates;
    }
  }

  Proposal propose(Rng& rng) const {
    const auto& d = checked_.design;
    Proposal p;
    p.arms = uses_strata(d.scheme) ? permuted_block_assign(frame_.stratum_codes(), d.pi, d.block_size, rng)
                                   : simple_assign(frame_.n(), d.pi, rng);
    p.valid = both_arms(p.arms);
    if (p.valid && uses_strata(d.scheme) && d.statistic == StratifiedStatistic::dagger) {
      p.valid = both_arms_each_stratum(p.arms, frame_.stratum_codes());
    }
    return p;
  }

  Evaluation evaluate(const std::vector<int>& arms) const {
    const auto& d = checked_.design;
    Evaluation e;
    if (!uses_rerandomization(d.scheme)) {
      e.accepted = true;
      return e;
    }
    if (uses_strata(d.scheme)) {
      e.imbalance = imbalance_stratified(xr_, arms, frame_.stratum_codes());
      if (d.statistic == StratifiedStatistic::dagger) {
        e.imbalance.I = imbalance_stratified_dagger(xr_, arms, frame_.stratum_codes());
      }
    } else {
      e.imbalance = imbalance_simple(xr_, arms);
    }
    if (d.tiers.empty()) {
      e.distance = balance_distance(e.imbalance.I, weight_matrix(e.imbalance.V, d.distance), names_);
      e.accepted = e.distance < d.threshold;
      return e;
    }
    e.accepted = true;
    for (std::size_t b = 0; b < d.tiers.size(); ++b) {
      const auto& idx = checked_.tier_index[b];
      const auto m = static_cast<Eigen::Index>(idx.size());
      Eigen::VectorXd Ib(m);
      Eigen::MatrixXd Vb(m, m);
      std::vector<std::string> nb;
      for (Eigen::Index r = 0; r < m; ++r) {
        Ib[r] = e.imbalance.I[static_cast<Eigen::Index>(idx[r])];
        nb.push_back(names_[idx[r]]);
        for (Eigen::Index c = 0; c < m; ++c) {
          Vb(r, c) = e.imbalance.V(static_cast<Eigen::Index>(idx[r]), static_cast<Eigen::Index>(idx[c]));
        }
      }
      const double db = balance_distance(Ib, weight_matrix(Vb, d.tiers[b].distance), nb);
      e.tiers.push_back(db);
      if (!(db < d.tiers[b].threshold)) e.accepted = false;
    }
    return e;
  }

  const Design& design() const { return checked_.design; }

 private:
  const TrialFrame& frame_;
  CheckedDesign checked_;
  Eigen::MatrixXd xr_;
  std::vector<std::string> names_;
};

}  // namespace

Allocation rerandomize(const TrialFrame& frame, const Design& design, Rng& rng) {
  const Allocator alloc(frame, design);
  const auto& d = alloc.design();
  Allocation out;
  while (true) {
    if (out.attempts >= d.max_attempts) {
      throw NonTerminationError("no acceptable allocation after " + std::to_string(d.max_attempts) +
                                " attempts; increase the threshold t or max_attempts");
    }
    ++out.attempts;
    auto p = alloc.propose(rng);
    if (!p.valid) continue;
    auto e = alloc.evaluate(p.arms);
    if (!e.accepted) continue;
    out.arms = std::move(p.arms);
    if (uses_rerandomization(d.scheme)) {
      if (d.tiers.empty()) out.accepted_distance = e.distance;
      out.imbalance = std::move(e.imbalance.I);
      out.imbalance_variance = std::move(e.imbalance.V);
      out.tier_distances = std::move(e.tiers);
    }
    return out;
  }
}

Allocation rerandomize(const TrialFrame& frame, const Design& design, std::uint64_t seed) {
  auto rng = make_rng(seed);
  return rerandomize(frame, design, rng);
}

double acceptance_rate(const TrialFrame& frame, const Design& design, std::size_t proposals,
                       std::uint64_t seed) {
  if (proposals == 0) throw ValidationError("proposals must be positive");
  const Allocator alloc(frame, design);
  auto rng = make_rng(seed);
  std::size_t accepted = 0;
  for (std::size_t i = 0; i < proposals; ++i) {
    auto p = alloc.propose(rng);
    if (p.valid && alloc.evaluate(p.arms).accepted) ++accepted;
  }
  return static_cast<double>(accepted) / static_cast<double>(proposals);
}

}  // namespace rerand
