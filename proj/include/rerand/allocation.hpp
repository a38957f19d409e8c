#pragma once

#include "rerand/data_model.hpp"
#include "rerand/random.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rerand {

std::vector<int> simple_assign(std::size_t n, double pi, Rng& rng);
std::vector<int> simple_assign(std::size_t n, double pi, std::uint64_t seed);

// Permuted blocks of size k with pi*k treated, run separately within each
// stratum in row order. A block left unfinished at the end of a stratum is
// simply truncated.
std::vector<int> permuted_block_assign(const std::vector<int>& strata, double pi, int k, Rng& rng);
std::vector<int> permuted_block_assign(const std::vector<int>& strata, double pi, int k,
                                       std::uint64_t seed);

struct Imbalance {
  Eigen::VectorXd I;
  Eigen::MatrixXd V;  // estimated Var(I)
};

Imbalance imbalance_simple(const Eigen::MatrixXd& xr, const std::vector<int>& arms);
Imbalance imbalance_stratified(const Eigen::MatrixXd& xr, const std::vector<int>& arms,
                               const std::vector<int>& strata);
// Stratum-weighted sum of within-stratum mean differences.
Eigen::VectorXd imbalance_stratified_dagger(const Eigen::MatrixXd& xr, const std::vector<int>& arms,
                                            const std::vector<int>& strata);

// I' W^-1 I through a Cholesky factor. `names` label the covariates in error
// messages when W is numerically singular.
double balance_distance(const Eigen::VectorXd& I, const Eigen::MatrixXd& W,
                        const std::vector<std::string>& names = {});

// Realised weight matrix for a distance: W = V for Mahalanobis, diag(V) for
// the general rule.
Eigen::MatrixXd weight_matrix(const Eigen::MatrixXd& V, const DistanceSpec& spec);

// P(chi2_q < t); t = +inf gives 1.
double chi_square_cdf(double q, double t);

struct Allocation {
  std::vector<int> arms;
  std::uint64_t attempts = 0;
  std::optional<double> accepted_distance;
  Eigen::VectorXd imbalance;
  Eigen::MatrixXd imbalance_variance;
  std::vector<double> tier_distances;
};

// Draws proposals from one seeded stream until the balance criterion holds.
// Proposals with an empty arm are rejected and counted.
Allocation rerandomize(const TrialFrame& frame, const Design& design, std::uint64_t seed);
Allocation rerandomize(const TrialFrame& frame, const Design& design, Rng& rng);

// Fraction of `proposals` fresh base proposals that meet the criterion.
double acceptance_rate(const TrialFrame& frame, const Design& design, std::size_t proposals,
                       std::uint64_t seed);

}  // namespace rerand
