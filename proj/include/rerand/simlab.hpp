#pragma once

#include "rerand/analysis.hpp"
#include "rerand/dgp.hpp"
#include "rerand/keyvalue.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rerand {

struct SimConfig {
  DgpSpec dgp;
  Design design;
  EstimandSpec estimand;
  std::vector<EstimatorSpec> estimators;
  std::size_t replicates = 1000;
  double alpha = 0.05;
  std::uint64_t master_seed = 1;
  int workers = 1;
  std::size_t ci_draws = 10000;
  // Known truth; estimated by Monte Carlo when absent.
  std::optional<double> truth;
  double truth_mcse = 0.0;
  std::size_t truth_draws = 10'000'000;
};

SimConfig sim_config_from_keyvalue(const KeyValueConfig& cfg);
// Canonical description (workers excluded: results do not depend on it).
KeyValueConfig sim_config_to_keyvalue(const SimConfig& c);
std::uint64_t config_hash(const SimConfig& c);

struct ReplicateRecord {
  bool ok = false;
  std::string error;
  double delta_hat = 0.0;
  double se = 0.0;  // sqrt(V_hat / n)
  double r2 = -1.0; // -1 when not computed
  bool cover_normal = false;
  bool cover_true = false;
  bool has_true = false;
};

struct EstimatorSummary {
  std::string name;
  std::string kind;
  std::size_t replicates = 0;  // successful
  std::size_t failures = 0;
  double bias = 0.0;
  std::optional<double> ese;
  double ase_star = 0.0;
  double cp_normal = 0.0;
  std::optional<double> cp_true;
  std::optional<double> mean_r2;
  std::optional<double> median_r2;
  std::optional<double> mcse_bias;
  std::vector<ReplicateRecord> records;
};

struct SimReport {
  std::uint64_t config_hash = 0;
  KeyValueConfig config;
  double truth = 0.0;
  double truth_mcse = 0.0;
  std::string truth_source;
  std::size_t replicates = 0;
  double mean_attempts = 0.0;
  std::vector<EstimatorSummary> rows;
};

// Runs replicates on `config.workers` threads. Replicate r depends only on
// (master_seed, r). Throws NumericError when an estimator fails in more than
// 2% of replicates.
SimReport run_simulation(const SimConfig& config);

std::string report_json(const SimReport& report);
std::string report_csv(const SimReport& report);

}  // namespace rerand
