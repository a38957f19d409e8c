#pragma once

#include "rerand/data_model.hpp"
#include "rerand/dml.hpp"
#include "rerand/estimators.hpp"
#include "rerand/inference.hpp"
#include "rerand/keyvalue.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rerand {

enum class EstimatorKind { unadjusted, ancova, glm2, drwls, mixed, dml };

std::string to_string(EstimatorKind k);
EstimatorKind estimator_kind_from_string(const std::string& s);

struct EstimatorSpec {
  std::string name;
  EstimatorKind kind = EstimatorKind::unadjusted;
  Adjustment adjustment;
  // drwls
  std::vector<std::string> missing_covariates;
  Link link = Link::identity;
  double clip_floor = 0.01;
  // dml
  LearnerSpec outcome_learner{LearnerKind::stump_ensemble};
  std::optional<LearnerSpec> missingness_learner = LearnerSpec{};
  int folds = 5;
  FoldMode fold_mode = FoldMode::plain;
};

EstimateResult run_estimator(const EstimatorSpec& spec, const TrialFrame& frame, const EstimandSpec& estimand,
                             double pi, std::uint64_t seed);

// Estimate plus the scheme-appropriate variance, R2 and both intervals.
struct Analysis {
  EstimateResult estimate;
  std::size_t units = 0;
  double V_hat = 0.0;                // simple-randomization sandwich variance
  double V_scheme = 0.0;             // V-tilde under stratified schemes, else V_hat
  std::optional<RSquared> r2;        // absent without rerandomization covariates
  CIResult normal;                   // from V_hat
  std::optional<CIResult> scheme_ci; // absent when tiers drive acceptance
  std::vector<std::string> notes;
};

Analysis analyze(const TrialFrame& frame, const Design& design, const EstimatorSpec& spec,
                 const EstimandSpec& estimand, double alpha, std::size_t draws, std::uint64_t seed);

// `prefix` + key lookups, e.g. "estimator.ancova." or "" for CLI flags.
EstimatorSpec estimator_from_config(const KeyValueConfig& cfg, const std::string& name, const std::string& prefix);
Design design_from_config(const KeyValueConfig& cfg);
// Canonical key/value lines for a design or estimator, used for hashing.
void design_to_config(const Design& d, KeyValueConfig& cfg);
void estimator_to_config(const EstimatorSpec& e, const std::string& prefix, KeyValueConfig& cfg);

std::string hex64(std::uint64_t v);

}  // namespace rerand
