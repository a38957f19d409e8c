#pragma once

#include "rerand/data_model.hpp"
#include "rerand/learners.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rerand {

enum class FoldMode { plain, stratum_arm };

std::string to_string(FoldMode m);
FoldMode fold_mode_from_string(const std::string& s);

struct FoldPlan {
  FoldMode mode = FoldMode::plain;
  int K = 5;
  std::vector<int> assignment;  // unit -> fold
};

// plain: a seeded permutation dealt round-robin into K folds.
// stratum_arm: the same within every (arm, stratum) cell; each cell needs at
// least K units.
FoldPlan make_folds(const TrialFrame& frame, int K, FoldMode mode, std::uint64_t seed);

// One nuisance fit: which rows trained it and which rows it predicted.
struct FitRecord {
  int arm = 0;
  int fold = 0;
  bool missingness = false;
  std::vector<std::size_t> train;
  std::vector<std::size_t> eval;
};

struct DmlOptions {
  std::vector<std::string> covariates;  // learner inputs; "stratum" expands to dummies
  LearnerSpec outcome_learner{LearnerKind::stump_ensemble};
  // Required when some outcomes are missing; otherwise kappa = 1.
  std::optional<LearnerSpec> missingness_learner = LearnerSpec{};
  int K = 5;
  FoldMode mode = FoldMode::plain;
  double pi = 0.5;  // design allocation probability
  double clip_floor = 0.01;
  std::vector<FitRecord>* trace = nullptr;
};

EstimateResult estimate_dml(const TrialFrame& frame, const DmlOptions& opts, const EstimandSpec& estimand,
                            std::uint64_t seed);

}  // namespace rerand
