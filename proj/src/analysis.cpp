#include "rerand/analysis.hpp"

#include "rerand/allocation.hpp"
#include "rerand/errors.hpp"

#include <cstdio>
#include <sstream>

namespace rerand {

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::unadjusted: return "unadjusted";
    case EstimatorKind::ancova: return "ancova";
    case EstimatorKind::glm2: return "glm2";
    case EstimatorKind::drwls: return "drwls";
    case EstimatorKind::mixed: return "mixed";
    case EstimatorKind::dml: return "dml";
  }
  return "unadjusted";
}

EstimatorKind estimator_kind_from_string(const std::string& s) {
  for (auto k : {EstimatorKind::unadjusted, EstimatorKind::ancova, EstimatorKind::glm2, EstimatorKind::drwls,
                 EstimatorKind::mixed, EstimatorKind::dml}) {
    if (s == to_string(k)) return k;
  }
  throw ParseError("unknown estimator '" + s + "' (expected unadjusted, ancova, glm2, drwls, mixed or dml)");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

EstimateResult run_estimator(const EstimatorSpec& spec, const TrialFrame& frame, const EstimandSpec& estimand,
                             double pi, std::uint64_t seed) {
  switch (spec.kind) {
    case EstimatorKind::unadjusted: return estimate_unadjusted(frame, estimand);
    case EstimatorKind::ancova: return estimate_ancova(frame, spec.adjustment, estimand);
    case EstimatorKind::glm2: return estimate_gcomp_logistic(frame, spec.adjustment, estimand);
    case EstimatorKind::mixed: return estimate_mixed_ancova(frame, spec.adjustment, estimand);
    case EstimatorKind::drwls: {
      DrwlsOptions o;
      o.outcome = spec.adjustment;
      o.missing_covariates = spec.missing_covariates;
      o.link = spec.link;
      o.clip_floor = spec.clip_floor;
      return estimate_drwls(frame, o, estimand);
    }
    case EstimatorKind::dml: {
      DmlOptions o;
      o.covariates = spec.adjustment.covariates;
      o.outcome_learner = spec.outcome_learner;
      o.missingness_learner = spec.missingness_learner;
      o.K = spec.folds;
      o.mode = spec.fold_mode;
      o.pi = pi;
      o.clip_floor = spec.clip_floor;
      return estimate_dml(frame, o, estimand, seed);
    }
  }
  throw ValidationError("unknown estimator kind");
}

Analysis analyze(const TrialFrame& frame, const Design& design, const EstimatorSpec& spec,
                 const EstimandSpec& estimand, double alpha, std::size_t draws, std::uint64_t seed) {
  validate_design_parameters(design);
  Analysis a;
  a.estimate = run_estimator(spec, frame, estimand, design.pi, derive_seed(seed, "estimator"));
  const auto uv = unit_view(frame, a.estimate);
  const auto& f = a.estimate.if_values;
  a.units = a.estimate.units();
  a.V_hat = variance_simple(f);
  a.V_scheme = a.V_hat;
  a.normal = normal_interval(a.estimate.delta_hat, a.V_hat, a.units, alpha);

  const bool strat = uses_strata(design.scheme);
  if (strat) {
    if (uv.strata.empty()) throw ValidationError("stratified scheme requires strata in the data");
    const auto sv = variance_stratified(f, uv.arms, uv.strata, design.pi);
    a.V_scheme = sv.value;
    if (sv.floored) a.notes.push_back("stratified variance floored at 0");
  }
  if (!uses_rerandomization(design.scheme)) {
    a.scheme_ci = normal_interval(a.estimate.delta_hat, a.V_scheme, a.units, alpha);
    return a;
  }
  std::vector<std::size_t> idx;
  for (const auto& c : design.rerand_covariates) idx.push_back(frame.covariate_index(c));
  Eigen::MatrixXd xr(uv.covariates.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    xr.col(static_cast<Eigen::Index>(j)) = uv.covariates.col(static_cast<Eigen::Index>(idx[j]));
  }
  a.r2 = strat ? rsquared_stratified(f, uv.arms, uv.strata, xr, design.pi) : rsquared_simple(f, uv.arms, xr, design.pi);
  if (a.r2->clamped) a.notes.push_back("R2 clamped to [0,1]");
  if (!design.tiers.empty()) {
    a.notes.push_back("interval under tiered acceptance is not available");
    return a;
  }
  LimitSpec ls;
  ls.V = a.V_scheme;
  ls.R2 = a.r2->value;
  ls.q = static_cast<int>(idx.size());
  ls.t = design.threshold;
  ls.distance = design.distance;
  ls.stratified = strat;
  if (design.distance.kind == DistanceKind::general) {
    ls.projection = Projection{a.r2->C, a.r2->VI, weight_matrix(a.r2->VI, design.distance)};
  }
  a.scheme_ci = confidence_interval(a.estimate.delta_hat, ls, a.units, alpha, draws, derive_seed(seed, "interval"));
  return a;
}

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

DistanceSpec distance_from_string(const std::string& s) {
  DistanceSpec d;
  if (s == "mahalanobis") {
    d.kind = DistanceKind::mahalanobis;
  } else if (s == "general" || s == "diagonal") {
    d.kind = DistanceKind::general;
  } else {
    throw ParseError("unknown distance '" + s + "' (expected mahalanobis or general)");
  }
  return d;
}

std::string to_string(const DistanceSpec& d) { return d.kind == DistanceKind::mahalanobis ? "mahalanobis" : "general"; }

}  // namespace

Design design_from_config(const KeyValueConfig& cfg) {
  Design d;
  d.pi = cfg.get_double("pi", d.pi);
  d.scheme = scheme_from_string(cfg.get_string("scheme", to_string(d.scheme)));
  d.rerand_covariates = cfg.get_list("rerand_covariates");
  d.threshold = cfg.get_double("threshold", d.threshold);
  d.distance = distance_from_string(cfg.get_string("distance", "mahalanobis"));
  d.block_size = static_cast<int>(cfg.get_int("block_size", d.block_size));
  d.max_attempts = cfg.get_u64("max_attempts", d.max_attempts);
  const auto stat = cfg.get_string("statistic", "overall");
  if (stat == "overall") {
    d.statistic = StratifiedStatistic::overall;
  } else if (stat == "dagger") {
    d.statistic = StratifiedStatistic::dagger;
  } else {
    throw ParseError("unknown statistic '" + stat + "' (expected overall or dagger)");
  }
  const auto tiers = cfg.get_int("tiers", 0);
  for (long long b = 1; b <= tiers; ++b) {
    const auto p = "tier." + std::to_string(b) + ".";
    Tier t;
    t.covariates = cfg.get_list(p + "covariates");
    t.threshold = cfg.get_double(p + "threshold", kInf);
    t.distance = distance_from_string(cfg.get_string(p + "distance", "mahalanobis"));
    d.tiers.push_back(std::move(t));
  }
  validate_design_parameters(d);
  return d;
}

void design_to_config(const Design& d, KeyValueConfig& cfg) {
  cfg.set("pi", fmt(d.pi));
  cfg.set("scheme", to_string(d.scheme));
  cfg.set("rerand_covariates", join(d.rerand_covariates));
  cfg.set("threshold", std::isinf(d.threshold) ? "inf" : fmt(d.threshold));
  cfg.set("distance", to_string(d.distance));
  cfg.set("block_size", std::to_string(d.block_size));
  cfg.set("max_attempts", std::to_string(d.max_attempts));
  cfg.set("statistic", d.statistic == StratifiedStatistic::overall ? "overall" : "dagger");
  cfg.set("tiers", std::to_string(d.tiers.size()));
  for (std::size_t b = 0; b < d.tiers.size(); ++b) {
    const auto p = "tier." + std::to_string(b + 1) + ".";
    cfg.set(p + "covariates", join(d.tiers[b].covariates));
    cfg.set(p + "threshold", std::isinf(d.tiers[b].threshold) ? "inf" : fmt(d.tiers[b].threshold));
    cfg.set(p + "distance", to_string(d.tiers[b].distance));
  }
}

EstimatorSpec estimator_from_config(const KeyValueConfig& cfg, const std::string& name, const std::string& prefix) {
  EstimatorSpec e;
  e.name = name;
  e.kind = estimator_kind_from_string(cfg.get_string(prefix + "kind", name));
  e.adjustment.covariates = cfg.get_list(prefix + "covariates");
  e.adjustment.interactions = cfg.get_bool(prefix + "interactions", false);
  e.adjustment.interaction_covariates = cfg.get_list(prefix + "interaction_covariates");
  e.missing_covariates = cfg.get_list(prefix + "missing_covariates", e.adjustment.covariates);
  e.link = link_from_string(cfg.get_string(prefix + "link", "identity"));
  e.clip_floor = cfg.get_double(prefix + "clip_floor", e.clip_floor);
  e.outcome_learner = learner_from_string(cfg.get_string(prefix + "outcome_learner", "stumps:200:0.1"));
  const auto ml = cfg.get_string(prefix + "missingness_learner", "glm");
  if (ml == "none") {
    e.missingness_learner.reset();
  } else {
    e.missingness_learner = learner_from_string(ml);
  }
  e.folds = static_cast<int>(cfg.get_int(prefix + "folds", e.folds));
  e.fold_mode = fold_mode_from_string(cfg.get_string(prefix + "fold_mode", "plain"));
  return e;
}

void estimator_to_config(const EstimatorSpec& e, const std::string& prefix, KeyValueConfig& cfg) {
  cfg.set(prefix + "kind", to_string(e.kind));
  cfg.set(prefix + "covariates", join(e.adjustment.covariates));
  cfg.set(prefix + "interactions", e.adjustment.interactions ? "true" : "false");
  cfg.set(prefix + "interaction_covariates", join(e.adjustment.interaction_covariates));
  if (e.kind == EstimatorKind::drwls) {
    cfg.set(prefix + "missing_covariates", join(e.missing_covariates));
    cfg.set(prefix + "link", to_string(e.link));
  }
  if (e.kind == EstimatorKind::drwls || e.kind == EstimatorKind::dml) cfg.set(prefix + "clip_floor", fmt(e.clip_floor));
  if (e.kind == EstimatorKind::dml) {
    cfg.set(prefix + "outcome_learner", to_string(e.outcome_learner));
    cfg.set(prefix + "missingness_learner", e.missingness_learner ? to_string(*e.missingness_learner) : "none");
    cfg.set(prefix + "folds", std::to_string(e.folds));
    cfg.set(prefix + "fold_mode", to_string(e.fold_mode));
  }
}

}  // namespace rerand
