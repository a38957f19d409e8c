#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rerand {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// One row of a trial dataset, as seen by callers.
struct UnitRecord {
  std::optional<double> outcome;
  int observed = 0;
  std::optional<int> arm;
  std::vector<double> covariates;
  std::optional<std::string> stratum;
  std::optional<std::string> cluster;
};

// Column-oriented input for TrialFrame::from_columns. Empty strata/clusters
// vectors mean the frame has none; an empty arms vector means not yet
// allocated.
struct FrameColumns {
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;  // n x p
  Eigen::VectorXd outcome;     // value ignored where observed == 0
  std::vector<int> observed;
  std::vector<int> arms;
  std::vector<std::string> strata;
  std::vector<std::string> clusters;
};

// Immutable trial dataset. Covariates are held column-major; strata and
// clusters are kept as labels plus dense integer codes (first-seen order).
class TrialFrame {
 public:
  TrialFrame() = default;

  static TrialFrame from_columns(FrameColumns cols);
  static TrialFrame from_rows(const std::vector<UnitRecord>& rows,
                              std::vector<std::string> covariate_names);

  std::size_t n() const { return static_cast<std::size_t>(x_.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(x_.cols()); }

  const std::vector<std::string>& covariate_names() const { return names_; }
  const Eigen::MatrixXd& covariates() const { return x_; }
  // Throws ValidationError for unknown names.
  std::size_t covariate_index(const std::string& name) const;
  Eigen::MatrixXd select_covariates(const std::vector<std::size_t>& idx) const;

  // Outcome vector with zeros where missing.
  const Eigen::VectorXd& outcome() const { return y_; }
  const std::vector<int>& observed() const { return observed_; }
  std::size_t observed_count() const;

  bool has_arms() const { return !arms_.empty(); }
  const std::vector<int>& arms() const { return arms_; }

  bool has_strata() const { return !stratum_codes_.empty(); }
  const std::vector<int>& stratum_codes() const { return stratum_codes_; }
  const std::vector<std::string>& stratum_levels() const { return stratum_levels_; }

  bool has_clusters() const { return !cluster_codes_.empty(); }
  const std::vector<int>& cluster_codes() const { return cluster_codes_; }
  const std::vector<std::string>& cluster_levels() const { return cluster_levels_; }

  UnitRecord row(std::size_t i) const;

  TrialFrame with_arms(std::vector<int> arms) const;
  // Replaces outcomes and missingness (used when revealing simulated data).
  TrialFrame with_outcomes(Eigen::VectorXd outcome, std::vector<int> observed) const;

  FrameColumns to_columns() const;

 private:
  std::vector<std::string> names_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  std::vector<int> observed_;
  std::vector<int> arms_;
  std::vector<int> stratum_codes_;
  std::vector<std::string> stratum_levels_;
  std::vector<int> cluster_codes_;
  std::vector<std::string> cluster_levels_;
};

// Column-name mapping for CSV ingestion. Columns not claimed by a role are
// covariates unless `covariates` lists them explicitly.
struct CsvSchema {
  std::string outcome = "outcome";
  std::string observed = "observed";
  std::string arm = "arm";
  std::string stratum = "stratum";
  std::string cluster = "cluster";
  std::optional<std::vector<std::string>> covariates;
};

TrialFrame load_csv(const std::string& path, const CsvSchema& schema = {});
TrialFrame parse_csv(const std::string& text, const CsvSchema& schema = {});
// Writes full-precision values; missing outcomes become empty cells and an
// explicit `observed` column is always emitted.
std::string to_csv(const TrialFrame& frame);
void write_csv(const TrialFrame& frame, const std::string& path);

enum class Scheme { simple, stratified, rerandomized, stratified_rerandomized };

enum class DistanceKind { mahalanobis, general };

// Weighting rule for the general distance I' H^-1 I.
enum class WeightRule { diagonal_variance };

struct DistanceSpec {
  DistanceKind kind = DistanceKind::mahalanobis;
  WeightRule weight = WeightRule::diagonal_variance;
};

// Which imbalance vector drives stratified rerandomization.
enum class StratifiedStatistic { overall, dagger };

struct Tier {
  std::vector<std::string> covariates;
  DistanceSpec distance;
  double threshold = kInf;
};

struct Design {
  double pi = 0.5;
  Scheme scheme = Scheme::simple;
  std::vector<std::string> rerand_covariates;
  double threshold = kInf;
  DistanceSpec distance;
  std::vector<Tier> tiers;
  int block_size = 2;
  std::uint64_t max_attempts = 1'000'000;
  StratifiedStatistic statistic = StratifiedStatistic::overall;
};

bool uses_rerandomization(Scheme s);
bool uses_strata(Scheme s);
std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& s);

// Design resolved against a frame: covariate names mapped to column indices.
struct CheckedDesign {
  Design design;
  std::vector<std::size_t> rerand_index;
  std::vector<std::vector<std::size_t>> tier_index;  // positions within rerand_index
};

CheckedDesign validate_design(const Design& design, const TrialFrame& frame);
// Frame-independent checks only (pi range, block size, thresholds).
void validate_design_parameters(const Design& design);

enum class Contrast { difference, ratio };

struct EstimandSpec {
  Contrast contrast = Contrast::difference;

  double apply(double mu1, double mu0) const;
  // (df/dmu1, df/dmu0)
  std::pair<double, double> gradient(double mu1, double mu0) const;
};

std::string to_string(Contrast c);
Contrast contrast_from_string(const std::string& s);

struct SolverDiagnostics {
  int iterations = 0;
  double residual_norm = 0.0;
  bool converged = true;
};

struct EstimateResult {
  double delta_hat = 0.0;
  std::pair<double, double> mu_hat{0.0, 0.0};
  Eigen::VectorXd theta_hat;
  Eigen::VectorXd if_values;
  SolverDiagnostics solver_diag;
  // Rows of the frame forming each analysis unit; empty when units are rows.
  std::vector<std::vector<std::size_t>> unit_rows;
  // Free-form counters (clipped propensities, dropped variance components).
  std::vector<std::pair<std::string, double>> diagnostics;

  std::size_t units() const { return static_cast<std::size_t>(if_values.size()); }
};

// Arms, strata and covariates at the analysis-unit level. For cluster
// estimators covariates are cluster means and arm/stratum come from the
// cluster's first row.
struct UnitView {
  std::vector<int> arms;
  std::vector<int> strata;  // empty when the frame has none
  Eigen::MatrixXd covariates;
};

UnitView unit_view(const TrialFrame& frame, const EstimateResult& result);

}  // namespace rerand
