#include "rerand/data_model.hpp"

#include "rerand/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace rerand {

namespace {

void encode_labels(const std::vector<std::string>& labels, std::vector<int>& codes,
                   std::vector<std::string>& levels) {
  codes.clear();
  levels.clear();
  std::unordered_map<std::string, int> seen;
  codes.reserve(labels.size());
  for (const auto& l : labels) {
    auto [it, inserted] = seen.emplace(l, static_cast<int>(levels.size()));
    if (inserted) levels.push_back(l);
    codes.push_back(it->second);
  }
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
      was_quoted = true;
    } else if (c == ',') {
      out.push_back(was_quoted ? cur : trim(cur));
      cur.clear();
      was_quoted = false;
    } else {
      cur += c;
    }
  }
  out.push_back(was_quoted ? cur : trim(cur));
  return out;
}

std::string quote_label(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos && s == trim(s)) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

double parse_number(const std::string& cell, std::size_t row, const std::string& column) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw ParseError("row " + std::to_string(row) + ", column '" + column +
                     "': cannot parse '" + cell + "' as a finite number");
  }
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace

TrialFrame TrialFrame::from_columns(FrameColumns cols) {
  const auto n = static_cast<std::size_t>(cols.covariates.rows());
  if (static_cast<std::size_t>(cols.covariates.cols()) != cols.covariate_names.size()) {
    throw ValidationError("covariate matrix has " + std::to_string(cols.covariates.cols()) +
                          " columns but " + std::to_string(cols.covariate_names.size()) +
                          " names");
  }
  {
    std::set<std::string> uniq(cols.covariate_names.begin(), cols.covariate_names.end());
    if (uniq.size() != cols.covariate_names.size()) {
      throw ValidationError("duplicate covariate names");
    }
  }
  if (cols.outcome.size() == 0) cols.outcome = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  if (cols.observed.empty()) cols.observed.assign(n, 0);
  if (static_cast<std::size_t>(cols.outcome.size()) != n || cols.observed.size() != n) {
    throw ValidationError("outcome/observed length does not match covariate rows");
  }
  if (!cols.arms.empty() && cols.arms.size() != n) {
    throw ValidationError("arm vector length does not match covariate rows");
  }
  if (!cols.strata.empty() && cols.strata.size() != n) {
    throw ValidationError("stratum vector length does not match covariate rows");
  }
  if (!cols.clusters.empty() && cols.clusters.size() != n) {
    throw ValidationError("cluster vector length does not match covariate rows");
  }
  if (!cols.covariates.allFinite()) {
    for (Eigen::Index i = 0; i < cols.covariates.rows(); ++i) {
      if (!cols.covariates.row(i).allFinite()) {
        throw ValidationError("row " + std::to_string(i + 1) + ": non-finite covariate");
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = std::to_string(i + 1);
    if (cols.observed[i] != 0 && cols.observed[i] != 1) {
      throw ValidationError("row " + row + ": observed indicator must be 0 or 1");
    }
    if (cols.observed[i] == 1 && !std::isfinite(cols.outcome[static_cast<Eigen::Index>(i)])) {
      throw ValidationError("row " + row + ": observed outcome is not finite");
    }
    if (cols.observed[i] == 0) cols.outcome[static_cast<Eigen::Index>(i)] = 0.0;
    if (!cols.arms.empty() && cols.arms[i] != 0 && cols.arms[i] != 1) {
      throw ValidationError("row " + row + ": arm must be 0 or 1, got " +
                            std::to_string(cols.arms[i]));
    }
    if (!cols.strata.empty() && cols.strata[i].empty()) {
      throw ValidationError("row " + row + ": empty stratum label");
    }
    if (!cols.clusters.empty() && cols.clusters[i].empty()) {
      throw ValidationError("row " + row + ": empty cluster id");
    }
  }

  TrialFrame f;
  f.names_ = std::move(cols.covariate_names);
  f.x_ = std::move(cols.covariates);
  f.y_ = std::move(cols.outcome);
  f.observed_ = std::move(cols.observed);
  f.arms_ = std::move(cols.arms);
  encode_labels(cols.strata, f.stratum_codes_, f.stratum_levels_);
  encode_labels(cols.clusters, f.cluster_codes_, f.cluster_levels_);
  return f;
}

TrialFrame TrialFrame::from_rows(const std::vector<UnitRecord>& rows,
                                 std::vector<std::string> covariate_names) {
  FrameColumns cols;
  const auto n = rows.size();
  const auto p = covariate_names.size();
  cols.covariate_names = std::move(covariate_names);
  cols.covariates.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  cols.outcome = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  cols.observed.resize(n);
  const bool any_arm = std::any_of(rows.begin(), rows.end(), [](auto& r) { return r.arm.has_value(); });
  const bool any_stratum =
      std::any_of(rows.begin(), rows.end(), [](auto& r) { return r.stratum.has_value(); });
  const bool any_cluster =
      std::any_of(rows.begin(), rows.end(), [](auto& r) { return r.cluster.has_value(); });
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = rows[i];
    const auto row = std::to_string(i + 1);
    if (r.covariates.size() != p) {
      throw ValidationError("row " + row + ": expected " + std::to_string(p) + " covariates");
    }
    for (std::size_t j = 0; j < p; ++j) {
      cols.covariates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.covariates[j];
    }
    if ((r.observed == 1) != r.outcome.has_value()) {
      throw ValidationError("row " + row + ": observed indicator disagrees with outcome presence");
    }
    cols.observed[i] = r.observed;
    if (r.outcome) cols.outcome[static_cast<Eigen::Index>(i)] = *r.outcome;
    if (any_arm) {
      if (!r.arm) throw ValidationError("row " + row + ": missing arm");
      cols.arms.push_back(*r.arm);
    }
    if (any_stratum) {
      if (!r.stratum) throw ValidationError("row " + row + ": missing stratum");
      cols.strata.push_back(*r.stratum);
    }
    if (any_cluster) {
      if (!r.cluster) throw ValidationError("row " + row + ": missing cluster");
      cols.clusters.push_back(*r.cluster);
    }
  }
  return from_columns(std::move(cols));
}

std::size_t TrialFrame::covariate_index(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ValidationError("unknown covariate '" + name + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

Eigen::MatrixXd TrialFrame::select_covariates(const std::vector<std::size_t>& idx) const {
  Eigen::MatrixXd out(x_.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = x_.col(static_cast<Eigen::Index>(idx[j]));
  }
  return out;
}

std::size_t TrialFrame::observed_count() const {
  return static_cast<std::size_t>(std::count(observed_.begin(), observed_.end(), 1));
}

UnitRecord TrialFrame::row(std::size_t i) const {
  const auto ii = static_cast<Eigen::Index>(i);
  UnitRecord r;
  r.observed = observed_[i];
  if (observed_[i]) r.outcome = y_[ii];
  if (has_arms()) r.arm = arms_[i];
  r.covariates.resize(p());
  for (std::size_t j = 0; j < p(); ++j) r.covariates[j] = x_(ii, static_cast<Eigen::Index>(j));
  if (has_strata()) r.stratum = stratum_levels_[static_cast<std::size_t>(stratum_codes_[i])];
  if (has_clusters()) r.cluster = cluster_levels_[static_cast<std::size_t>(cluster_codes_[i])];
  return r;
}

FrameColumns TrialFrame::to_columns() const {
  FrameColumns c;
  c.covariate_names = names_;
  c.covariates = x_;
  c.outcome = y_;
  c.observed = observed_;
  c.arms = arms_;
  if (has_strata()) {
    for (int code : stratum_codes_) c.strata.push_back(stratum_levels_[static_cast<std::size_t>(code)]);
  }
  if (has_clusters()) {
    for (int code : cluster_codes_) c.clusters.push_back(cluster_levels_[static_cast<std::size_t>(code)]);
  }
  return c;
}

TrialFrame TrialFrame::with_arms(std::vector<int> arms) const {
  auto c = to_columns();
  c.arms = std::move(arms);
  return from_columns(std::move(c));
}

TrialFrame TrialFrame::with_outcomes(Eigen::VectorXd outcome, std::vector<int> observed) const {
  auto c = to_columns();
  c.outcome = std::move(outcome);
  c.observed = std::move(observed);
  return from_columns(std::move(c));
}

TrialFrame parse_csv(const std::string& text, const CsvSchema& schema) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) {
      header = split_csv_line(line);
      break;
    }
  }
  if (header.empty()) throw ParseError("empty CSV: no header row");
  if (!header.empty() && header[0].size() >= 3 && header[0].compare(0, 3, "\xEF\xBB\xBF") == 0) {
    header[0] = header[0].substr(3);
  }
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (std::find(header.begin(), header.begin() + static_cast<std::ptrdiff_t>(j), header[j]) !=
        header.begin() + static_cast<std::ptrdiff_t>(j)) {
      throw ParseError("duplicate CSV column '" + header[j] + "'");
    }
  }

  auto find_col = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto c_outcome = find_col(schema.outcome);
  const auto c_observed = find_col(schema.observed);
  const auto c_arm = find_col(schema.arm);
  const auto c_stratum = find_col(schema.stratum);
  const auto c_cluster = find_col(schema.cluster);

  std::vector<std::size_t> cov_cols;
  std::vector<std::string> cov_names;
  if (schema.covariates) {
    for (const auto& name : *schema.covariates) {
      auto c = find_col(name);
      if (!c) throw ValidationError("covariate column '" + name + "' not found in header");
      cov_cols.push_back(*c);
      cov_names.push_back(name);
    }
  } else {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j == c_outcome || j == c_observed || j == c_arm || j == c_stratum || j == c_cluster) {
        continue;
      }
      cov_cols.push_back(j);
      cov_names.push_back(header[j]);
    }
  }

  std::vector<std::vector<std::string>> cells;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ParseError("row " + std::to_string(cells.size() + 1) + ": expected " +
                       std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    cells.push_back(std::move(fields));
  }

  const auto n = cells.size();
  FrameColumns cols;
  cols.covariate_names = cov_names;
  cols.covariates.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cov_cols.size()));
  cols.outcome = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  cols.observed.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = cells[i];
    const std::size_t row = i + 1;
    for (std::size_t j = 0; j < cov_cols.size(); ++j) {
      cols.covariates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          parse_number(r[cov_cols[j]], row, header[cov_cols[j]]);
    }
    bool has_value = false;
    if (c_outcome && !r[*c_outcome].empty()) {
      cols.outcome[static_cast<Eigen::Index>(i)] = parse_number(r[*c_outcome], row, schema.outcome);
      has_value = true;
    }
    int obs = has_value ? 1 : 0;
    if (c_observed) {
      const double v = parse_number(r[*c_observed], row, schema.observed);
      if (v != 0.0 && v != 1.0) {
        throw ValidationError("row " + std::to_string(row) + ": observed must be 0 or 1");
      }
      if ((v == 1.0) != has_value) {
        throw ValidationError("row " + std::to_string(row) +
                              ": observed indicator disagrees with outcome cell");
      }
      obs = static_cast<int>(v);
    }
    cols.observed[i] = obs;
    if (c_arm) {
      const double v = parse_number(r[*c_arm], row, schema.arm);
      if (v != 0.0 && v != 1.0) {
        throw ValidationError("row " + std::to_string(row) + ": arm must be 0 or 1, got " +
                              r[*c_arm]);
      }
      cols.arms.push_back(static_cast<int>(v));
    }
    if (c_stratum) cols.strata.push_back(r[*c_stratum]);
    if (c_cluster) cols.clusters.push_back(r[*c_cluster]);
  }
  return TrialFrame::from_columns(std::move(cols));
}

TrialFrame load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open data file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema);
}

std::string to_csv(const TrialFrame& frame) {
  std::ostringstream out;
  std::vector<std::string> head;
  head.push_back("outcome");
  head.push_back("observed");
  if (frame.has_arms()) head.push_back("arm");
  if (frame.has_strata()) head.push_back("stratum");
  if (frame.has_clusters()) head.push_back("cluster");
  for (const auto& nm : frame.covariate_names()) head.push_back(quote_label(nm));
  for (std::size_t j = 0; j < head.size(); ++j) out << (j ? "," : "") << head[j];
  out << '\n';
  const auto& x = frame.covariates();
  for (std::size_t i = 0; i < frame.n(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    if (frame.observed()[i]) out << format_double(frame.outcome()[ii]);
    out << ',' << frame.observed()[i];
    if (frame.has_arms()) out << ',' << frame.arms()[i];
    if (frame.has_strata()) {
      out << ',' << quote_label(frame.stratum_levels()[static_cast<std::size_t>(frame.stratum_codes()[i])]);
    }
    if (frame.has_clusters()) {
      out << ',' << quote_label(frame.cluster_levels()[static_cast<std::size_t>(frame.cluster_codes()[i])]);
    }
    for (Eigen::Index j = 0; j < x.cols(); ++j) out << ',' << format_double(x(ii, j));
    out << '\n';
  }
  return out.str();
}

void write_csv(const TrialFrame& frame, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << to_csv(frame);
  if (!out) throw DataError("failed writing '" + path + "'");
}

bool uses_rerandomization(Scheme s) {
  return s == Scheme::rerandomized || s == Scheme::stratified_rerandomized;
}

bool uses_strata(Scheme s) {
  return s == Scheme::stratified || s == Scheme::stratified_rerandomized;
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::simple: return "simple";
    case Scheme::stratified: return "stratified";
    case Scheme::rerandomized: return "rerandomized";
    case Scheme::stratified_rerandomized: return "stratified_rerandomized";
  }
  return "simple";
}

Scheme scheme_from_string(const std::string& s) {
  if (s == "simple") return Scheme::simple;
  if (s == "stratified") return Scheme::stratified;
  if (s == "rerandomized") return Scheme::rerandomized;
  if (s == "stratified_rerandomized") return Scheme::stratified_rerandomized;
  throw ParseError("unknown randomization scheme '" + s + "'");
}

void validate_design_parameters(const Design& d) {
  if (!(d.pi > 0.0 && d.pi < 1.0)) throw ValidationError("pi must lie in (0,1)");
  if (!(d.threshold > 0.0)) throw ValidationError("threshold t must be positive");
  if (d.max_attempts == 0) throw ValidationError("max_attempts must be positive");
  if (uses_strata(d.scheme)) {
    if (d.block_size < 2) throw ValidationError("block size k must be at least 2");
    const double pk = d.pi * d.block_size;
    if (std::abs(pk - std::round(pk)) > 1e-9) {
      throw ValidationError("pi*k not integer (pi=" + std::to_string(d.pi) +
                            ", k=" + std::to_string(d.block_size) + ")");
    }
  }
  if (uses_rerandomization(d.scheme) && d.rerand_covariates.empty()) {
    throw ValidationError("rerandomized scheme requires at least one rerandomization covariate");
  }
  for (const auto& t : d.tiers) {
    if (t.covariates.empty()) throw ValidationError("tier with empty covariate set");
    if (!(t.threshold > 0.0)) throw ValidationError("tier threshold must be positive");
    for (const auto& c : t.covariates) {
      if (std::find(d.rerand_covariates.begin(), d.rerand_covariates.end(), c) ==
          d.rerand_covariates.end()) {
        throw ValidationError("tier covariate '" + c + "' is not a rerandomization covariate");
      }
    }
  }
}

CheckedDesign validate_design(const Design& design, const TrialFrame& frame) {
  validate_design_parameters(design);
  if (uses_strata(design.scheme) && !frame.has_strata()) {
    throw ValidationError("scheme '" + to_string(design.scheme) + "' requires strata in the data");
  }
  CheckedDesign out;
  out.design = design;
  for (const auto& c : design.rerand_covariates) out.rerand_index.push_back(frame.covariate_index(c));
  for (const auto& t : design.tiers) {
    std::vector<std::size_t> pos;
    for (const auto& c : t.covariates) {
      auto it = std::find(design.rerand_covariates.begin(), design.rerand_covariates.end(), c);
      pos.push_back(static_cast<std::size_t>(it - design.rerand_covariates.begin()));
    }
    out.tier_index.push_back(std::move(pos));
  }
  return out;
}

double EstimandSpec::apply(double mu1, double mu0) const {
  if (contrast == Contrast::difference) return mu1 - mu0;
  if (mu0 == 0.0) throw NumericError("ratio estimand undefined: control mean is zero");
  return mu1 / mu0;
}

std::pair<double, double> EstimandSpec::gradient(double mu1, double mu0) const {
  if (contrast == Contrast::difference) return {1.0, -1.0};
  if (mu0 == 0.0) throw NumericError("ratio estimand undefined: control mean is zero");
  return {1.0 / mu0, -mu1 / (mu0 * mu0)};
}

std::string to_string(Contrast c) { return c == Contrast::difference ? "difference" : "ratio"; }

Contrast contrast_from_string(const std::string& s) {
  if (s == "difference") return Contrast::difference;
  if (s == "ratio") return Contrast::ratio;
  throw ParseError("unknown estimand '" + s + "' (expected difference or ratio)");
}

UnitView unit_view(const TrialFrame& frame, const EstimateResult& result) {
  UnitView v;
  if (result.unit_rows.empty()) {
    v.arms = frame.arms();
    v.strata = frame.stratum_codes();
    v.covariates = frame.covariates();
    return v;
  }
  const auto m = result.unit_rows.size();
  v.covariates = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), frame.covariates().cols());
  for (std::size_t u = 0; u < m; ++u) {
    const auto& rows = result.unit_rows[u];
    const auto first = rows.front();
    v.arms.push_back(frame.arms()[first]);
    if (frame.has_strata()) v.strata.push_back(frame.stratum_codes()[first]);
    for (auto r : rows) v.covariates.row(static_cast<Eigen::Index>(u)) += frame.covariates().row(static_cast<Eigen::Index>(r));
    v.covariates.row(static_cast<Eigen::Index>(u)) /= static_cast<double>(rows.size());
  }
  return v;
}

}  // namespace rerand
