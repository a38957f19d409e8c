#include "rerand/cli.hpp"

#include "rerand/allocation.hpp"
#include "rerand/analysis.hpp"
#include "rerand/errors.hpp"
#include "rerand/random.hpp"
#include "rerand/simlab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>

#ifndef RERAND_VERSION
#define RERAND_VERSION "unknown"
#endif
#ifndef RERAND_BUILD_TYPE
#define RERAND_BUILD_TYPE "unknown"
#endif

namespace rerand {

using nlohmann::ordered_json;

namespace {

const std::vector<std::string> kCommands{"allocate", "analyze", "ci", "simulate"};

ordered_json nullable(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

// JSON has no infinity; unbounded thresholds are written as the string "inf".
ordered_json finite_or_text(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write '" + path + "'");
  f << content;
  if (!f) throw DataError("failed writing '" + path + "'");
}

ordered_json config_json(const KeyValueConfig& cfg) {
  ordered_json j = ordered_json::object();
  for (const auto& [k, v] : cfg.entries()) j[k] = v;
  return j;
}

std::string suggest(const std::string& word, const std::vector<std::string>& candidates) {
  std::string best;
  auto best_d = std::numeric_limits<std::size_t>::max();
  for (const auto& c : candidates) {
    const auto d = levenshtein(word, c);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (best.empty() || best_d > std::max<std::size_t>(2, word.size() / 3)) return {};
  return best;
}

std::vector<std::string> long_flags(const CLI::App& app) {
  std::vector<std::string> out;
  for (const auto* opt : app.get_options()) {
    for (const auto& n : opt->get_lnames()) out.push_back("--" + n);
  }
  return out;
}

// Rejects leftover tokens, suggesting the nearest known flag.
void reject_extras(const CLI::App& app) {
  const auto extras = app.remaining();
  if (extras.empty()) return;
  const auto& tok = extras.front();
  std::string msg = app.get_name() + ": unexpected argument '" + tok + "'";
  if (tok.rfind("--", 0) == 0) {
    const auto flag = tok.substr(0, tok.find('='));
    const auto s = suggest(flag, long_flags(app));
    msg = app.get_name() + ": unknown flag '" + flag + "'";
    if (!s.empty()) msg += "; did you mean '" + s + "'?";
  }
  throw UsageError(msg);
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

struct RunLog {
  std::string command;
  std::uint64_t seed = 0;
  KeyValueConfig config;
  std::optional<std::uint64_t> hash;  // defaults to the hash of `config`
  std::vector<std::string> files;
};

struct AllocateArgs {
  std::string design, data, out;
  std::uint64_t seed = 1;
};

RunLog do_allocate(const AllocateArgs& a) {
  const auto cfg = KeyValueConfig::load(a.design);
  const auto design = design_from_config(cfg);
  const auto unknown = cfg.unused();
  if (!unknown.empty()) throw ValidationError("unknown design keys: " + join(unknown));
  const auto frame = load_csv(a.data);
  const auto alloc = rerandomize(frame, design, a.seed);

  RunLog log;
  log.command = "allocate";
  log.seed = a.seed;
  design_to_config(design, log.config);
  log.config.set("data", a.data);
  log.config.set("seed", std::to_string(a.seed));
  const auto hash = fnv1a64(log.config.canonical());

  ordered_json side;
  side["config_hash"] = hex64(hash);
  side["seed"] = a.seed;
  side["n"] = frame.n();
  side["treated"] = std::accumulate(alloc.arms.begin(), alloc.arms.end(), 0);
  side["attempts"] = alloc.attempts;
  side["accepted_distance"] = nullable(alloc.accepted_distance);
  side["threshold"] = finite_or_text(design.threshold);
  side["tier_distances"] = alloc.tier_distances;
  std::vector<double> imb(alloc.imbalance.data(), alloc.imbalance.data() + alloc.imbalance.size());
  side["imbalance"] = imb;
  side["rerand_covariates"] = design.rerand_covariates;

  write_file(a.out, to_csv(frame.with_arms(alloc.arms)));
  write_file(a.out + ".json", side.dump(2) + "\n");
  log.files = {a.out, a.out + ".json"};
  return log;
}

struct AnalyzeArgs {
  std::string estimator, estimand = "difference", data, design, out;
  std::string covariates, interaction_covariates, missing_covariates, link, learners, missingness_learner,
      fold_mode;
  std::optional<double> pi, clip_floor;
  std::optional<int> folds;
  bool interactions = false;
  double alpha = 0.05;
  std::size_t draws = 10000;
  std::uint64_t seed = 1;
};

RunLog do_analyze(const AnalyzeArgs& a, std::ostream& out) {
  KeyValueConfig ecfg;
  ecfg.set("kind", a.estimator);
  if (!a.covariates.empty()) ecfg.set("covariates", a.covariates);
  if (a.interactions) ecfg.set("interactions", "true");
  if (!a.interaction_covariates.empty()) ecfg.set("interaction_covariates", a.interaction_covariates);
  if (!a.missing_covariates.empty()) ecfg.set("missing_covariates", a.missing_covariates);
  if (!a.link.empty()) ecfg.set("link", a.link);
  if (!a.learners.empty()) ecfg.set("outcome_learner", a.learners);
  if (!a.missingness_learner.empty()) ecfg.set("missingness_learner", a.missingness_learner);
  if (!a.fold_mode.empty()) ecfg.set("fold_mode", a.fold_mode);
  if (a.folds) ecfg.set("folds", std::to_string(*a.folds));
  if (a.clip_floor) {
    std::ostringstream os;
    os.precision(17);
    os << *a.clip_floor;
    ecfg.set("clip_floor", os.str());
  }
  const auto spec = estimator_from_config(ecfg, a.estimator, "");

  Design design;
  if (!a.design.empty()) {
    if (a.pi) throw UsageError("analyze: --pi cannot be combined with --design (set pi in the design file)");
    const auto dcfg = KeyValueConfig::load(a.design);
    design = design_from_config(dcfg);
    const auto unknown = dcfg.unused();
    if (!unknown.empty()) throw ValidationError("unknown design keys: " + join(unknown));
  } else if (a.pi) {
    design.pi = *a.pi;
    validate_design_parameters(design);
  }
  EstimandSpec estimand{contrast_from_string(a.estimand)};
  if (!(a.alpha > 0 && a.alpha < 1)) throw UsageError("analyze: --alpha must lie in (0,1)");

  const auto frame = load_csv(a.data);
  if (!frame.has_arms()) throw ValidationError("data has no arm column");
  const auto res = analyze(frame, design, spec, estimand, a.alpha, a.draws, a.seed);

  RunLog log;
  log.command = "analyze";
  log.seed = a.seed;
  design_to_config(design, log.config);
  estimator_to_config(spec, "estimator.", log.config);
  log.config.set("estimand", to_string(estimand.contrast));
  log.config.set("data", a.data);
  log.config.set("alpha", std::to_string(a.alpha));
  log.config.set("draws", std::to_string(a.draws));
  log.config.set("seed", std::to_string(a.seed));

  auto ci_json = [](const CIResult& c) {
    ordered_json j;
    j["lower"] = c.lower;
    j["upper"] = c.upper;
    j["alpha"] = c.alpha;
    j["method"] = c.method;
    j["draws"] = c.draws;
    j["v_qt"] = c.v_qt;
    return j;
  };
  ordered_json j;
  j["config_hash"] = hex64(fnv1a64(log.config.canonical()));
  j["estimator"] = to_string(spec.kind);
  j["estimand"] = to_string(estimand.contrast);
  j["scheme"] = to_string(design.scheme);
  j["delta_hat"] = res.estimate.delta_hat;
  j["mu1_hat"] = res.estimate.mu_hat.first;
  j["mu0_hat"] = res.estimate.mu_hat.second;
  j["units"] = res.units;
  j["V_hat"] = res.V_hat;
  j["V_scheme"] = res.V_scheme;
  j["se"] = std::sqrt(res.V_hat / static_cast<double>(res.units));
  j["R2_hat"] = res.r2 ? ordered_json(res.r2->value) : ordered_json(nullptr);
  j["ci"] = res.scheme_ci ? ci_json(*res.scheme_ci) : ordered_json(nullptr);
  j["ci_normal"] = ci_json(res.normal);
  ordered_json diag = ordered_json::object();
  for (const auto& [k, v] : res.estimate.diagnostics) diag[k] = v;
  j["diagnostics"] = diag;
  j["solver"] = {{"iterations", res.estimate.solver_diag.iterations},
                 {"residual_norm", res.estimate.solver_diag.residual_norm},
                 {"converged", res.estimate.solver_diag.converged}};
  j["notes"] = res.notes;
  j["seed"] = a.seed;
  const auto text = j.dump(2) + "\n";
  if (a.out.empty()) {
    out << text;
  } else {
    write_file(a.out, text);
    log.files = {a.out};
  }
  return log;
}

struct CiArgs {
  double delta = 0, v = 1, r2 = 0, t = kInf, alpha = 0.05;
  int q = 1;
  std::size_t n = 0, draws = 100000;
  std::uint64_t seed = 1;
  std::string out;
};

RunLog do_ci(const CiArgs& a, std::ostream& out) {
  if (a.n == 0) throw UsageError("ci: --n must be positive");
  if (!(a.alpha > 0 && a.alpha < 1)) throw UsageError("ci: --alpha must lie in (0,1)");
  LimitSpec spec;
  spec.V = a.v;
  spec.R2 = a.r2;
  spec.q = a.q;
  spec.t = a.t;
  const auto ci = confidence_interval(a.delta, spec, a.n, a.alpha, a.draws, a.seed);

  RunLog log;
  log.command = "ci";
  log.seed = a.seed;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  log.config.set("delta", num(a.delta));
  log.config.set("v", num(a.v));
  log.config.set("r2", num(a.r2));
  log.config.set("q", std::to_string(a.q));
  log.config.set("t", num(a.t));
  log.config.set("n", std::to_string(a.n));
  log.config.set("alpha", num(a.alpha));
  log.config.set("draws", std::to_string(a.draws));
  log.config.set("seed", std::to_string(a.seed));

  ordered_json j;
  j["config_hash"] = hex64(fnv1a64(log.config.canonical()));
  j["lower"] = ci.lower;
  j["upper"] = ci.upper;
  j["v_qt"] = ci.v_qt;
  j["method"] = ci.method;
  j["alpha"] = ci.alpha;
  j["draws"] = ci.draws;
  j["seed"] = a.seed;
  const auto text = j.dump(2) + "\n";
  if (a.out.empty()) {
    out << text;
  } else {
    write_file(a.out, text);
    log.files = {a.out};
  }
  return log;
}

struct SimulateArgs {
  std::string config, out, csv;
  std::optional<int> workers;
};

RunLog do_simulate(const SimulateArgs& a) {
  auto cfg = KeyValueConfig::load(a.config);
  auto sc = sim_config_from_keyvalue(cfg);
  if (const char* env = std::getenv("RERAND_WORKERS"); env && *env) {
    sc.workers = static_cast<int>(parse_int(env, "RERAND_WORKERS"));
    if (sc.workers < 1) throw UsageError("RERAND_WORKERS must be at least 1");
  }
  if (a.workers) {
    if (*a.workers < 1) throw UsageError("simulate: --workers must be at least 1");
    sc.workers = *a.workers;
  }
  const auto report = run_simulation(sc);
  write_file(a.out, report_json(report));
  RunLog log;
  log.command = "simulate";
  log.seed = sc.master_seed;
  log.config = report.config;
  log.hash = report.config_hash;
  log.config.set("workers", std::to_string(sc.workers));
  log.files = {a.out};
  if (!a.csv.empty()) {
    write_file(a.csv, report_csv(report));
    log.files.push_back(a.csv);
  }
  return log;
}

void emit_log(std::ostream& log, const std::string& command, const RunLog* run, int code, const std::string& error,
              double seconds) {
  ordered_json j;
  j["event"] = "run";
  j["command"] = command;
  j["version"] = RERAND_VERSION;
  j["exit_code"] = code;
  if (run) {
    j["seed"] = run->seed;
    j["config_hash"] = hex64(run->hash ? *run->hash : fnv1a64(run->config.canonical()));
    j["config"] = config_json(run->config);
    j["files"] = run->files;
  }
  if (!error.empty()) j["error"] = error;
  j["elapsed_s"] = seconds;
  log << j.dump() << "\n";
}

}  // namespace

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string version_string() { return std::string("rerand ") + RERAND_VERSION + " (" + RERAND_BUILD_TYPE + ", C++" + std::to_string(__cplusplus / 100 % 100) + ")"; }

CommandOutcome run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  CLI::App app{"Rerandomized and stratified trial allocation, estimation and inference", "rerand"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());

  AllocateArgs al;
  auto* alc = app.add_subcommand("allocate", "Draw an accepted allocation for a trial dataset");
  alc->add_option("--design", al.design, "design config file")->required();
  alc->add_option("--data", al.data, "trial CSV")->required();
  alc->add_option("--seed", al.seed, "master seed");
  alc->add_option("--out", al.out, "output CSV (a JSON side file is written to <out>.json)")->required();

  AnalyzeArgs an;
  auto* anc = app.add_subcommand("analyze", "Estimate a treatment effect with scheme-appropriate inference");
  anc->add_option("--estimator", an.estimator, "unadjusted|ancova|glm2|drwls|mixed|dml")->required();
  anc->add_option("--estimand", an.estimand, "difference|ratio");
  anc->add_option("--covariates", an.covariates, "comma-separated adjustment covariates");
  anc->add_flag("--interactions", an.interactions, "add treatment-by-covariate interactions");
  anc->add_option("--interaction-covariates", an.interaction_covariates, "interaction subset");
  anc->add_option("--missing-covariates", an.missing_covariates, "missingness model covariates (drwls)");
  anc->add_option("--link", an.link, "identity|logit (drwls)");
  anc->add_option("--clip-floor", an.clip_floor, "propensity clipping floor");
  anc->add_option("--learners", an.learners, "outcome learner, e.g. stumps:200:0.1, knn:10, glm");
  anc->add_option("--missingness-learner", an.missingness_learner, "missingness learner or none");
  anc->add_option("--folds", an.folds, "cross-fitting folds");
  anc->add_option("--fold-mode", an.fold_mode, "plain|stratum-arm");
  anc->add_option("--data", an.data, "trial CSV with an arm column")->required();
  anc->add_option("--design", an.design, "design config used for allocation");
  anc->add_option("--pi", an.pi, "allocation probability when no design file is given");
  anc->add_option("--alpha", an.alpha, "interval level");
  anc->add_option("--draws", an.draws, "Monte Carlo draws for the interval");
  anc->add_option("--seed", an.seed, "seed");
  anc->add_option("--out", an.out, "write JSON here instead of stdout");

  CiArgs ca;
  auto* cic = app.add_subcommand("ci", "Interval from the rerandomization limit distribution");
  cic->add_option("--delta", ca.delta, "point estimate")->required();
  cic->add_option("--v", ca.v, "variance V")->required();
  cic->add_option("--r2", ca.r2, "R squared");
  cic->add_option("--q", ca.q, "number of rerandomization covariates");
  cic->add_option("--t", ca.t, "acceptance threshold");
  cic->add_option("--n", ca.n, "sample size")->required();
  cic->add_option("--alpha", ca.alpha, "interval level");
  cic->add_option("--draws", ca.draws, "Monte Carlo draws");
  cic->add_option("--seed", ca.seed, "seed");
  cic->add_option("--out", ca.out, "write JSON here instead of stdout");

  SimulateArgs sa;
  auto* sic = app.add_subcommand("simulate", "Run a simulation study from a config file");
  sic->add_option("--config", sa.config, "simulation config")->required();
  sic->add_option("--out", sa.out, "JSON report")->required();
  sic->add_option("--csv", sa.csv, "CSV mirror of the report");
  sic->add_option("--workers", sa.workers, "worker threads (results do not depend on it)");

  for (auto* sc : {alc, anc, cic, sic}) sc->allow_extras();

  std::string command = args.empty() ? "" : args.front();
  CommandOutcome outcome;
  std::optional<RunLog> run;
  std::string error;
  try {
    if (!command.empty() && command[0] != '-' &&
        std::find(kCommands.begin(), kCommands.end(), command) == kCommands.end()) {
      std::string msg = "unknown command '" + command + "'";
      const auto s = suggest(command, kCommands);
      if (!s.empty()) msg += "; did you mean '" + s + "'?";
      throw UsageError(msg);
    }
    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
      app.parse(rev);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return outcome;
    } catch (const CLI::CallForVersion&) {
      out << version_string() << "\n";
      return outcome;
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) return outcome;
      throw UsageError(e.what());
    }
    if (alc->parsed()) {
      reject_extras(*alc);
      run = do_allocate(al);
    } else if (anc->parsed()) {
      reject_extras(*anc);
      run = do_analyze(an, out);
    } else if (cic->parsed()) {
      reject_extras(*cic);
      run = do_ci(ca, out);
    } else {
      reject_extras(*sic);
      run = do_simulate(sa);
    }
    outcome.files = run->files;
  } catch (const UsageError& e) {
    outcome.exit_code = kExitUsage;
    error = e.what();
  } catch (const DataError& e) {
    outcome.exit_code = kExitData;
    error = e.what();
  } catch (const NumericError& e) {
    outcome.exit_code = kExitNumeric;
    error = e.what();
  }
  if (!error.empty()) log << "error: " << error << "\n";
  emit_log(log, command, run ? &*run : nullptr, outcome.exit_code, error, elapsed());
  return outcome;
}

}  // namespace rerand
