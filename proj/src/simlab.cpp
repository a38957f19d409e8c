#include "rerand/simlab.hpp"

#include "rerand/allocation.hpp"
#include "rerand/errors.hpp"
#include "rerand/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <sstream>
#include <thread>

namespace rerand {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

struct ReplicateOutput {
  std::uint64_t attempts = 0;
  std::vector<ReplicateRecord> records;
};

ReplicateOutput run_replicate(const SimConfig& c, double truth, std::size_t r) {
  const auto seed = derive_seed(c.master_seed, static_cast<std::uint64_t>(r));
  const auto trial = generate_trial(c.dgp, derive_seed(seed, "data"));
  const auto alloc = rerandomize(trial.frame, c.design, derive_seed(seed, "allocation"));
  const auto frame = reveal(trial, alloc.arms);
  ReplicateOutput out;
  out.attempts = alloc.attempts;
  for (const auto& est : c.estimators) {
    ReplicateRecord rec;
    try {
      const auto a = analyze(frame, c.design, est, c.estimand, c.alpha, c.ci_draws, derive_seed(seed, est.name));
      rec.ok = true;
      rec.delta_hat = a.estimate.delta_hat;
      rec.se = std::sqrt(a.V_hat / static_cast<double>(a.units));
      if (a.r2) rec.r2 = a.r2->value;
      rec.cover_normal = a.normal.lower <= truth && truth <= a.normal.upper;
      if (a.scheme_ci) {
        rec.has_true = true;
        rec.cover_true = a.scheme_ci->lower <= truth && truth <= a.scheme_ci->upper;
      }
    } catch (const NumericError& e) {
      rec.error = e.what();
    } catch (const DataError& e) {
      rec.error = e.what();
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

EstimatorSummary summarize(const EstimatorSpec& spec, std::vector<ReplicateRecord> recs, double truth) {
  EstimatorSummary s;
  s.name = spec.name;
  s.kind = to_string(spec.kind);
  std::vector<double> est, r2;
  double se_sum = 0, cn = 0, ct = 0;
  std::size_t nt = 0;
  for (const auto& r : recs) {
    if (!r.ok) {
      ++s.failures;
      continue;
    }
    est.push_back(r.delta_hat);
    se_sum += r.se;
    cn += r.cover_normal;
    if (r.has_true) {
      ++nt;
      ct += r.cover_true;
    }
    if (r.r2 >= 0) r2.push_back(r.r2);
  }
  s.replicates = est.size();
  s.records = std::move(recs);
  if (est.empty()) return s;
  const double k = static_cast<double>(est.size());
  double mean = 0;
  for (double v : est) mean += v;
  mean /= k;
  s.bias = mean - truth;
  if (est.size() > 1) {
    double ss = 0;
    for (double v : est) ss += (v - mean) * (v - mean);
    s.ese = std::sqrt(ss / (k - 1));
    s.mcse_bias = *s.ese / std::sqrt(k);
  }
  s.ase_star = se_sum / k;
  s.cp_normal = cn / k;
  if (nt > 0) s.cp_true = ct / static_cast<double>(nt);
  if (!r2.empty()) {
    double m = 0;
    for (double v : r2) m += v;
    s.mean_r2 = m / static_cast<double>(r2.size());
    std::sort(r2.begin(), r2.end());
    const auto h = r2.size() / 2;
    s.median_r2 = r2.size() % 2 ? r2[h] : 0.5 * (r2[h - 1] + r2[h]);
  }
  return s;
}

}  // namespace

SimConfig sim_config_from_keyvalue(const KeyValueConfig& cfg) {
  SimConfig c;
  c.dgp.family = dgp_family_from_string(cfg.get_string("dgp", "continuous_sec7"));
  const auto n = cfg.get_int("n", 400);
  if (n < 2) throw ValidationError("n must be at least 2");
  c.dgp.n = static_cast<std::size_t>(n);
  c.dgp.missingness = cfg.get_bool("missingness", false);
  auto& cu = c.dgp.custom;
  if (c.dgp.family == DgpFamily::custom) {
    cu.b0 = cfg.get_double("custom.b0", cu.b0);
    cu.ba = cfg.get_double("custom.ba", cu.ba);
    cu.b1 = cfg.get_double("custom.b1", cu.b1);
    cu.b2 = cfg.get_double("custom.b2", cu.b2);
    cu.bs = cfg.get_double("custom.bs", cu.bs);
    cu.bas = cfg.get_double("custom.bas", cu.bas);
    cu.noise_sd = cfg.get_double("custom.noise_sd", cu.noise_sd);
    cu.shared_noise = cfg.get_bool("custom.shared_noise", cu.shared_noise);
    cu.binary = cfg.get_bool("custom.binary", cu.binary);
    cu.m0 = cfg.get_double("custom.m0", cu.m0);
    cu.ma = cfg.get_double("custom.ma", cu.ma);
    cu.m1 = cfg.get_double("custom.m1", cu.m1);
    cu.m2 = cfg.get_double("custom.m2", cu.m2);
    cu.m22 = cfg.get_double("custom.m22", cu.m22);
    cu.ms = cfg.get_double("custom.ms", cu.ms);
  }
  c.design = design_from_config(cfg);
  c.estimand.contrast = contrast_from_string(cfg.get_string("estimand", "difference"));
  const auto names = cfg.get_list("estimators");
  if (names.empty()) throw ValidationError("config lists no estimators");
  for (const auto& name : names) {
    auto e = estimator_from_config(cfg, name, "estimator." + name + ".");
    if (e.kind == EstimatorKind::mixed) {
      throw ValidationError("estimator '" + name + "': simulated trials have no clusters; mixed is not available");
    }
    if (std::any_of(c.estimators.begin(), c.estimators.end(), [&](auto& x) { return x.name == name; })) {
      throw ValidationError("duplicate estimator name '" + name + "'");
    }
    c.estimators.push_back(std::move(e));
  }
  const auto reps = cfg.get_int("replicates", 1000);
  if (reps < 1) throw ValidationError("replicates must be at least 1");
  c.replicates = static_cast<std::size_t>(reps);
  c.alpha = cfg.get_double("alpha", c.alpha);
  c.master_seed = cfg.get_u64("seed", c.master_seed);
  c.workers = static_cast<int>(cfg.get_int("workers", c.workers));
  c.ci_draws = static_cast<std::size_t>(cfg.get_int("ci_draws", static_cast<long long>(c.ci_draws)));
  if (cfg.has("truth")) {
    c.truth = cfg.get_double("truth", 0.0);
    c.truth_mcse = cfg.get_double("truth_mcse", 0.0);
  }
  c.truth_draws = static_cast<std::size_t>(cfg.get_int("truth_draws", static_cast<long long>(c.truth_draws)));
  if (!(c.alpha > 0 && c.alpha < 1)) throw ValidationError("alpha must lie in (0,1)");
  if (c.workers < 1) throw ValidationError("workers must be at least 1");
  const auto unknown = cfg.unused();
  if (!unknown.empty()) throw ValidationError("unknown config keys: " + join(unknown));
  return c;
}

KeyValueConfig sim_config_to_keyvalue(const SimConfig& c) {
  KeyValueConfig kv;
  kv.set("dgp", to_string(c.dgp.family));
  kv.set("n", std::to_string(c.dgp.n));
  kv.set("missingness", c.dgp.missingness ? "true" : "false");
  if (c.dgp.family == DgpFamily::custom) {
    const auto& cu = c.dgp.custom;
    kv.set("custom.b0", fmt(cu.b0));
    kv.set("custom.ba", fmt(cu.ba));
    kv.set("custom.b1", fmt(cu.b1));
    kv.set("custom.b2", fmt(cu.b2));
    kv.set("custom.bs", fmt(cu.bs));
    kv.set("custom.bas", fmt(cu.bas));
    kv.set("custom.noise_sd", fmt(cu.noise_sd));
    kv.set("custom.shared_noise", cu.shared_noise ? "true" : "false");
    kv.set("custom.binary", cu.binary ? "true" : "false");
    kv.set("custom.m0", fmt(cu.m0));
    kv.set("custom.ma", fmt(cu.ma));
    kv.set("custom.m1", fmt(cu.m1));
    kv.set("custom.m2", fmt(cu.m2));
    kv.set("custom.m22", fmt(cu.m22));
    kv.set("custom.ms", fmt(cu.ms));
  }
  design_to_config(c.design, kv);
  kv.set("estimand", to_string(c.estimand.contrast));
  std::vector<std::string> names;
  for (const auto& e : c.estimators) {
    names.push_back(e.name);
    estimator_to_config(e, "estimator." + e.name + ".", kv);
  }
  kv.set("estimators", join(names));
  kv.set("replicates", std::to_string(c.replicates));
  kv.set("alpha", fmt(c.alpha));
  kv.set("seed", std::to_string(c.master_seed));
  kv.set("ci_draws", std::to_string(c.ci_draws));
  if (c.truth) {
    kv.set("truth", fmt(*c.truth));
    kv.set("truth_mcse", fmt(c.truth_mcse));
  } else {
    kv.set("truth_draws", std::to_string(c.truth_draws));
  }
  return kv;
}

std::uint64_t config_hash(const SimConfig& c) { return fnv1a64(sim_config_to_keyvalue(c).canonical()); }

SimReport run_simulation(const SimConfig& c) {
  if (c.estimators.empty()) throw ValidationError("no estimators configured");
  if (c.replicates < 1) throw ValidationError("replicates must be at least 1");
  validate_design_parameters(c.design);
  SimReport rep;
  rep.config = sim_config_to_keyvalue(c);
  rep.config_hash = fnv1a64(rep.config.canonical());
  rep.replicates = c.replicates;
  if (c.truth) {
    rep.truth = *c.truth;
    rep.truth_mcse = c.truth_mcse;
    rep.truth_source = "fixed";
  } else {
    const auto t = true_delta(c.dgp, c.estimand, derive_seed(c.master_seed, "truth"), c.truth_draws);
    rep.truth = t.value;
    rep.truth_mcse = t.mcse;
    rep.truth_source = "monte_carlo";
  }

  std::vector<ReplicateOutput> outputs(c.replicates);
  std::vector<std::exception_ptr> errors(c.replicates);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r; (r = next.fetch_add(1)) < c.replicates;) {
      try {
        outputs[r] = run_replicate(c, rep.truth, r);
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  const auto nw = static_cast<std::size_t>(std::max(1, c.workers));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(nw, c.replicates); ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  double attempts = 0;
  for (const auto& o : outputs) attempts += static_cast<double>(o.attempts);
  rep.mean_attempts = attempts / static_cast<double>(c.replicates);
  for (std::size_t j = 0; j < c.estimators.size(); ++j) {
    std::vector<ReplicateRecord> recs;
    recs.reserve(c.replicates);
    for (auto& o : outputs) recs.push_back(std::move(o.records[j]));
    rep.rows.push_back(summarize(c.estimators[j], std::move(recs), rep.truth));
  }
  for (const auto& row : rep.rows) {
    if (static_cast<double>(row.failures) > 0.02 * static_cast<double>(c.replicates)) {
      std::string first;
      for (const auto& r : row.records) {
        if (!r.ok) {
          first = r.error;
          break;
        }
      }
      throw NumericError("estimator '" + row.name + "' failed in " + std::to_string(row.failures) + " of " +
                         std::to_string(c.replicates) + " replicates (first: " + first + ")");
    }
  }
  return rep;
}

std::string report_json(const SimReport& r) {
  using nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  ordered_json j;
  j["schema"] = 1;
  j["config_hash"] = hex64(r.config_hash);
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : r.config.entries()) cfg[k] = v;
  j["config"] = cfg;
  j["truth"] = {{"value", r.truth}, {"mcse", r.truth_mcse}, {"source", r.truth_source}};
  j["replicates"] = r.replicates;
  j["mean_attempts"] = r.mean_attempts;
  ordered_json rows = ordered_json::array();
  for (const auto& s : r.rows) {
    ordered_json row;
    row["name"] = s.name;
    row["kind"] = s.kind;
    row["replicates"] = s.replicates;
    row["failures"] = s.failures;
    row["bias"] = s.bias;
    row["ese"] = opt(s.ese);
    row["ase_star"] = s.ase_star;
    row["ese_over_ase"] = s.ese && s.ase_star > 0 ? ordered_json(*s.ese / s.ase_star) : ordered_json(nullptr);
    row["cp_normal"] = s.cp_normal;
    row["cp_true"] = opt(s.cp_true);
    row["mean_R2_hat"] = opt(s.mean_r2);
    row["median_R2_hat"] = opt(s.median_r2);
    row["mcse_bias"] = opt(s.mcse_bias);
    rows.push_back(row);
  }
  j["estimators"] = rows;
  return j.dump(2) + "\n";
}

std::string report_csv(const SimReport& r) {
  std::ostringstream os;
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  os << "name,kind,replicates,failures,bias,ese,ase_star,cp_normal,cp_true,mean_R2_hat,median_R2_hat,config_hash\n";
  for (const auto& s : r.rows) {
    os << s.name << ',' << s.kind << ',' << s.replicates << ',' << s.failures << ',' << fmt(s.bias) << ','
       << opt(s.ese) << ',' << fmt(s.ase_star) << ',' << fmt(s.cp_normal) << ',' << opt(s.cp_true) << ','
       << opt(s.mean_r2) << ',' << opt(s.median_r2) << ',' << hex64(r.config_hash) << '\n';
  }
  return os.str();
}

}  // namespace rerand
