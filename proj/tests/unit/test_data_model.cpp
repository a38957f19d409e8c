#include "helpers.hpp"
#include "rerand/analysis.hpp"
#include "rerand/data_model.hpp"
#include "rerand/errors.hpp"
#include "rerand/keyvalue.hpp"

#include <doctest.h>

using namespace rerand;

TEST_CASE("csv with an empty outcome counts three observed rows") {
  const auto f = parse_csv("outcome,arm,x\n1.5,1,0.2\n,0,0.4\n2.5,1,0.1\n3,0,0.3\n");
  CHECK(f.n() == 4);
  CHECK(f.observed_count() == 3);
  CHECK(f.observed()[1] == 0);
  CHECK(f.covariate_names() == std::vector<std::string>{"x"});
}

TEST_CASE("csv arm outside {0,1} names the row") {
  std::string text = "outcome,arm,x\n";
  for (int i = 1; i <= 8; ++i) text += "1," + std::string(i == 7 ? "2" : "1") + ",0\n";
  try {
    parse_csv(text);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("row 7") != std::string::npos);
  }
}

TEST_CASE("csv parse errors are data errors") {
  CHECK_THROWS_AS(parse_csv("outcome,arm,x\n1,1,abc\n"), ParseError);
  CHECK_THROWS_AS(parse_csv("outcome,arm,x\n1,1\n"), ParseError);
  CHECK_THROWS_AS(parse_csv("outcome,arm,x,outcome\n1,1,0.5,1\n"), ParseError);
  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), DataError);
}

TEST_CASE("csv round trip is byte identical") {
  Rng rng = make_rng(5);
  std::normal_distribution<double> N;
  std::vector<UnitRecord> rows;
  for (int i = 0; i < 30; ++i) {
    UnitRecord r;
    if (i % 7 != 3) r.outcome = N(rng) * 1e3 / 7.0;
    r.observed = r.outcome ? 1 : 0;
    r.arm = i % 2;
    r.covariates = {N(rng), N(rng) / 3.0};
    r.stratum = i < 12 ? "low" : "high, quoted";
    r.cluster = "k" + std::to_string(i / 3);
    rows.push_back(r);
  }
  const auto f = TrialFrame::from_rows(rows, {"x1", "x2"});
  const auto text = to_csv(f);
  const auto g = parse_csv(text);
  CHECK(to_csv(g) == text);
  CHECK(g.covariates().isApprox(f.covariates(), 0.0));
  CHECK(g.stratum_levels() == f.stratum_levels());
  CHECK(g.cluster_codes() == f.cluster_codes());
  CHECK(g.observed() == f.observed());
}

TEST_CASE("design validation") {
  Design d;
  d.pi = 0.5;
  d.block_size = 2;
  CHECK_NOTHROW(validate_design_parameters(d));
  d.pi = 0.25;
  d.scheme = Scheme::stratified;
  CHECK_THROWS_AS(validate_design_parameters(d), ValidationError);
  Design s;
  s.scheme = Scheme::stratified_rerandomized;
  s.rerand_covariates = {"x"};
  s.threshold = 1;
  const auto f = testutil::FrameBuilder{}.x("x", {1, 2, 3, 4}).build();
  CHECK_THROWS_AS(validate_design(s, f), ValidationError);
}

TEST_CASE("estimand gradients") {
  EstimandSpec diff;
  EstimandSpec ratio{Contrast::ratio};
  CHECK(diff.apply(3, 1) == doctest::Approx(2));
  CHECK(ratio.apply(3, 1.5) == doctest::Approx(2));
  CHECK(ratio.gradient(3, 1.5).second == doctest::Approx(-3 / 2.25));
  CHECK_THROWS_AS(ratio.apply(1, 0), NumericError);
}

TEST_CASE("key value config") {
  const auto cfg = KeyValueConfig::parse("# comment\na = 1\nb.c = x, y\nt = inf\n");
  CHECK(cfg.get_int("a", 0) == 1);
  CHECK(cfg.get_list("b.c") == std::vector<std::string>{"x", "y"});
  CHECK(std::isinf(cfg.get_double("t", 0)));
  CHECK(cfg.get_string("missing", "d") == "d");
  CHECK_THROWS_AS(KeyValueConfig::parse("a = 1\na = 2\n"), ParseError);
  CHECK_THROWS_AS(KeyValueConfig::parse("a\n"), ParseError);
  CHECK_THROWS_AS(cfg.get_int("b.c", 0), ParseError);
}

TEST_CASE("design config round trip") {
  const auto cfg = KeyValueConfig::parse(
      "scheme = stratified_rerandomized\npi = 0.5\nrerand_covariates = X1,X2\nthreshold = 1\n"
      "distance = general\nstatistic = dagger\n");
  const auto d = design_from_config(cfg);
  KeyValueConfig back;
  design_to_config(d, back);
  const auto d2 = design_from_config(back);
  KeyValueConfig again;
  design_to_config(d2, again);
  CHECK(back.canonical() == again.canonical());
  CHECK(d2.distance.kind == DistanceKind::general);
  CHECK(d2.statistic == StratifiedStatistic::dagger);
}
