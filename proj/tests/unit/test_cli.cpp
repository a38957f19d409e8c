#include "rerand/cli.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rerand;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, log;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, log;
  const auto r = run_command(args, out, log);
  return {r.exit_code, out.str(), log.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path scratch() {
  const auto dir = fs::temp_directory_path() / "rerand_cli_test";
  fs::create_directories(dir);
  return dir;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::string trial_csv() {
  std::string text = "outcome,arm,stratum,x1,x2\n";
  const double x1[] = {0.3, 1.2, -0.4, 2.1, 0.9, 1.7, -1.1, 0.2, 1.4, 0.8, 1.9, -0.2};
  const double x2[] = {1.0, -0.5, 0.4, 0.2, -1.3, 0.6, 0.1, -0.8, 1.1, 0.0, -0.3, 0.7};
  for (int i = 0; i < 12; ++i) {
    const int a = i % 2;
    text += std::to_string(1 + a + x1[i] + 0.1 * i) + "," + std::to_string(a) + "," + (i < 6 ? "a" : "b") + "," +
            std::to_string(x1[i]) + "," + std::to_string(x2[i]) + "\n";
  }
  return text;
}

}  // namespace

TEST_CASE("ci subcommand") {
  const auto r = run({"ci", "--delta", "0", "--v", "1", "--r2", "0", "--q", "2", "--t", "1", "--n", "100", "--alpha",
                      "0.05", "--draws", "1000000", "--seed", "7"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(std::abs(j["lower"].get<double>() + 0.196) < 0.003);
  CHECK(std::abs(j["upper"].get<double>() - 0.196) < 0.003);
  CHECK(j["method"] == "truncated_mixture");
  const auto log = nlohmann::json::parse(r.log);
  CHECK(log["seed"] == 7);
  CHECK(log["config"]["draws"] == "1000000");
}

TEST_CASE("exit codes") {
  CHECK(run({"analyze", "--estimator", "ancova", "--data", "missingfile.csv"}).code == kExitData);
  const auto typo = run({"ci", "--delta", "0", "--v", "1", "--n", "10", "--alhpa", "0.1"});
  CHECK(typo.code == kExitUsage);
  CHECK(typo.log.find("--alpha") != std::string::npos);
  CHECK(run({"alocate"}).code == kExitUsage);
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"ci", "--delta", "0", "--v", "1", "--n", "10", "--q", "2", "--t", "1e-12", "--r2", "0.5"}).code ==
        kExitNumeric);
  CHECK(run({"--version"}).code == 0);
}

TEST_CASE("allocate twice gives identical files") {
  const auto dir = scratch();
  write(dir / "trial.csv", trial_csv());
  write(dir / "d.cfg", "scheme = rerandomized\nrerand_covariates = x1,x2\nthreshold = 2\n");
  const std::vector<std::string> base{"allocate", "--design", (dir / "d.cfg").string(), "--data",
                                      (dir / "trial.csv").string(), "--seed", "1", "--out"};
  auto a = base;
  a.push_back((dir / "a.csv").string());
  auto b = base;
  b.push_back((dir / "b.csv").string());
  REQUIRE(run(a).code == 0);
  REQUIRE(run(b).code == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(slurp(dir / "a.csv.json") == slurp(dir / "b.csv.json"));
  const auto side = nlohmann::json::parse(slurp(dir / "a.csv.json"));
  CHECK(side["accepted_distance"].get<double>() < 2);
}

TEST_CASE("analyze subcommand") {
  const auto dir = scratch();
  write(dir / "trial.csv", trial_csv());
  const auto r = run({"analyze", "--estimator", "ancova", "--covariates", "x1,x2", "--data",
                      (dir / "trial.csv").string(), "--draws", "2000"});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j.contains("delta_hat"));
  CHECK(j.contains("V_hat"));
  CHECK(j.contains("R2_hat"));
  CHECK(j.contains("ci"));
  const auto d = run({"analyze", "--estimator", "dml", "--covariates", "x1", "--learners", "glm", "--folds", "2",
                      "--fold-mode", "plain", "--data", (dir / "trial.csv").string(), "--draws", "2000"});
  CHECK(d.code == 0);
}
