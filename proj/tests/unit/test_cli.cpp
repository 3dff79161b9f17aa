#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "klpc/cli/commands.hpp"
#include "klpc/cli/config.hpp"
#include "klpc/csv.hpp"
#include "klpc/error.hpp"

using namespace klpc;
using namespace klpc::cli;
namespace fs = std::filesystem;

namespace {

int run_tool(std::vector<std::string> args) {
  args.insert(args.begin(), "klpc");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  return run(static_cast<int>(args.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("klpc_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* small_config = R"(# small but complete run
[ensemble]
reps_per_point = 40

[pc]
mc_count = 1e4

[gp]
iterations = 600
burn_in = 100

[sampling]
n_theta = 100
n_zeta = 5
n_eta = 4

[compare]
brute_force = 300

[report]
n_theta = 100
n_zeta = 100
n_eta = 100

[seeds]
simulate = 1
train = 2
sample = 3
compare = 4
report = 5
)";

fs::path write_config(const fs::path& dir, const std::string& text) {
  const auto p = dir / "run.toml";
  std::ofstream(p) << text;
  return p;
}

std::string error_of(const std::string& text) {
  try {
    (void)parse_config(text, "test.toml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

// One shared pipeline run; later cases read its outputs.
const fs::path& pipeline() {
  static const fs::path out = [] {
    const auto dir = scratch("pipeline");
    const auto cfg = write_config(dir, small_config).string();
    const auto o = (dir / "out").string();
    for (const char* cmd : {"simulate", "train", "sample", "compare", "report"})
      REQUIRE(run_tool({"--config", cfg, "--output", o, cmd}) == 0);
    return dir / "out";
  }();
  return out;
}

}  // namespace

TEST_CASE("defaults carry the documented values") {
  const auto c = parse_config("", "empty");
  CHECK(c.model.population == 10000.0);
  CHECK(c.model.s0 == 9998.0);
  CHECK(c.model.i0 == 2.0);
  CHECK(c.dist.mu_beta == 1.0);
  CHECK(c.dist.mu_gamma == 0.8);
  CHECK(c.dist.sigma2_beta == 0.000125);
  CHECK(c.ensemble.min_cinf_percent == 10.0);
  CHECK(c.train.pc.terms == 8);
  CHECK(c.design.grid == std::vector<std::size_t>{3, 3});
  const auto design = resolve_design(c, 0);
  REQUIRE(design.size() == 9);
  CHECK(design[0].beta == doctest::Approx(c.dist.quantile_beta(0.01)));
  CHECK(design[8].gamma == doctest::Approx(c.dist.quantile_gamma(0.99)));
  CHECK(design[1].beta == design[0].beta);
}

TEST_CASE("config values and explicit designs") {
  const auto c = parse_config(R"(
[model]
population = 5000
s0 = 4990
i0 = 10
[design]
kind = "explicit"
beta = [2.5, 2.8]
gamma = [2.1, 2.3]
[pc]
mc_count = 2e4
latin_hypercube = true
)",
                              "t");
  CHECK(c.model.population == 5000.0);
  CHECK(c.train.pc.mc_count == 20000);
  CHECK(c.train.pc.latin_hypercube);
  const auto d = resolve_design(c, 0);
  REQUIRE(d.size() == 2);
  CHECK(d[1] == sir::Rates{2.8, 2.3});
}

TEST_CASE("config errors name the line or field") {
  CHECK(error_of("[model]\npopulation =\n").find("line 2") != std::string::npos);
  CHECK(error_of("[model]\npopulaton = 4\n").find("populaton") != std::string::npos);
  CHECK(error_of("[model]\ns0 = 1\ns0 = 2\n").find("line 3") != std::string::npos);
  CHECK(error_of("[pc]\nterms = 2.5\n").find("pc.terms") != std::string::npos);
  CHECK(error_of("[model]\ns0 = 20000\n") != "");
  CHECK(error_of("[distribution]\nsigma2_beta = -1\n") != "");
  CHECK(error_of("[design]\nkind = \"explicit\"\nbeta = [1.0]\ngamma = [1.0, 2.0]\n") != "");
  CHECK(error_of("[unterminated\n").find("line 1") != std::string::npos);
}

TEST_CASE("usage and config failures exit with 1") {
  const auto dir = scratch("errors");
  const auto no_seed = write_config(dir, "[ensemble]\nreps_per_point = 5\n").string();
  CHECK(run_tool({"--config", no_seed, "--output", (dir / "o").string(), "simulate"}) == 1);
  CHECK(!fs::exists(dir / "o" / "ensemble.csv"));
  CHECK(run_tool({"--config", (dir / "missing.toml").string(), "simulate"}) == 1);
  CHECK(run_tool({"--bogus-flag"}) == 1);
  CHECK(run_tool({"--help"}) == 0);

  std::ofstream(dir / "bad.klpcgp") << "garbage";
  const auto ok = write_config(dir, small_config).string();
  CHECK(run_tool({"--config", ok, "--output", dir.string(), "sample", "--model", (dir / "bad.klpcgp").string()}) ==
        1);
}

TEST_CASE("dry run validates without writing") {
  const auto dir = scratch("dry");
  const auto cfg = write_config(dir, small_config).string();
  CHECK(run_tool({"--config", cfg, "--output", (dir / "o").string(), "--dry-run", "simulate"}) == 0);
  CHECK(!fs::exists(dir / "o" / "ensemble.csv"));
  CHECK(run_tool({"--config", cfg, "--seed", "9", "--dry-run", "--output", (dir / "o").string(), "train"}) == 0);
}

TEST_CASE("pipeline writes every documented output") {
  const auto& out = pipeline();
  for (const char* f : {"design.csv", "ensemble.csv", "model.klpcgp", "mcmc_chain.csv", "kl_spectrum.csv",
                        "samples.csv", "brute_force.csv", "emulator_samples.csv", "comparison.csv",
                        "comparison.txt", "report.txt", "variance_decomposition.csv", "manifest_simulate.json",
                        "manifest_train.json", "manifest_sample.json", "manifest_compare.json",
                        "manifest_report.json"})
    CHECK_MESSAGE(fs::exists(out / f), f);
  CHECK(fs::exists(out / "pc" / "pc_coefficients_0.csv"));
  CHECK(csv::read(out / "kl_spectrum.csv").rows.size() == 4);
}

TEST_CASE("CSV outputs round trip through the reader") {
  const auto& out = pipeline();
  for (const auto& entry : fs::recursive_directory_iterator(out)) {
    if (entry.path().extension() != ".csv") continue;
    const auto t = csv::read(entry.path());
    CHECK_MESSAGE(!t.header.empty(), entry.path().string());
    for (const auto& row : t.rows) REQUIRE(row.size() == t.header.size());
  }
  const auto e = csv::read(out / "ensemble.csv");
  CHECK(e.header.size() == 9);
}

TEST_CASE("one-dimensional marginal grids integrate to one") {
  const auto& out = pipeline();
  for (const char* q : {"p_inf", "t_p", "t_d", "c_inf"}) {
    const auto t = csv::read(out / "marginals" / (std::string("marginal_") + q + ".csv"));
    double sum = 0.0;
    for (std::size_t r = 1; r < t.rows.size(); ++r)
      sum += 0.5 * (t.number(r, 1) + t.number(r - 1, 1)) * (t.number(r, 0) - t.number(r - 1, 0));
    CHECK_MESSAGE(std::abs(sum - 1.0) < 1e-2, q);
  }
  CHECK(fs::exists(out / "marginals" / "marginal_p_inf_c_inf.csv"));
}

TEST_CASE("reruns reproduce primary outputs byte for byte") {
  const auto& first = pipeline();
  const auto dir = scratch("rerun");
  const auto cfg = write_config(dir, small_config).string();
  const auto o = (dir / "out").string();
  REQUIRE(run_tool({"--config", cfg, "--output", o, "--threads", "1", "simulate"}) == 0);
  REQUIRE(run_tool({"--config", cfg, "--output", o, "train"}) == 0);
  for (const char* f : {"ensemble.csv", "design.csv", "model.klpcgp", "mcmc_chain.csv"})
    CHECK_MESSAGE(slurp(first / f) == slurp(dir / "out" / f), f);
}

TEST_CASE("sampling budget and fixed sources") {
  const auto& first = pipeline();
  const auto dir = scratch("budget");
  const auto cfg = write_config(dir, small_config).string();
  const auto model = (first / "model.klpcgp").string();
  REQUIRE(run_tool({"--config", cfg, "--output", dir.string(), "sample", "--model", model, "--n-theta", "100",
                    "--n-zeta", "10", "--n-eta", "100"}) == 0);
  CHECK(csv::read(dir / "samples.csv").rows.size() == 100000);

  REQUIRE(run_tool({"--config", cfg, "--output", dir.string(), "sample", "--model", model, "--fix-theta",
                    "--fix-eta", "--n-theta", "20", "--n-zeta", "1", "--n-eta", "3"}) == 0);
  auto t = csv::read(dir / "samples.csv");
  const auto beta = t.column("beta");
  const auto p_inf = t.column("p_inf");
  for (std::size_t r = 1; r < t.rows.size(); ++r) CHECK(t.number(r, beta) == t.number(0, beta));

  // With every source fixed the output is a single repeated value.
  REQUIRE(run_tool({"--config", cfg, "--output", dir.string(), "sample", "--model", model, "--fix-theta",
                    "--fix-eta", "--fix-zeta", "--n-theta", "5", "--n-zeta", "2", "--n-eta", "2"}) == 0);
  t = csv::read(dir / "samples.csv");
  for (std::size_t r = 1; r < t.rows.size(); ++r) CHECK(t.rows[r][p_inf] == t.rows[0][p_inf]);
}

TEST_CASE("comparison against training data and the null comparison") {
  const auto& first = pipeline();
  const auto dir = scratch("compare");
  const auto cfg = write_config(dir, small_config).string();
  const auto model = (first / "model.klpcgp").string();
  REQUIRE(run_tool({"--config", cfg, "--output", dir.string(), "compare", "--model", model, "--at-design", "4",
                    "--ensemble", (first / "ensemble.csv").string(), "--n-zeta", "1000", "--n-eta", "1"}) == 0);
  auto t = csv::read(dir / "comparison.csv");
  REQUIRE(t.rows.size() == 4);
  const auto err = t.column("mean_rel_err");
  for (std::size_t r = 0; r < 4; ++r) CHECK(t.number(r, err) < 0.1);

  REQUIRE(run_tool({"--config", cfg, "--output", dir.string(), "compare", "--null"}) == 0);
  t = csv::read(dir / "comparison.csv");
  const auto ks = t.column("ks"), crit = t.column("ks_critical_95");
  for (std::size_t r = 0; r < 4; ++r) CHECK(t.number(r, ks) < 1.5 * t.number(r, crit));

  const std::string before = slurp(dir / "comparison.csv");
  REQUIRE(run_tool({"--config", cfg, "--output", dir.string(), "compare", "--null"}) == 0);
  CHECK(slurp(dir / "comparison.csv") == before);
}
