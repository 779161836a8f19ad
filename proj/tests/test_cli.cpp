#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "catchain/cli.hpp"
#include "test_support.hpp"

using namespace catchain;
namespace fs = std::filesystem;

namespace {

fs::path fixture(const std::string& name) { return fs::path(CATCHAIN_FIXTURES) / name; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig load(const std::string& name, const std::string& tag) {
  auto c = load_config(fixture(name));
  c.output = (fs::temp_directory_path() / ("catchain_test_" + tag)).string();
  fs::remove_all(c.output);
  return c;
}

int run(const std::string& cmd, const RunConfig& c) {
  std::ostringstream log, err;
  return run_command(cmd, c, log, err);
}

std::string sidecar_value(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + ": ", 0) == 0) return line.substr(key.size() + 2);
  return {};
}

}  // namespace

TEST(Config, EmitParseIsIdempotent) {
  for (const auto& entry : fs::directory_iterator(CATCHAIN_FIXTURES)) {
    if (entry.path().extension() != ".json") continue;
    const auto first = emit_config(load_config(entry.path()));
    const auto second = emit_config(parse_config(first));
    EXPECT_EQ(first, second) << entry.path();
  }
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(parse_config(R"({"model": {"kind": "markov", "P": [[0.5, 0.5], [0.5, 0.5]]}, "sede": 3})"),
               ConfigError);
  EXPECT_THROW(parse_config(R"({"model": {"kind": "markov", "P": [[0.5, 0.5], [0.5, 0.5]], "q": 1}})"),
               ConfigError);
  EXPECT_THROW(parse_config(R"({"model": {"kind": "markov", "P": [[0.5, 0.5], [0.5, 0.5]]},
                                "bounds": {"metrik": "l1"}})"),
               ConfigError);
  EXPECT_THROW(parse_config("{not json"), ConfigError);
  EXPECT_THROW(parse_config(R"({"model": {"kind": "hmm"}})"), ConfigError);
}

TEST(Config, CovariateDimensionMustMatch) {
  EXPECT_THROW(parse_config(R"({"model": {"kind": "observation_driven", "alpha": [0.4], "beta": [0.5],
                                          "gamma": [0.3]}})"),
               ConfigError);
}

TEST(Commands, ExitCodes) {
  EXPECT_EQ(run("verify", load("verify_bad_b0.json", "bad_b0")), kExitFailure);
  EXPECT_EQ(run("fit", load("fit_too_small.json", "too_small")), kExitFailure);
  EXPECT_EQ(run("launch", load("verify_markov.json", "unknown")), kExitConfig);
  EXPECT_EQ(run("verify", load("verify_markov.json", "verify_markov")), kExitOk);
}

TEST(Commands, SimulateWritesPath) {
  const auto c = load("simulate_minimal.json", "simulate");
  ASSERT_EQ(run("simulate", c), kExitOk);
  const auto table = parse_csv(slurp(fs::path(c.output) / "path.csv"));
  EXPECT_EQ(table.header, (std::vector<std::string>{"t", "y", "x_1"}));
  EXPECT_EQ(table.rows.size(), 100u);
  EXPECT_TRUE(fs::exists(fs::path(c.output) / "latent.csv"));
  const auto side = slurp(fs::path(c.output) / "simulate_certificate.txt");
  EXPECT_EQ(sidecar_value(side, "eps_achieved"), "yes");
}

TEST(Commands, MarkovBurnin) {
  const auto c = load("markov_b03.json", "markov_burnin");
  ASSERT_EQ(run("simulate", c), kExitOk);
  const auto side = slurp(fs::path(c.output) / "simulate_certificate.txt");
  EXPECT_EQ(sidecar_value(side, "burnin"), "6");
  EXPECT_NEAR(parse_double(sidecar_value(side, "b0")), 0.3, 1e-15);
}

TEST(Commands, MarkovBoundsBstar) {
  const auto c = load("markov_b03.json", "markov_bounds");
  ASSERT_EQ(run("bounds", c), kExitOk);
  const auto t = parse_csv(slurp(fs::path(c.output) / "bstar.csv"));
  ASSERT_GE(t.rows.size(), 20u);
  for (std::size_t n = 1; n < 20; ++n) EXPECT_NEAR(t.rows[n][1], std::pow(0.3, double(n)), 1e-15 + 1e-12 * std::pow(0.3, double(n)));
  const auto curve = parse_csv(slurp(fs::path(c.output) / "curve.csv"));
  EXPECT_EQ(curve.header.back(), "empirical_lowerbound");
}

TEST(Commands, ZeroModelCurveVanishes) {
  const auto c = load("zero_model.json", "zero");
  ASSERT_EQ(run("bounds", c), kExitOk);
  const auto t = parse_csv(slurp(fs::path(c.output) / "curve.csv"));
  ASSERT_EQ(t.rows.size(), 20u);
  for (const auto& r : t.rows) EXPECT_EQ(r[1], 0.0);
}

TEST(Commands, ObsDrivenCurveDecays) {
  const auto c = load("obs_driven_bounds.json", "obs_bounds");
  ASSERT_EQ(run("bounds", c), kExitOk);
  const auto t = parse_csv(slurp(fs::path(c.output) / "curve.csv"));
  ASSERT_EQ(t.rows.size(), 40u);
  for (std::size_t i = 5; i + 1 < t.rows.size(); ++i) EXPECT_LE(t.rows[i + 1][1], t.rows[i][1]);
  EXPECT_LT(t.rows.back()[1], t.rows[4][1]);
  EXPECT_NE(slurp(fs::path(c.output) / "bounds_summary.txt").find("decay: geometric"), std::string::npos);
}

TEST(Commands, SemiparametricWritesLink) {
  const auto c = load("fit_semiparametric.json", "semi");
  run("fit", c);
  EXPECT_TRUE(fs::exists(fs::path(c.output) / "fhat.csv"));
  EXPECT_TRUE(fs::exists(fs::path(c.output) / "semiparametric.csv"));
  const auto f = parse_csv(slurp(fs::path(c.output) / "fhat.csv"));
  for (std::size_t i = 1; i < f.rows.size(); ++i) EXPECT_GE(f.rows[i][2], f.rows[i - 1][2]);
}

TEST(Commands, VerifyPassesAcrossSeeds) {
  int passed = 0;
  for (std::uint64_t s = 1; s <= 10; ++s) {
    auto c = load("verify_default.json", "seeds");
    c.seed = s;
    c.verify.replicas = 5000;
    passed += verify_report(c).all_pass();
  }
  EXPECT_GE(passed, 9);
}
