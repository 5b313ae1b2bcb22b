#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "noisydiff/cli.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace noisydiff;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "noisydiff");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// CSV data rows (comment and header lines dropped), split on ','
std::vector<std::vector<std::string>> rows(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> out;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    out.push_back(f);
  }
  return out;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("noisydiff_cli_" + std::to_string(rd()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string out(const std::string& sub) const { return (dir_ / sub).string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, TheoryWritesRecord) {
  const auto r = run_cli({"theory", "--shape", "triangular", "--W", "20", "--tau", "0.01", "--T", "1", "--out", out("t")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = rows(dir_ / "t" / "theory.csv");
  ASSERT_EQ(csv.size(), 1u);
  EXPECT_NEAR(std::stod(csv[0][0]), oracle::kDiffusionW20, 1e-8);
  EXPECT_EQ(csv[0][5], "crossover");
  EXPECT_NE(r.out.find("D = "), std::string::npos);
  const auto text = slurp(dir_ / "t" / "theory.csv");
  EXPECT_EQ(text.rfind("# noisydiff {", 0), 0u);
  EXPECT_NE(text.find("\"command\":\"theory\""), std::string::npos);
}

TEST_F(CliTest, TheoryWarnsWhenTunnelingIsLarge) {
  const auto r = run_cli({"theory", "--W", "2", "--tau", "0.01", "--out", out("t")});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("warning: T/W"), std::string::npos);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run_cli({"theory", "--W", "0", "--tau", "1", "--out", out("a")}).code, 2);
  EXPECT_EQ(run_cli({"theory", "--W", "-1", "--tau", "1", "--out", out("a")}).code, 1);
  EXPECT_EQ(run_cli({"theory", "--tau", "1", "--out", out("a")}).code, 1);
  EXPECT_EQ(run_cli({"theory", "--shape", "gaussian", "--W", "1", "--tau", "1", "--out", out("a")}).code, 1);
  EXPECT_EQ(run_cli({"theory", "--bogus", "1"}).code, 1);
  EXPECT_EQ(run_cli({}).code, 1);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
  EXPECT_EQ(run_cli({"simulate", "--W", "5", "--tau", "0.1", "--sites", "40", "--out", out("a")}).code, 1);
}

TEST_F(CliTest, ConfigFileWithFlagOverride) {
  const auto cfg = dir_ / "c.json";
  std::ofstream(cfg) << R"({"shape": "exponential", "W": 10, "tau": 0.001, "T": 1})";
  const auto a = run_cli({"theory", "--config", cfg.string(), "--out", out("a")});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NEAR(std::stod(rows(dir_ / "a" / "theory.csv")[0][1]), 10.0, 1e-9);
  const auto b = run_cli({"theory", "--config", cfg.string(), "--T", "2", "--out", out("b")});
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_NEAR(std::stod(rows(dir_ / "b" / "theory.csv")[0][1]), 40.0, 1e-9);
}

TEST_F(CliTest, ConfigFileErrors) {
  const auto bad_key = dir_ / "k.json";
  std::ofstream(bad_key) << R"({"W": 1, "tau": 1, "colour": "blue"})";
  const auto r = run_cli({"theory", "--config", bad_key.string(), "--out", out("a")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("colour"), std::string::npos);
  const auto bad_type = dir_ / "t.json";
  std::ofstream(bad_type) << R"({"W": "one", "tau": 1})";
  EXPECT_EQ(run_cli({"theory", "--config", bad_type.string()}).code, 1);
  const auto bad_json = dir_ / "j.json";
  std::ofstream(bad_json) << "{W: 1";
  EXPECT_EQ(run_cli({"theory", "--config", bad_json.string()}).code, 1);
  EXPECT_EQ(run_cli({"theory", "--config", (dir_ / "missing.json").string()}).code, 1);
}

TEST(ParseConfig, AllKeys) {
  const auto s = cli::parse_config(nlohmann::json::parse(R"({
    "shape": "triangular", "W": 5, "tau": 0.1, "T": 0.5, "dt": 0.01, "tmax": 10, "sites": 101,
    "realizations": 8, "seed": 3, "taus": [0.1, 1], "Ws": [2, 5], "profile_times": [1, 2],
    "allow_coarse_dt": true, "substeps": 2, "workers": 2, "snapshot": 0.5, "boundary_limit": 1e-7})"));
  EXPECT_EQ(*s.shape, "triangular");
  EXPECT_EQ(*s.sites, 101);
  EXPECT_EQ(*s.seed, 3u);
  EXPECT_EQ(s.taus->size(), 2u);
  EXPECT_TRUE(*s.allow_coarse_dt);
  EXPECT_THROW(cli::parse_config(nlohmann::json::parse(R"({"sites": 10.5})")), ConfigError);
  EXPECT_THROW(cli::parse_config(nlohmann::json::parse(R"({"seed": -1})")), ConfigError);
  EXPECT_THROW(cli::parse_config(nlohmann::json::parse("[1, 2]")), ConfigError);
}

TEST_F(CliTest, DephasingAgreesWithAnalytic) {
  const auto r = run_cli({"dephasing", "--shape", "exponential", "--W", "3", "--tau", "0.2", "--samples", "4000",
                          "--out", out("d")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = rows(dir_ / "d" / "dephasing.csv");
  ASSERT_GT(csv.size(), 10u);
  for (const auto& row : csv) {
    const double exact = std::stod(row[1]), mc = std::stod(row[2]), se = std::stod(row[4]);
    EXPECT_NEAR(mc, exact, 5.0 * se + 0.01) << row[0];
  }
}

TEST_F(CliTest, SimulateWritesOutputsAndIsWorkerIndependent) {
  const std::vector<std::string> base{"simulate", "--W", "10", "--tau", "0.1", "--tmax", "8", "--sites", "61",
                                      "--realizations", "11", "--seed", "7", "--dump-trajectory", "2",
                                      "--dump-noise-site", "30"};
  auto a = base, b = base;
  a.insert(a.end(), {"--workers", "1", "--out", out("a")});
  b.insert(b.end(), {"--workers", "2", "--out", out("b")});
  const auto ra = run_cli(a), rb = run_cli(b);
  ASSERT_EQ(ra.code, 0) << ra.err;
  ASSERT_EQ(rb.code, 0) << rb.err;
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "a")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "b" / e.path().filename())) << e.path().filename();
  }
  // sigma, fit, three profiles, trajectory, noise
  EXPECT_EQ(files, 7u);
  EXPECT_TRUE(fs::exists(dir_ / "a" / "profile_t8.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "a" / "profile_t2.csv"));
  const auto sigma = rows(dir_ / "a" / "sigma.csv");
  EXPECT_EQ(sigma.size(), 101u);
  EXPECT_EQ(sigma[0][1], "0");
  const auto noise = rows(dir_ / "a" / "noise_r0_site30.csv");
  EXPECT_EQ(noise.size(), 800u);
  const auto fit = rows(dir_ / "a" / "fit.csv");
  ASSERT_EQ(fit.size(), 1u);
  EXPECT_GT(std::stod(fit[0][0]), 0.0);
}

TEST_F(CliTest, SimulateProfileSumsToOne) {
  const auto r = run_cli({"simulate", "--W", "10", "--tau", "0.1", "--tmax", "2", "--sites", "41", "--realizations",
                          "3", "--profile-times", "1", "--out", out("p")});
  ASSERT_EQ(r.code, 3);  // the window is too short for a fit
  const auto p = rows(dir_ / "p" / "profile_t1.csv");
  ASSERT_EQ(p.size(), 41u);
  EXPECT_EQ(p.front()[0], "-20");
  EXPECT_EQ(p.back()[0], "20");
  double s = 0;
  for (const auto& row : p) s += std::stod(row[1]);
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST_F(CliTest, SimulateBallisticIsNonLinear) {
  const auto r = run_cli({"simulate", "--W", "0", "--tau", "0.1", "--tmax", "10", "--realizations", "2",
                          "--out", out("w0")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("ballistic"), std::string::npos);
  const auto fit = rows(dir_ / "w0" / "fit.csv");
  EXPECT_EQ(fit[0][6], "NonLinear");
  EXPECT_EQ(fit[0][7], "nan");
  const auto sigma = rows(dir_ / "w0" / "sigma.csv");
  EXPECT_NEAR(std::stod(sigma.back()[1]), 200.0, 0.5);
}

TEST_F(CliTest, SimulateBoundaryBreachExitsThree) {
  const auto r = run_cli({"simulate", "--W", "10", "--tau", "0.1", "--tmax", "30", "--sites", "21",
                          "--realizations", "2", "--out", out("br")});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("boundary mass exceeded"), std::string::npos);
  ASSERT_TRUE(fs::exists(dir_ / "br" / "sigma.csv"));
  const auto sigma = rows(dir_ / "br" / "sigma.csv");
  EXPECT_LT(sigma.size(), 101u);
}

TEST_F(CliTest, SimulateRejectsCoarseStepUnlessAllowed) {
  const std::vector<std::string> base{"simulate", "--W", "5", "--tau", "0.1", "--dt", "0.02", "--tmax", "1",
                                      "--sites", "21", "--realizations", "1"};
  auto a = base;
  a.insert(a.end(), {"--out", out("c1")});
  EXPECT_EQ(run_cli(a).code, 1);
  auto b = base;
  b.insert(b.end(), {"--allow-coarse-dt", "--out", out("c2")});
  EXPECT_NE(run_cli(b).code, 1);
}

TEST_F(CliTest, CollapseSinglePoint) {
  const auto r = run_cli({"collapse", "--taus", "0.1", "--Ws", "10", "--realizations", "4", "--out", out("c")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("single grid point"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "c" / "slopes.csv"));
  const auto c = rows(dir_ / "c" / "collapse.csv");
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0][9], "ok");
  EXPECT_NEAR(std::stod(c[0][3]) / std::stod(c[0][5]), 1.0, 0.35);
}

TEST_F(CliTest, CollapseGridWritesSlopes) {
  const auto r =
      run_cli({"collapse", "--taus", "0.1,0.2", "--Ws", "10,5", "--realizations", "4", "--out", out("g")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(rows(dir_ / "g" / "collapse.csv").size(), 4u);
  const auto slopes = rows(dir_ / "g" / "slopes.csv");
  ASSERT_EQ(slopes.size(), 2u);
  EXPECT_EQ(slopes[0][0], "small_x");
  EXPECT_EQ(slopes[0][3], "0");
  // tau = 0.1, W = 10 and tau = 0.2, W = 5 share x = 1
  EXPECT_NE(r.out.find("x = 1:"), std::string::npos);
}

TEST_F(CliTest, CollapseRejectsNonPositiveGrid) {
  const auto r = run_cli({"collapse", "--taus", "0.1", "--Ws", "0", "--realizations", "2", "--out", out("f")});
  EXPECT_EQ(r.code, 1);
  EXPECT_FALSE(fs::exists(dir_ / "f" / "collapse.csv"));
}

TEST(CsvFormat, ShortestRoundTrip) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(1e-300), "1e-300");
  EXPECT_EQ(format_number(2.0), "2");
  EXPECT_EQ(format_number(std::numeric_limits<double>::quiet_NaN()), "nan");
  EXPECT_EQ(format_number(-std::numeric_limits<double>::infinity()), "-inf");
  const double v = 0.506644540123456789;
  EXPECT_EQ(std::stod(format_number(v)), v);
}

TEST(CsvFormat, LabelRounds) {
  EXPECT_EQ(format_label(24.964000000000002), "24.964");
  EXPECT_EQ(format_label(8.0), "8");
  EXPECT_EQ(format_label(0.1 + 0.2), "0.3");
}
