#include "cli_app.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "threelp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = threelp::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("threelp_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string samples_dir() {
  const char* env = std::getenv("THREELP_SAMPLES");
  return env ? env : "samples";
}

}  // namespace

TEST(Cli, RangeParsing) {
  using threelp::cli::parse_range;
  EXPECT_EQ(parse_range("0.8:0.1:2.0", "--speeds").size(), 13u);
  EXPECT_EQ(parse_range("0.8:0.05:3.0", "--freqs").size(), 45u);
  EXPECT_EQ(parse_range("1.5", "--speeds"), std::vector<double>{1.5});
  EXPECT_THROW(parse_range("2:0.1:1", "--freqs"), threelp::cli::UsageError);
  EXPECT_THROW(parse_range("1:0:2", "--freqs"), threelp::cli::UsageError);
  EXPECT_THROW(parse_range("a:b", "--freqs"), threelp::cli::UsageError);
}

TEST(Cli, RelaxWritesScanAndManifest) {
  const auto dir = scratch("relax");
  const auto r = run({"relax", "--config", samples_dir() + "/adult.cfg", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("T_relax = 0.863799"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir / "relax_scan.csv"));
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  EXPECT_EQ(manifest["command"], "relax");
  EXPECT_EQ(manifest["param_hash"].get<std::string>().size(), 16u);
  EXPECT_EQ(manifest["outputs"][0], "relax_scan.csv");
  EXPECT_TRUE(manifest.contains("wall_time_s"));
  EXPECT_EQ(manifest["version"], threelp::kVersion);
}

TEST(Cli, RelaxKidFindsRoot) {
  const auto dir = scratch("relax_kid");
  const auto r = run({"relax", "--config", samples_dir() + "/kid.cfg", "--out", dir.string()});
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST(Cli, RelaxWithoutRootFails) {
  const auto r = run({"relax", "--lo", "1.2", "--hi", "1.5", "--out", scratch("noroot").string()});
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, ConfigErrorsNameKey) {
  const auto dir = scratch("badcfg");
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "bad.cfg");
    f << "m1 = 45\nheight = 1.7\n";
  }
  const auto r = run({"relax", "--config", (dir / "bad.cfg").string(), "--out", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("height"), std::string::npos);
  EXPECT_EQ(run({"gait", "--config", (dir / "missing.cfg").string()}).code, 2);
  EXPECT_EQ(run({"gait", "--bogus"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
}

TEST(Cli, GaitPseudoPassiveAtRelaxTiming) {
  const auto dir = scratch("gait_pp");
  std::ofstream(fs::temp_directory_path() / "threelp_tds01.cfg") << "T_ds = 0.1\nT_ss = 0.6028\n";
  const auto r = run({"gait", "--config", (fs::temp_directory_path() / "threelp_tds01.cfg").string(),
                      "--relax-timing", "--speed", "1", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto sol = nlohmann::json::parse(slurp(dir / "solution.json"));
  EXPECT_LE(sol["report"]["torque_norm"].get<double>(), 1e-6);
  const std::string csv = slurp(dir / "trajectory.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "t,X2x,X2y,X1x,X1y,vX2x,vX2y,vX1x,vX1y,comx,comy,comvx,comvy,grf3z,grf2z,tau2y,tau2x,M3y,M3x,tau1y,tau1x");
}

TEST(Cli, GaitScenarios) {
  const auto dir = scratch("gait_stage");
  auto r = run({"gait", "--scenario", "stage-walk", "--speed", "1", "--freq", "1.4224", "--tds-policy",
                "fixed:0.1422", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto sol = nlohmann::json::parse(slurp(dir / "solution.json"));
  EXPECT_LE(sol["report"]["max_lateral_com_speed"].get<double>(), 1e-6);

  r = run({"gait", "--scenario", "cop-modulated", "--foot-length", "0.2", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  sol = nlohmann::json::parse(slurp(dir / "solution.json"));
  EXPECT_NEAR(sol["Q0_named"]["rMay"].get<double>(), sol["report"]["cop_ramp_torque"].get<double>(), 1e-8);

  EXPECT_EQ(run({"gait", "--scenario", "hop"}).code, 2);
  EXPECT_EQ(run({"gait", "--speed", "-1"}).code, 2);
}

TEST(Cli, SweepOutputsAndEmptyRange) {
  const auto dir = scratch("sweep");
  const auto r = run({"sweep", "--speeds", "1.0:0.5:1.5", "--freqs", "1.4:0.2:2.2", "--tds-policy", "fixed:0.2",
                      "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir / "economy.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "speed,frequency,tds_ratio,economy,feasible");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 5);
  EXPECT_TRUE(fs::exists(dir / "peak_line.csv"));
  EXPECT_EQ(run({"sweep", "--freqs", "3.0:0.05:0.8", "--out", dir.string()}).code, 2);
  EXPECT_EQ(run({"sweep", "--tds-policy", "fixed:2", "--out", dir.string()}).code, 2);
}

TEST(Cli, SweepMostlyInfeasibleFails) {
  const auto r = run({"sweep", "--speeds", "4.0:0.5:5.0", "--freqs", "1.8", "--out", scratch("sweep_bad").string()});
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, ValidateIsReproducible) {
  const auto a = scratch("validate_a"), b = scratch("validate_b");
  const auto r1 = run({"validate", "--seed", "42", "--trials", "2", "--step", "1e-4", "--out", a.string()});
  const auto r2 = run({"validate", "--seed", "42", "--trials", "2", "--step", "1e-4", "--out", b.string()});
  ASSERT_EQ(r1.code, 0) << r1.out << r1.err;
  EXPECT_EQ(r1.out, r2.out);
  EXPECT_EQ(slurp(a / "validate_report.txt"), slurp(b / "validate_report.txt"));
  EXPECT_NE(r1.out.find("PASS"), std::string::npos);
  EXPECT_EQ(run({"validate", "--trials", "0"}).code, 2);
}

TEST(Cli, DumpMaps) {
  const auto dir = scratch("dump");
  ASSERT_EQ(run({"dump", "--out", dir.string()}).code, 0);
  const auto j = nlohmann::json::parse(slurp(dir / "maps.json"));
  EXPECT_EQ(j["H"].size(), 529u);
  EXPECT_EQ(j["Hprime"].size(), 529u);
}
