#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "truncflow/truncflow.hpp"

using namespace truncflow;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = TRUNCFLOW_SCENARIO_DIR;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("truncflow_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int cli(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd \"" + cwd.string() + "\" && \"" TRUNCFLOW_CLI "\" " + args + " >cli.log 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

void write(const fs::path& p, const Json& j) { std::ofstream(p) << j.dump(2); }

}  // namespace

TEST(Config, EveryScenarioRoundTrips) {
  int seen = 0;
  for (const auto& entry : fs::directory_iterator(kScenarios)) {
    if (entry.path().extension() != ".json") continue;
    const ScenarioConfig c = load_config(entry.path());
    const Json once = to_json(c);
    EXPECT_EQ(to_json(config_from_json(once, c.base_dir)), once) << entry.path();
    ++seen;
  }
  EXPECT_GE(seen, 6);
}

TEST(Config, ValidationNamesTheField) {
  const Json base = read_json_file(kScenarios / "oned_ladder.json");
  const auto message = [&](const std::function<void(Json&)>& edit) {
    Json j = base;
    edit(j);
    try {
      config_from_json(j);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_EQ(message([](Json& j) { j["s_end"] = -1.0; }).rfind("s_end", 0), 0U);
  EXPECT_EQ(message([](Json& j) { j["q"] = 2; }).find("no error"), std::string::npos);
  EXPECT_EQ(message([](Json& j) { j["mode"] = "sideways"; }).rfind("mode", 0), 0U);
  EXPECT_EQ(message([](Json& j) { j["colour"] = 1; }).rfind("colour", 0), 0U);
  EXPECT_EQ(message([](Json& j) { j.erase("init"); }).rfind("init", 0), 0U);
  EXPECT_EQ(message([](Json& j) { j["tolerances"] = Json{{"atol", -1.0}}; }).rfind("tolerances.atol", 0), 0U);
  EXPECT_EQ(message([](Json& j) { j["output_map"] = Json{{1.0, 2.0}}; }).rfind("output_map", 0), 0U);
}

TEST(Config, NamedInitStrings) {
  EXPECT_EQ(named_init_from_string("identity").kind, InitKind::Identity);
  const NamedInit r = named_init_from_string("random-orthogonal(42)");
  EXPECT_EQ(r.kind, InitKind::RandomOrthogonal);
  EXPECT_EQ(r.seed, 42U);
  EXPECT_EQ(named_init_from_string("fully-truncated(0.5)").kind, InitKind::FullyTruncated);
  EXPECT_EQ(named_init_from_string("all-positive").kind, InitKind::AllPositive);
  EXPECT_THROW(named_init_from_string("random-orthogonal"), ConfigError);
  EXPECT_THROW(named_init_from_string("bogus"), ConfigError);
}

TEST(Run, InProcessOneDimLadder) {
  const fs::path dir = scratch("inproc");
  ScenarioConfig c = load_config(kScenarios / "oned_ladder.json");
  c.output = (dir / "out").string();
  const RunResult r = run(c);
  ASSERT_EQ(r.exit_code, kExitOk) << r.message;
  ASSERT_EQ(r.summary["event_times"].size(), 1U);
  EXPECT_NEAR(r.summary["event_times"][0].get<double>(), 2.0 * std::log(4.0 / 3.0), 1e-6);
  EXPECT_NEAR(r.summary["closed_form"]["event_times"][0].get<double>(), 2.0 * std::log(4.0 / 3.0), 1e-15);
}

TEST(Cli, RunsEveryScenario) {
  const fs::path dir = scratch("all");
  for (const auto& entry : fs::directory_iterator(kScenarios)) {
    if (entry.path().extension() != ".json") continue;
    ASSERT_EQ(cli(dir, "run \"" + entry.path().string() + "\""), 0) << entry.path() << "\n" << slurp(dir / "cli.log");
    const fs::path out = dir / read_json_file(entry.path())["output"].get<std::string>();
    for (const char* f : {"trajectory.csv", "events.csv", "summary.json"}) EXPECT_TRUE(fs::exists(out / f)) << out / f;
  }
}

TEST(Cli, OneDimLadderEventTime) {
  const fs::path dir = scratch("oned");
  ASSERT_EQ(cli(dir, "run \"" + (kScenarios / "oned_ladder.json").string() + "\""), 0);
  const auto rows = csv_rows(dir / "out/oned_ladder/events.csv");
  ASSERT_EQ(rows.size(), 2U);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"s", "layer", "cluster", "point", "coordinate", "direction"}));
  EXPECT_NEAR(std::stod(rows[1][0]), 2.0 * std::log(4.0 / 3.0), 1e-6);
  EXPECT_EQ(rows[1][5], "entering");
  const auto traj = csv_rows(dir / "out/oned_ladder/trajectory.csv");
  EXPECT_EQ(traj[0], (std::vector<std::string>{"s", "cost", "beta_gap_0", "omega_norm_0", "n_0_0"}));
}

TEST(Cli, CollapsedSummary) {
  const fs::path dir = scratch("collapsed");
  ASSERT_EQ(cli(dir, "run \"" + (kScenarios / "collapsed_spectral_gap.json").string() + "\""), 0);
  const Json s = read_json_file(dir / "out/collapsed_spectral_gap/summary.json");
  EXPECT_LE(s["conservation_drift"].get<double>(), 1e-6);
  EXPECT_LE(s["log_cost_slope"].get<double>(), -5.5);
}

TEST(Cli, AllPositiveHasNoEventsAndConstantCost) {
  const fs::path dir = scratch("positive");
  ASSERT_EQ(cli(dir, "run \"" + (kScenarios / "effective_all_positive.json").string() + "\""), 0);
  const Json s = read_json_file(dir / "out/effective_all_positive/summary.json");
  EXPECT_EQ(s["events"].get<int>(), 0);
  EXPECT_EQ(s["initial_cost"].get<double>(), s["final_cost"].get<double>());
  EXPECT_EQ(csv_rows(dir / "out/effective_all_positive/events.csv").size(), 1U);
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("codes");
  EXPECT_EQ(cli(dir, "run missing.json"), kExitInvalid);
  EXPECT_EQ(cli(dir, "frobnicate"), kExitInvalid);
  EXPECT_EQ(cli(dir, "verify nosuchsuite"), kExitInvalid);

  Json bad = read_json_file(kScenarios / "oned_ladder.json");
  bad["s_end"] = "soon";
  write(dir / "bad.json", bad);
  EXPECT_EQ(cli(dir, "run bad.json"), kExitInvalid);
  EXPECT_NE(slurp(dir / "cli.log").find("s_end"), std::string::npos);

  Json tight = read_json_file(kScenarios / "oned_ladder.json");
  tight["tolerances"] = Json{{"max_steps", 1}};
  write(dir / "tight.json", tight);
  EXPECT_EQ(cli(dir, "run tight.json"), kExitUnderflow);
}

TEST(Cli, DataPathIsRelativeToConfig) {
  const fs::path dir = scratch("relative");
  Json j = read_json_file(kScenarios / "general_overlapping.json");
  j["data"] = (kScenarios / "data/two_overlapping_clusters.json").string();
  j["s_end"] = 0.5;
  write(dir / "abs.json", j);
  EXPECT_EQ(cli(dir, "run abs.json"), 0) << slurp(dir / "cli.log");
  j["data"] = "nowhere/two_overlapping_clusters.json";
  write(dir / "rel.json", j);
  EXPECT_EQ(cli(dir, "run rel.json"), kExitInvalid);
}

TEST(Cli, DeterministicArtifacts) {
  const fs::path a = scratch("det_a");
  const fs::path b = scratch("det_b");
  const std::string arg = "run \"" + (kScenarios / "general_overlapping.json").string() + "\"";
  ASSERT_EQ(cli(a, arg), 0);
  ASSERT_EQ(cli(b, arg), 0);
  for (const char* f : {"trajectory.csv", "events.csv", "summary.json"}) {
    const std::string x = slurp(a / "out/general_overlapping" / f);
    EXPECT_FALSE(x.empty());
    EXPECT_EQ(x, slurp(b / "out/general_overlapping" / f)) << f;
  }
}

TEST(Cli, VerifyReportAndMutation) {
  const fs::path dir = scratch("verify");
  ASSERT_EQ(cli(dir, "verify conservation --seed 0 --out report.json"), 0) << slurp(dir / "cli.log");
  const Json rep = read_json_file(dir / "report.json");
  EXPECT_TRUE(rep["passed"].get<bool>());
  EXPECT_EQ(rep["suite"], "conservation");
  for (const auto& p : rep["properties"]) EXPECT_GE(p["cases"].get<int>(), 100);

  EXPECT_EQ(cli(dir, "verify gradients --flip-omega-sign --out flipped.json"), 1);
  const Json flipped = read_json_file(dir / "flipped.json");
  EXPECT_FALSE(flipped["passed"].get<bool>());
  bool effective_failed = false;
  for (const auto& p : flipped["properties"])
    if (p["name"] == "effective_rhs_vs_fd") effective_failed = !p["passed"].get<bool>();
  EXPECT_TRUE(effective_failed);
}
