#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "twoswitch/presets.hpp"
#include "twoswitch/scenario.hpp"

using namespace twoswitch;

namespace {

const std::string kMinimal = R"({
  "schema": "twoswitch-scenario/1",
  "mode": "open_loop",
  "model": {"A": 0.9, "C": 1, "V": 0.5, "W": 1, "x1": [0], "P1": 1},
  "channel": {"topology": {"h": 1, "m": 1, "o": 1, "inactivity": [0.5, 0.8, 0.8]}},
  "horizon": 50
})";

std::string scenario_path(const std::string& name) {
  return std::string(TWOSWITCH_SCENARIO_DIR) + "/" + name + ".json";
}

std::string error_of(const std::string& text) {
  try {
    parse_scenario(text);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

std::string replace(std::string s, const std::string& from, const std::string& to) {
  s.replace(s.find(from), from.size(), to);
  return s;
}

} // namespace

TEST(Scenario, MinimalScalarLoadsWithDefaults) {
  const Scenario s = parse_scenario(kMinimal);
  EXPECT_EQ(s.mode, Mode::open_loop);
  EXPECT_EQ(s.horizon, 50u);
  EXPECT_EQ(s.trials, 1u);
  EXPECT_EQ(s.noise_repair, NoiseRepair::symmetrize);
  EXPECT_EQ(s.model.A.rows(), 1);
  EXPECT_DOUBLE_EQ(s.model.A(0, 0), 0.9);
  EXPECT_TRUE(s.single_topology);
  EXPECT_DOUBLE_EQ(s.design_probabilities().p, 0.5);
  EXPECT_FALSE(s.stability.has_value());
}

TEST(Scenario, ShippedFilesEqualBuiltInPresets) {
  for (const std::string& name : presets::names()) {
    const auto preset = presets::scenario(name);
    if (!preset)
      continue;
    const Scenario file = load_scenario(scenario_path(name));
    EXPECT_EQ(to_json(file), to_json(*preset)) << name;
  }
}

TEST(Scenario, PendulumFileCarriesTheLiteralMatrices) {
  const Scenario s = load_scenario(scenario_path("pendulum-estimation"));
  EXPECT_EQ(s.model.A, presets::estimation_A());
  EXPECT_EQ(s.model.V, presets::estimation_V());
  EXPECT_DOUBLE_EQ(s.model.A(2, 2), 1.0518);
  EXPECT_DOUBLE_EQ(s.model.V(0, 1), 0.009);
  EXPECT_DOUBLE_EQ(s.model.V(1, 0), 0.006);
  EXPECT_EQ(s.noise_repair, NoiseRepair::nearest_spd);
  // The literal V is not a covariance; only the nearest-SPD repair makes it one.
  const SystemModel m = s.system_model();
  EXPECT_TRUE(numerics::is_positive_definite(m.V));
  Scenario sym = s;
  sym.noise_repair = NoiseRepair::symmetrize;
  EXPECT_THROW(sym.validate(), ValidationError);
}

TEST(Scenario, OutOfRangeProbabilityNamesFieldAndLine) {
  const std::string text = replace(kMinimal, "[0.5, 0.8, 0.8]", "[1.2, 0.8, 0.8]");
  const std::string err = error_of(text);
  EXPECT_NE(err.find("inactivity[0]"), std::string::npos) << err;
  EXPECT_NE(err.find("line 5"), std::string::npos) << err;
}

TEST(Scenario, ParseErrorsReportLineAndColumn) {
  const std::string text = replace(kMinimal, "\"horizon\": 50", "\"horizon\": 50,");
  const std::string err = error_of(text);
  EXPECT_NE(err.find("line 7"), std::string::npos) << err;
  EXPECT_NE(err.find("column"), std::string::npos) << err;
}

TEST(Scenario, MissingAndMistypedFields) {
  std::string err = error_of(replace(kMinimal, "\"horizon\": 50", "\"trials\": 2"));
  EXPECT_NE(err.find("horizon"), std::string::npos) << err;
  err = error_of(replace(kMinimal, "\"horizon\": 50", "\"horizon\": \"long\""));
  EXPECT_NE(err.find("horizon"), std::string::npos) << err;
  EXPECT_NE(err.find("line 6"), std::string::npos) << err;
  err = error_of(replace(kMinimal, "open_loop", "sideways"));
  EXPECT_NE(err.find("mode"), std::string::npos) << err;
  err = error_of(replace(kMinimal, "twoswitch-scenario/1", "other/2"));
  EXPECT_NE(err.find("schema"), std::string::npos) << err;
  err = error_of(replace(kMinimal, "\"x1\": [0]", "\"x1\": [0, 1]"));
  EXPECT_NE(err.find("model.x1"), std::string::npos) << err;
  err = error_of(replace(kMinimal, "\"V\": 0.5", "\"V\": -0.5"));
  EXPECT_NE(err.find("model.V"), std::string::npos) << err;
  EXPECT_NE(err.find("line 4"), std::string::npos) << err;
}

TEST(Scenario, ClosedLoopNeedsInputMatrixAndController) {
  const std::string cl = replace(kMinimal, "open_loop", "closed_loop");
  EXPECT_NE(error_of(cl).find("model.B"), std::string::npos);
  const std::string with_b = replace(cl, "\"A\": 0.9,", "\"A\": 0.9, \"B\": 1,");
  EXPECT_NE(error_of(with_b).find("controller"), std::string::npos);
  const std::string full = replace(with_b, "\"horizon\": 50",
                                   "\"controller\": {\"type\": \"fixed\", \"F\": [[0.4]]}, \"horizon\": 50");
  const Scenario s = parse_scenario(full);
  EXPECT_DOUBLE_EQ(s.build_controller().F(0, 0), 0.4);
}

TEST(Scenario, MultiChannelSelection) {
  const std::string text = replace(
      kMinimal, R"("channel": {"topology": {"h": 1, "m": 1, "o": 1, "inactivity": [0.5, 0.8, 0.8]}})",
      R"("channel": {"channels": [{"h": 1, "m": 0, "o": 0, "inactivity": [0.9]},
                              {"h": 0, "m": 1, "o": 0, "inactivity": [0.4]}],
                 "selection": [0, 1, 1]})");
  const Scenario s = parse_scenario(text);
  EXPECT_FALSE(s.single_topology);
  EXPECT_EQ(s.channel.selection, (std::vector<std::size_t>{0, 1, 1}));
  EXPECT_NE(error_of(replace(text, "[0, 1, 1]", "[0, 3]")).find("selection[1]"), std::string::npos);
}

TEST(Scenario, JsonRoundTrip) {
  for (const std::string& name : presets::names()) {
    const auto preset = presets::scenario(name);
    if (!preset)
      continue;
    const json j = to_json(*preset);
    const Scenario back = parse_scenario(j.dump());
    EXPECT_EQ(to_json(back), j) << name;
  }
  const json j = to_json(parse_scenario(kMinimal));
  EXPECT_EQ(to_json(parse_scenario(j.dump(2))), j);
}

TEST(Scenario, LoadPrefixesPathAndRejectsMissingFile) {
  EXPECT_THROW(load_scenario("/nonexistent/none.json"), ValidationError);
  const std::string path = testing::TempDir() + "bad_scenario.json";
  std::ofstream(path) << replace(kMinimal, "[0.5, 0.8, 0.8]", "[0.5, 0.8]");
  try {
    load_scenario(path);
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(path), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("inactivity"), std::string::npos);
  }
}
