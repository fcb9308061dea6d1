#include "zsde/commands.hpp"
#include "zsde/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace zsde;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("zsde_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, DefaultsWhenEmpty) {
  const RunConfig c = parse_config("");
  EXPECT_EQ(c.model, "dividend");
  EXPECT_EQ(c.sim.step, 1e-3);
  EXPECT_EQ(c.sim.scheme, Scheme::direct);
  EXPECT_EQ(c.counterexample.steps.size(), 3u);
  const Model m = build_model(c);
  EXPECT_EQ(m.dim(), 2);
  EXPECT_TRUE(m.clamp.has_value());
}

TEST(Config, ReadsSections) {
  const RunConfig c = parse_config(R"(
[model]
name = "dividend"
kappa = 2.0
sigma = 0.7
x0 = [0.1, 0.4]
[simulation]
step = 0.01
paths = 42
seed = 9
scheme = "transformed"
[output]
format = "jsonl"
[counterexample]
steps = [0.2]
sgn0 = -1
)");
  EXPECT_EQ(c.dividend.kappa, 2.0);
  EXPECT_EQ(c.dividend.sigma, 0.7);
  EXPECT_EQ(c.sim.n_paths, 42u);
  EXPECT_EQ(c.sim.base_seed, 9u);
  EXPECT_EQ(c.sim.scheme, Scheme::transformed);
  EXPECT_EQ(c.format, "jsonl");
  EXPECT_EQ(c.counterexample.sgn0, -1);
  const Model m = build_model(c);
  EXPECT_EQ(m.x0, make_vec({0.1, 0.4}));
  EXPECT_NEAR(m.field->drift(make_vec({1.0, 0.4}))(0), 0.4 - 2.0, 1e-15);
}

TEST(Config, ErrorsAreConfigErrors) {
  EXPECT_THROW(parse_config("[model\n"), ConfigError);
  EXPECT_THROW(parse_config("[simulation]\nstpe = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[nothing]\n"), ConfigError);
  EXPECT_THROW(parse_config("[simulation]\nstep = \"big\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[simulation]\nscheme = \"other\"\n"), ConfigError);
  EXPECT_THROW(parse_config("[simulation]\npaths = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\ndim = 0\n"), ConfigError);
  EXPECT_THROW(parse_config("[model]\nboundary_side = \"left\"\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/zsde.toml"), ConfigError);
}

TEST(Config, ModelErrorsAreConfigErrors) {
  RunConfig c;
  c.model = "nothing";
  EXPECT_THROW(build_model(c), ConfigError);
  c.model = "dividend";
  c.dividend.sigma = 0.0;
  EXPECT_THROW(build_model(c), ConfigError);
  c = RunConfig{};
  c.x0 = make_vec({1.0, 2.0, 3.0});
  EXPECT_THROW(build_model(c), ConfigError);
  c = parse_config("[model]\nname = \"custom\"\ndim = 1\ndrift_plus = [\"x1 +\"]\ndrift_minus = [\"0\"]\n"
                   "diffusion = [[\"1\"]]\n");
  EXPECT_THROW(build_model(c), ConfigError);
  EXPECT_THROW(build_functional("x3", 2), ConfigError);
  EXPECT_DOUBLE_EQ(build_functional("x1*x2 + 1", 2)(make_vec({2.0, 3.0})), 7.0);
}

TEST(Config, ShippedConfigsLoad) {
  for (const auto& entry : std::filesystem::directory_iterator(ZSDE_SOURCE_DIR "/configs")) {
    if (entry.path().extension() != ".toml") continue;
    SCOPED_TRACE(entry.path().string());
    const RunConfig c = load_config(entry.path().string());
    EXPECT_NO_THROW(check_config(c));
    EXPECT_NO_THROW(build_model(c));
  }
}

TEST(Commands, ValidateAndExitCodes) {
  RunConfig c;
  c.out_dir = scratch("validate").string();
  std::ostringstream out, err;
  EXPECT_EQ(run_command("validate", c, out, err), kExitOk);
  EXPECT_TRUE(std::filesystem::exists(c.out_dir + "/validation.json"));

  c.dividend.sigma = 0.5;
  EXPECT_EQ(run_command("validate", c, out, err), kExitAssumption);

  c = RunConfig{};
  c.model = "nothing";
  c.out_dir = scratch("bad").string();
  EXPECT_EQ(run_command("validate", c, out, err), kExitConfig);
  EXPECT_EQ(run_command("no-such-command", RunConfig{}, out, err), kExitConfig);
}

TEST(Commands, CounterexampleWritesVerdicts) {
  RunConfig c;
  c.out_dir = scratch("counterexample").string();
  c.json = true;
  std::ostringstream out, err;
  ASSERT_EQ(run_command("counterexample", c, out, err), kExitOk);
  const auto j = nlohmann::json::parse(out.str());
  EXPECT_TRUE(j["passed"].get<bool>());
  for (const char* h : {"0.1", "0.01", "0.001"})
    EXPECT_TRUE(std::filesystem::exists(c.out_dir + "/counterexample_h" + h + ".csv")) << h;
}

TEST(Commands, TransformCheckReportsFailureAsRuntime) {
  RunConfig c;
  c.out_dir = scratch("transform").string();
  std::ostringstream out, err;
  EXPECT_EQ(run_command("transform-check", c, out, err), kExitOk);
  std::ifstream in(c.out_dir + "/diagnostics.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_LE(j["drift_jump"]["transformed"].get<double>(), 1e-6);
  EXPECT_NEAR(j["drift_jump"]["original"].get<double>(), 1.0, 1e-12);

  c.sim.chart_radius = 1e3;
  c.sim.chart.force_radius = true;
  EXPECT_EQ(run_command("transform-check", c, out, err), kExitRuntime);
}
