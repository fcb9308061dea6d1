#include "zsde/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> paths;
  std::optional<double> step;
  std::optional<double> horizon;
  std::optional<std::string> scheme;
  std::optional<std::string> model;
  std::optional<std::size_t> threads;
  bool json = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "TOML run configuration");
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("-o,--out", o.out, "output directory");
  cmd->add_option("--paths", o.paths, "number of paths");
  cmd->add_option("--step", o.step, "step size h");
  cmd->add_option("--horizon", o.horizon, "time horizon T");
  cmd->add_option("--scheme", o.scheme, "direct or transformed");
  cmd->add_option("--model", o.model, "dividend, counterexample, piecewise-constant, zero-drift or custom");
  cmd->add_option("--threads", o.threads, "worker threads (0 = hardware)");
  cmd->add_flag("--json", o.json, "print machine-readable JSON only");
}

zsde::RunConfig resolve(const Overrides& o) {
  zsde::RunConfig c = o.config.empty() ? zsde::RunConfig{} : zsde::load_config(o.config);
  if (o.model) c.model = *o.model;
  if (o.seed) c.sim.base_seed = *o.seed;
  if (o.out) c.out_dir = *o.out;
  if (o.paths) c.sim.n_paths = *o.paths;
  if (o.step) c.sim.step = *o.step;
  if (o.horizon) c.sim.horizon = *o.horizon;
  if (o.scheme) c.sim.scheme = zsde::parse_scheme(*o.scheme);
  if (o.threads) c.sim.threads = *o.threads;
  if (o.json) c.json = true;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation of SDEs with drift discontinuous across a hypersurface"};
  app.require_subcommand(1);
  Overrides o;
  for (const char* name : {"validate", "transform-check", "simulate", "counterexample", "compare"})
    add_common(app.add_subcommand(name), o);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return zsde::kExitConfig;
  }
  const std::string name = app.get_subcommands().front()->get_name();
  zsde::RunConfig c;
  try {
    c = resolve(o);
  } catch (const zsde::Error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return zsde::kExitConfig;
  }
  return zsde::run_command(name, c, std::cout, std::cerr);
}
