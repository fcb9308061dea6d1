#pragma once

// Subcommands behind the command-line tool. Each returns a process exit code:
// 0 success, 1 assumption-validation failure, 2 runtime or numeric failure,
// 3 configuration error.

#include "zsde/coefficient_field.hpp"
#include "zsde/config.hpp"
#include "zsde/diagnostics.hpp"
#include "zsde/errors.hpp"
#include "zsde/models.hpp"
#include "zsde/path_engine.hpp"
#include "zsde/surface_chart.hpp"
#include "zsde/transform_chart.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace zsde {

enum ExitCode : int { kExitOk = 0, kExitAssumption = 1, kExitRuntime = 2, kExitConfig = 3 };

namespace detail {

inline std::filesystem::path prepare_output(const RunConfig& c) {
  namespace fs = std::filesystem;
  const fs::path dir(c.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ConfigError("cannot create output directory '" + c.out_dir + "'");
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream f(probe);
    if (!f) throw ConfigError("output directory '" + c.out_dir + "' is not writable");
  }
  fs::remove(probe, ec);
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw SimulationError("cannot write '" + path.string() + "'");
  f << text;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace detail

/// Runs every validator on a box grid around x0.
inline int cmd_validate(const RunConfig& c, std::ostream& out) {
  const Model m = build_model(c);
  check_config(c);
  const auto dir = detail::prepare_output(c);
  const Grid grid = box_grid(m.x0, c.validate.half_width, c.validate.points_per_dim);
  const CoefficientField& f = *m.field;
  ValidationReport report = validate_ellipticity(f, grid, c.ellipticity);
  report.merge(validate_growth(f, grid));
  for (Half h : {Half::plus, Half::minus}) report.merge(probe_smoothness(f, h, c.validate.smoothness_order, grid));
  if (m.surface) report.merge(validate_transversality(*m.surface, f, grid, c.transversality));
  nlohmann::json j = report.to_json();
  j["model"] = m.name;
  j["passed"] = report.passed();
  detail::write_json(dir / "validation.json", j);
  if (c.json) {
    out << j.dump(2) << '\n';
  } else {
    for (const auto& v : report.verdicts)
      out << (v.pass ? "pass " : (v.advisory ? "note " : "FAIL ")) << v.assumption << ": " << v.detail << '\n';
    out << (report.passed() ? "all assumptions hold on the grid" : "assumption check failed") << '\n';
  }
  return report.passed() ? kExitOk : kExitAssumption;
}

/// Builds a chart at x0 and checks the ODE residuals, the roundtrip and the drift jump.
inline int cmd_transform_check(const RunConfig& c, std::ostream& out) {
  const Model m = build_model(c);
  check_config(c);
  const auto dir = detail::prepare_output(c);
  const Vec y0 = m.to_working(m.x0);
  TransformChart chart;
  try {
    chart = build_chart(m.working, y0, c.sim.chart_radius, c.sim.chart);
  } catch (const ChartBuildError& e) {
    nlohmann::json j{{"error", e.what()}, {"stage", "chart"}};
    detail::write_json(dir / "diagnostics.json", j);
    if (c.json)
      out << j.dump(2) << '\n';
    else
      out << "chart build failed: " << e.what() << '\n';
    return kExitRuntime;
  }
  DiagnosticsReport report;
  const std::size_t n = c.transform_check.samples;
  report.ode_residual_max = ode_residual(chart, ball_sample(chart, n, 7, 1e-6));
  report.roundtrip = roundtrip_error(chart, ball_sample(chart, n, 8));
  bool ok = report.roundtrip->failures == 0 && report.roundtrip->max_error <= c.roundtrip;
  for (double r : report.ode_residual_max) ok = ok && r <= c.ode_residual;
  if (std::abs(chart.center()(0)) < chart.radius()) {
    report.drift_jump = drift_jump(chart, hyperplane_grid(chart, c.transform_check.hyperplane_points));
    ok = ok && report.drift_jump->transformed <= c.drift_jump;
  } else {
    report.notes.push_back("chart ball does not meet the hyperplane; drift jump not measured");
  }
  report.notes.push_back("uniqueness of solutions cannot be checked numerically; only route consistency is tested");
  nlohmann::json j = report.to_json();
  j["chart"] = {{"center", std::vector<double>(chart.center().data(), chart.center().data() + chart.dim())},
                {"radius", chart.radius()},
                {"certified_floor", chart.certified_floor()}};
  j["passed"] = ok;
  detail::write_json(dir / "diagnostics.json", j);
  detail::write_json(dir / "chart.json", chart.to_json());
  if (c.json) {
    out << j.dump(2) << '\n';
  } else {
    out << "chart radius " << detail::fmt(chart.radius()) << '\n';
    report.print_table(out);
    out << (ok ? "transform check passed" : "transform check failed") << '\n';
  }
  return ok ? kExitOk : kExitRuntime;
}

/// Simulates the configured paths and writes trajectories and a summary.
inline int cmd_simulate(const RunConfig& c, std::ostream& out) {
  const Model m = build_model(c);
  check_config(c);
  const auto phi = build_functional(c.functional, m.dim());
  const auto dir = detail::prepare_output(c);
  const Simulator sim(m, c.sim);
  const std::size_t n_export = std::min(c.export_paths, c.sim.n_paths);
  std::vector<Trajectory> exported(n_export);
  const auto samples = for_each_path<PathSample>(c.sim.n_paths, c.sim.threads, [&](std::size_t i) {
    if (i < n_export) {
      Trajectory& tr = exported[i];
      tr.seed_used = c.sim.base_seed;
      tr.path_index = i;
      PathSample s = sample_path(sim, m.x0, i, phi, [&](std::size_t, double t, const Vec& x, double) {
        tr.times.push_back(t);
        tr.states.push_back(x);
      });
      tr.termination = s.termination;
      tr.chart_rebuilds = s.rebuilds;
      tr.max_overshoot = s.max_overshoot;
      return s;
    }
    return sample_path(sim, m.x0, i, phi, [](auto&&...) {});
  });
  const MonteCarloResult r = reduce_samples(samples);

  namespace fs = std::filesystem;
  if (c.format == "csv") {
    const fs::path pdir = dir / "paths";
    fs::create_directories(pdir);
    for (const auto& tr : exported) {
      char name[32];
      std::snprintf(name, sizeof name, "path_%06zu.csv", tr.path_index);
      std::ostringstream os;
      write_csv(os, tr);
      detail::write_text(pdir / name, os.str());
    }
  } else {
    std::ostringstream os;
    for (const auto& tr : exported) write_jsonl(os, tr);
    detail::write_text(dir / "trajectories.jsonl", os.str());
  }
  nlohmann::json j = r.to_json();
  if (r.n_effective == 0) {
    j["estimate"] = nullptr;
    j["std_error"] = nullptr;
  }
  j["model"] = m.name;
  j["scheme"] = to_string(c.sim.scheme);
  j["functional"] = c.functional;
  j["seed"] = c.sim.base_seed;
  j["step"] = c.sim.step;
  j["horizon"] = c.sim.horizon;
  if (m.clamp) j["max_overshoot"] = r.max_overshoot;
  detail::write_json(dir / "summary.json", j);

  const std::size_t abnormal = r.n_paths - r.n_effective;
  const bool ok = static_cast<double>(abnormal) <= c.abnormal_fraction * static_cast<double>(r.n_paths);
  if (c.json) {
    out << j.dump(2) << '\n';
  } else {
    out << "paths " << r.n_paths << ", reached horizon " << r.n_effective << '\n';
    for (const auto& [k, v] : r.terminations) out << "  " << k << ": " << v << '\n';
    if (r.n_effective > 0)
      out << "E[" << c.functional << "] = " << detail::fmt(r.estimate) << " +- " << detail::fmt(r.std_error) << '\n';
    if (c.sim.scheme == Scheme::transformed) out << "chart rebuilds " << r.n_rebuilds_total << '\n';
    if (!r.first_error.empty()) out << "first error: " << r.first_error << '\n';
  }
  return ok ? kExitOk : kExitRuntime;
}

/// Euler iteration of x' = 1/2 - sgn(x) for each step size; optional noisy contrast run.
inline int cmd_counterexample(const RunConfig& c, std::ostream& out) {
  check_config(c);
  const auto dir = detail::prepare_output(c);
  const auto& ce = c.counterexample;
  nlohmann::json j;
  j["sgn0"] = ce.sgn0;
  j["runs"] = nlohmann::json::array();
  bool ok = true;
  std::ostringstream text;
  for (double h : ce.steps) {
    const Trajectory tr = counterexample_run(h, ce.horizon, ce.sgn0);
    double max_abs = 0.0;
    for (const auto& x : tr.states) max_abs = std::max(max_abs, std::abs(x(0)));
    // two-cycle 0, h/2 for sgn(0) = 0; cycles -h/2, h, h/2, 0 and 3h/2, h, h/2, 0 otherwise
    const double bound = 0.5 * h * (ce.sgn0 == 0 ? 1.0 : (ce.sgn0 > 0 ? 2.0 : 3.0));
    const bool holds = max_abs <= bound;
    ok = ok && holds;
    char name[48];
    std::snprintf(name, sizeof name, "counterexample_h%g.csv", h);
    std::ostringstream os;
    write_csv(os, tr);
    detail::write_text(dir / name, os.str());
    j["runs"].push_back({{"h", h}, {"max_abs", max_abs}, {"bound", bound}, {"collapses", holds}});
    text << "h=" << detail::fmt(h) << " max|x|=" << detail::fmt(max_abs) << " bound=" << detail::fmt(bound) << " "
         << (holds ? "collapse" : "VIOLATED") << '\n';
  }
  if (ce.noise) {
    SimConfig sc = c.sim;
    sc.step = ce.noise_step;
    sc.horizon = ce.noise_horizon;
    sc.n_paths = ce.noise_paths;
    const EscapeResult esc = counterexample_contrast(sc, ce.bound);
    const bool escapes = esc.fraction() >= 0.99;
    ok = ok && escapes;
    j["contrast"] = {{"paths", esc.n_paths},
                     {"escaped", esc.escaped},
                     {"fraction", esc.fraction()},
                     {"bound", ce.bound},
                     {"horizon", ce.noise_horizon},
                     {"verdict", escapes ? "escapes" : "stays"}};
    text << "with unit noise: " << esc.escaped << " of " << esc.n_paths << " paths leave [-" << detail::fmt(ce.bound)
         << ", " << detail::fmt(ce.bound) << "] before T=" << detail::fmt(ce.noise_horizon) << ": "
         << (escapes ? "escapes" : "stays") << '\n';
  }
  j["passed"] = ok;
  detail::write_json(dir / "counterexample.json", j);
  if (c.json)
    out << j.dump(2) << '\n';
  else
    out << text.str();
  return ok ? kExitOk : kExitRuntime;
}

/// Weak comparison of the direct and transformed routes.
inline int cmd_compare(const RunConfig& c, std::ostream& out) {
  const Model m = build_model(c);
  check_config(c);
  const auto phi = build_functional(c.functional, m.dim());
  const auto dir = detail::prepare_output(c);
  WeakComparison w;
  try {
    w = compare_weak(m, m.x0, c.sim, phi, c.compare.matched_streams, c.compare.min_completion);
  } catch (const ComparisonError& e) {
    nlohmann::json j{{"error", e.what()}};
    detail::write_json(dir / "comparison.json", j);
    if (c.json)
      out << j.dump(2) << '\n';
    else
      out << "comparison failed: " << e.what() << '\n';
    return kExitRuntime;
  }
  nlohmann::json j = w.to_json();
  j["model"] = m.name;
  j["functional"] = c.functional;
  j["z_bound"] = c.z_bound;
  j["passed"] = w.z_score <= c.z_bound;
  detail::write_json(dir / "comparison.json", j);
  if (c.json) {
    out << j.dump(2) << '\n';
  } else {
    DiagnosticsReport rep;
    rep.weak_comparison = w;
    rep.print_table(out);
    out << (w.z_score <= c.z_bound ? "routes agree" : "routes disagree") << '\n';
  }
  return w.z_score <= c.z_bound ? kExitOk : kExitRuntime;
}

/// Dispatches a subcommand and maps exceptions to exit codes.
inline int run_command(const std::string& name, const RunConfig& c, std::ostream& out, std::ostream& err) {
  try {
    if (name == "validate") return cmd_validate(c, out);
    if (name == "transform-check") return cmd_transform_check(c, out);
    if (name == "simulate") return cmd_simulate(c, out);
    if (name == "counterexample") return cmd_counterexample(c, out);
    if (name == "compare") return cmd_compare(c, out);
    err << "unknown command '" << name << "'\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace zsde
