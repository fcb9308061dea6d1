#pragma once

// Run configuration read from TOML with sections [model], [simulation],
// [tolerances], [output] and per-command tables.

#include "zsde/errors.hpp"
#include "zsde/expression.hpp"
#include "zsde/models.hpp"
#include "zsde/path_engine.hpp"

#define TOML_EXCEPTIONS 1
#include <toml.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace zsde {

struct ValidateOptions {
  double half_width = 0.5;
  int points_per_dim = 9;
  int smoothness_order = 3;
};

struct TransformCheckOptions {
  std::size_t samples = 1000;
  std::size_t hyperplane_points = 101;
};

struct CounterexampleOptions {
  std::vector<double> steps{0.1, 0.01, 0.001};
  double horizon = 1.0;
  int sgn0 = 0;
  bool noise = false;
  double noise_horizon = 10.0;
  double noise_step = 1e-3;
  std::size_t noise_paths = 1000;
  double bound = 1.0;
};

struct CompareOptions {
  bool matched_streams = false;
  double min_completion = 0.9;
};

struct RunConfig {
  std::string model = "dividend";
  DividendParams dividend;
  double pc_a = 0.5;
  std::optional<double> pc_m;
  int zero_dim = 2;
  CustomSpec custom;
  std::optional<Vec> x0;

  SimConfig sim;
  /// phi(X_T) for Monte Carlo summaries, in x1..xd.
  std::string functional = "x1";

  double ellipticity = 0.1;
  double transversality = 0.1;
  double ode_residual = 1e-6;
  double roundtrip = 1e-10;
  double drift_jump = 1e-6;
  double z_bound = 3.0;
  double abnormal_fraction = 0.1;

  std::string out_dir = "out";
  std::string format = "csv";
  std::size_t export_paths = 10;
  bool json = false;

  ValidateOptions validate;
  TransformCheckOptions transform_check;
  CounterexampleOptions counterexample;
  CompareOptions compare;
};

namespace detail {

inline void check_keys(const toml::table& t, const std::string& where, const std::set<std::string>& allowed) {
  for (const auto& [k, v] : t)
    if (!allowed.count(std::string(k.str())))
      throw ConfigError("unknown key '" + std::string(k.str()) + "' in [" + where + "]");
}

inline const toml::table* section(const toml::table& root, const std::string& name) {
  const toml::node* n = root.get(name);
  if (!n) return nullptr;
  if (!n->is_table()) throw ConfigError("[" + name + "] must be a table");
  return n->as_table();
}

inline double get_double(const toml::table& t, const std::string& key, double fallback) {
  const toml::node* n = t.get(key);
  if (!n) return fallback;
  if (auto v = n->value<double>()) return *v;
  throw ConfigError("'" + key + "' must be a number");
}

inline std::int64_t get_int(const toml::table& t, const std::string& key, std::int64_t fallback) {
  const toml::node* n = t.get(key);
  if (!n) return fallback;
  if (n->is_integer()) return *n->value<std::int64_t>();
  throw ConfigError("'" + key + "' must be an integer");
}

inline bool get_bool(const toml::table& t, const std::string& key, bool fallback) {
  const toml::node* n = t.get(key);
  if (!n) return fallback;
  if (auto v = n->value<bool>()) return *v;
  throw ConfigError("'" + key + "' must be true or false");
}

inline std::string get_string(const toml::table& t, const std::string& key, const std::string& fallback) {
  const toml::node* n = t.get(key);
  if (!n) return fallback;
  if (auto v = n->value<std::string>()) return *v;
  throw ConfigError("'" + key + "' must be a string");
}

inline std::vector<double> get_numbers(const toml::table& t, const std::string& key) {
  const toml::node* n = t.get(key);
  if (!n || !n->is_array()) throw ConfigError("'" + key + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& e : *n->as_array()) {
    auto v = e.value<double>();
    if (!v) throw ConfigError("'" + key + "' must contain only numbers");
    out.push_back(*v);
  }
  return out;
}

inline std::vector<std::string> get_strings(const toml::node& n, const std::string& key) {
  if (!n.is_array()) throw ConfigError("'" + key + "' must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : *n.as_array()) {
    if (auto v = e.value<std::string>()) {
      out.push_back(*v);
    } else if (auto d = e.value<double>()) {
      std::ostringstream os;
      os.precision(17);
      os << *d;
      out.push_back(os.str());
    } else {
      throw ConfigError("'" + key + "' must contain expressions");
    }
  }
  return out;
}

inline void positive(double v, const std::string& name) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(name + " must be positive");
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text, const std::string& source = "config") {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(os.str());
  }
  using namespace detail;
  RunConfig c;
  check_keys(root, "root", {"model", "simulation", "tolerances", "output", "validate", "transform_check",
                            "counterexample", "compare"});

  if (const auto* m = section(root, "model")) {
    check_keys(*m, "model",
               {"name", "kappa", "sigma", "theta1", "theta2", "boundary", "x0", "a", "m", "dim", "drift_plus",
                "drift_minus", "diffusion", "surface", "boundary_side", "constants"});
    c.model = get_string(*m, "name", c.model);
    c.dividend.kappa = get_double(*m, "kappa", c.dividend.kappa);
    c.dividend.sigma = get_double(*m, "sigma", c.dividend.sigma);
    c.dividend.theta1 = get_double(*m, "theta1", c.dividend.theta1);
    c.dividend.theta2 = get_double(*m, "theta2", c.dividend.theta2);
    c.dividend.boundary = get_string(*m, "boundary", c.dividend.boundary);
    if (m->get("x0")) c.x0 = make_vec(get_numbers(*m, "x0"));
    c.pc_a = get_double(*m, "a", c.pc_a);
    if (m->get("m")) c.pc_m = get_double(*m, "m", 0.0);
    const auto dim = get_int(*m, "dim", c.model == "zero-drift" ? 2 : 1);
    if (dim < 1 || dim > kMaxDim) throw ConfigError("dim must be between 1 and " + std::to_string(kMaxDim));
    c.zero_dim = static_cast<int>(dim);
    c.custom.dim = static_cast<int>(dim);
    if (const auto* n = m->get("drift_plus")) c.custom.drift_plus = get_strings(*n, "drift_plus");
    if (const auto* n = m->get("drift_minus")) c.custom.drift_minus = get_strings(*n, "drift_minus");
    if (const auto* n = m->get("diffusion")) {
      if (!n->is_array()) throw ConfigError("'diffusion' must be an array of rows");
      for (const auto& row : *n->as_array()) c.custom.diffusion.push_back(get_strings(row, "diffusion"));
    }
    c.custom.surface = get_string(*m, "surface", c.custom.surface);
    const std::string side = get_string(*m, "boundary_side", "plus");
    if (side == "plus")
      c.custom.boundary = BoundarySide::plus;
    else if (side == "minus")
      c.custom.boundary = BoundarySide::minus;
    else if (side == "midpoint")
      c.custom.boundary = BoundarySide::midpoint;
    else
      throw ConfigError("boundary_side must be plus, minus or midpoint");
    if (const auto* k = section(*m, "constants"))
      for (const auto& [name, v] : *k) {
        auto d = v.value<double>();
        if (!d) throw ConfigError("constant '" + std::string(name.str()) + "' must be a number");
        c.custom.constants[std::string(name.str())] = *d;
      }
  }

  if (const auto* s = section(root, "simulation")) {
    check_keys(*s, "simulation",
               {"step", "horizon", "paths", "seed", "explosion_guard", "exit_fraction", "scheme", "chart_radius",
                "clamp", "threads", "functional"});
    c.sim.step = get_double(*s, "step", c.sim.step);
    c.sim.horizon = get_double(*s, "horizon", c.sim.horizon);
    const auto paths = get_int(*s, "paths", static_cast<std::int64_t>(c.sim.n_paths));
    if (paths < 1) throw ConfigError("paths must be positive");
    c.sim.n_paths = static_cast<std::size_t>(paths);
    c.sim.base_seed = static_cast<std::uint64_t>(get_int(*s, "seed", static_cast<std::int64_t>(c.sim.base_seed)));
    c.sim.explosion_guard = get_double(*s, "explosion_guard", c.sim.explosion_guard);
    c.sim.exit_fraction = get_double(*s, "exit_fraction", c.sim.exit_fraction);
    c.sim.scheme = parse_scheme(get_string(*s, "scheme", to_string(c.sim.scheme)));
    c.sim.chart_radius = get_double(*s, "chart_radius", c.sim.chart_radius);
    c.sim.clamp = get_bool(*s, "clamp", c.sim.clamp);
    const auto threads = get_int(*s, "threads", 0);
    if (threads < 0) throw ConfigError("threads must be nonnegative");
    c.sim.threads = static_cast<unsigned>(threads);
    c.functional = get_string(*s, "functional", c.functional);
  }

  if (const auto* t = section(root, "tolerances")) {
    check_keys(*t, "tolerances",
               {"quadrature", "newton", "newton_max_iter", "delta_inv", "min_radius", "max_exponent", "force_radius",
                "ellipticity", "transversality", "ode_residual", "roundtrip", "drift_jump", "z_bound", "abnormal_fraction"});
    auto& ch = c.sim.chart;
    ch.quadrature = get_double(*t, "quadrature", ch.quadrature);
    ch.newton = get_double(*t, "newton", ch.newton);
    ch.newton_max_iter = static_cast<int>(get_int(*t, "newton_max_iter", ch.newton_max_iter));
    ch.delta_inv = get_double(*t, "delta_inv", ch.delta_inv);
    ch.min_radius = get_double(*t, "min_radius", ch.min_radius);
    ch.max_exponent = get_double(*t, "max_exponent", ch.max_exponent);
    ch.force_radius = get_bool(*t, "force_radius", ch.force_radius);
    c.ellipticity = get_double(*t, "ellipticity", c.ellipticity);
    c.transversality = get_double(*t, "transversality", c.transversality);
    c.ode_residual = get_double(*t, "ode_residual", c.ode_residual);
    c.roundtrip = get_double(*t, "roundtrip", c.roundtrip);
    c.drift_jump = get_double(*t, "drift_jump", c.drift_jump);
    c.z_bound = get_double(*t, "z_bound", c.z_bound);
    c.abnormal_fraction = get_double(*t, "abnormal_fraction", c.abnormal_fraction);
    if (ch.newton_max_iter < 1) throw ConfigError("newton_max_iter must be positive");
  }

  if (const auto* o = section(root, "output")) {
    check_keys(*o, "output", {"dir", "format", "export_paths", "json"});
    c.out_dir = get_string(*o, "dir", c.out_dir);
    c.format = get_string(*o, "format", c.format);
    const auto n = get_int(*o, "export_paths", static_cast<std::int64_t>(c.export_paths));
    if (n < 0) throw ConfigError("export_paths must be nonnegative");
    c.export_paths = static_cast<std::size_t>(n);
    c.json = get_bool(*o, "json", c.json);
  }

  if (const auto* v = section(root, "validate")) {
    check_keys(*v, "validate", {"half_width", "points_per_dim", "smoothness_order"});
    c.validate.half_width = get_double(*v, "half_width", c.validate.half_width);
    c.validate.points_per_dim = static_cast<int>(get_int(*v, "points_per_dim", c.validate.points_per_dim));
    c.validate.smoothness_order = static_cast<int>(get_int(*v, "smoothness_order", c.validate.smoothness_order));
  }

  if (const auto* v = section(root, "transform_check")) {
    check_keys(*v, "transform_check", {"samples", "hyperplane_points"});
    c.transform_check.samples = static_cast<std::size_t>(get_int(*v, "samples", 1000));
    c.transform_check.hyperplane_points = static_cast<std::size_t>(get_int(*v, "hyperplane_points", 101));
  }

  if (const auto* v = section(root, "counterexample")) {
    check_keys(*v, "counterexample",
               {"steps", "horizon", "sgn0", "noise", "noise_horizon", "noise_step", "noise_paths", "bound"});
    auto& ce = c.counterexample;
    if (v->get("steps")) ce.steps = get_numbers(*v, "steps");
    ce.horizon = get_double(*v, "horizon", ce.horizon);
    ce.sgn0 = static_cast<int>(get_int(*v, "sgn0", ce.sgn0));
    ce.noise = get_bool(*v, "noise", ce.noise);
    ce.noise_horizon = get_double(*v, "noise_horizon", ce.noise_horizon);
    ce.noise_step = get_double(*v, "noise_step", ce.noise_step);
    ce.noise_paths = static_cast<std::size_t>(get_int(*v, "noise_paths", static_cast<std::int64_t>(ce.noise_paths)));
    ce.bound = get_double(*v, "bound", ce.bound);
  }

  if (const auto* v = section(root, "compare")) {
    check_keys(*v, "compare", {"matched_streams", "min_completion"});
    c.compare.matched_streams = get_bool(*v, "matched_streams", c.compare.matched_streams);
    c.compare.min_completion = get_double(*v, "min_completion", c.compare.min_completion);
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

/// Checks that do not depend on how the fields were combined.
inline void check_config(const RunConfig& c) {
  using detail::positive;
  c.sim.check();
  positive(c.sim.chart.quadrature, "quadrature tolerance");
  positive(c.sim.chart.newton, "newton tolerance");
  positive(c.sim.chart.delta_inv, "delta_inv");
  positive(c.sim.chart.min_radius, "min_radius");
  positive(c.sim.chart.max_exponent, "max_exponent");
  positive(c.ellipticity, "ellipticity constant");
  positive(c.transversality, "transversality constant");
  positive(c.ode_residual, "ode_residual tolerance");
  positive(c.roundtrip, "roundtrip tolerance");
  positive(c.drift_jump, "drift_jump tolerance");
  positive(c.z_bound, "z_bound");
  if (!(c.abnormal_fraction >= 0.0 && c.abnormal_fraction <= 1.0))
    throw ConfigError("abnormal_fraction must lie in [0, 1]");
  if (c.format != "csv" && c.format != "jsonl") throw ConfigError("output format must be csv or jsonl");
  positive(c.validate.half_width, "validate.half_width");
  if (c.validate.points_per_dim < 2) throw ConfigError("validate.points_per_dim must be at least 2");
  if (c.validate.smoothness_order < 1 || c.validate.smoothness_order > 3)
    throw ConfigError("validate.smoothness_order must be 1, 2 or 3");
  if (c.transform_check.samples < 1) throw ConfigError("transform_check.samples must be positive");
  for (double h : c.counterexample.steps) positive(h, "counterexample step");
  positive(c.counterexample.horizon, "counterexample horizon");
  positive(c.counterexample.noise_horizon, "counterexample noise_horizon");
  positive(c.counterexample.noise_step, "counterexample noise_step");
  if (c.counterexample.sgn0 < -1 || c.counterexample.sgn0 > 1) throw ConfigError("sgn0 must be -1, 0 or 1");
  if (!(c.compare.min_completion > 0.0 && c.compare.min_completion <= 1.0))
    throw ConfigError("min_completion must lie in (0, 1]");
}

/// mu = 0, sigma = identity in dimension d.
inline Model zero_drift_model(int d) {
  auto field = std::make_shared<CoefficientField>();
  field->dim = d;
  field->name = "zero-drift";
  field->drift_plus = [d](const Vec&) { return Vec::Zero(d).eval(); };
  field->drift_minus = field->drift_plus;
  field->diffusion = [d](const Vec&) { return Mat::Identity(d, d).eval(); };
  return plain_model(field, Vec::Zero(d));
}

/// Builds the configured model; expression and parameter errors become ConfigError.
inline Model build_model(const RunConfig& c) {
  try {
    Model m;
    if (c.model == "dividend") {
      DividendParams p = c.dividend;
      if (c.x0) p.x0 = *c.x0;
      m = dividend_model(p);
    } else if (c.model == "counterexample") {
      m = counterexample_model();
    } else if (c.model == "piecewise-constant") {
      m = piecewise_constant_model(c.pc_a, c.pc_m);
    } else if (c.model == "zero-drift") {
      m = zero_drift_model(c.zero_dim);
    } else if (c.model == "custom") {
      CustomSpec spec = c.custom;
      if (c.x0) spec.x0 = *c.x0;
      m = custom_model(spec);
    } else {
      throw ConfigError("unknown model '" + c.model +
                        "' (dividend, counterexample, piecewise-constant, zero-drift, custom)");
    }
    if (c.x0 && c.model != "dividend" && c.model != "custom") {
      if (c.x0->size() != m.dim()) throw ConfigError("x0 has the wrong dimension for model '" + c.model + "'");
      m.x0 = *c.x0;
    }
    return m;
  } catch (const InputError& e) {
    throw ConfigError(e.what());
  }
}

/// Compiled functional phi(x) over x1..xd.
inline std::function<double(const Vec&)> build_functional(const std::string& text, int dim) {
  try {
    const Expression e = Expression::compile(text, coordinate_names(dim), {});
    return [e](const Vec& x) { return e(x); };
  } catch (const InputError& err) {
    throw ConfigError("functional: " + std::string(err.what()));
  }
}

}  // namespace zsde
