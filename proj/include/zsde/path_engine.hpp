#pragma once

// Euler-Maruyama paths, directly on the coefficients or through the
// transform charts, and the Monte Carlo harness around them.

#include "zsde/coefficient_field.hpp"
#include "zsde/errors.hpp"
#include "zsde/models.hpp"
#include "zsde/philox.hpp"
#include "zsde/transform_chart.hpp"
#include "zsde/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace zsde {

enum class Scheme { direct, transformed };

inline const char* to_string(Scheme s) { return s == Scheme::direct ? "direct" : "transformed"; }

inline Scheme parse_scheme(const std::string& s) {
  if (s == "direct") return Scheme::direct;
  if (s == "transformed") return Scheme::transformed;
  throw ConfigError("scheme must be 'direct' or 'transformed', got '" + s + "'");
}

enum class Termination { horizon, explosion_guard_hit, numeric_error, simulation_error };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::horizon:
      return "horizon";
    case Termination::explosion_guard_hit:
      return "explosion_guard_hit";
    case Termination::numeric_error:
      return "numeric_error";
    case Termination::simulation_error:
      return "simulation_error";
  }
  return "horizon";
}

struct SimConfig {
  double step = 1e-3;
  double horizon = 1.0;
  std::size_t n_paths = 1000;
  std::uint64_t base_seed = 1;
  double explosion_guard = 1e6;
  double exit_fraction = 0.8;
  Scheme scheme = Scheme::direct;
  /// Radius requested for each transform chart.
  double chart_radius = 1.0;
  ChartTolerances chart;
  /// Apply the model's coordinate projection after each step.
  bool clamp = true;
  /// Worker threads for Monte Carlo; 0 means one per hardware thread.
  unsigned threads = 0;

  void check() const {
    if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("step must be positive");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError("horizon must be positive");
    if (step > horizon) throw ConfigError("step must not exceed the horizon");
    if (n_paths < 1) throw ConfigError("n_paths must be positive");
    if (!(explosion_guard > 0.0)) throw ConfigError("explosion guard must be positive");
    if (!(exit_fraction > 0.0 && exit_fraction < 1.0)) throw ConfigError("chart exit fraction must lie in (0, 1)");
    if (!(chart_radius > 0.0)) throw ConfigError("chart radius must be positive");
  }

  /// Number of steps; the last one is shortened to land on the horizon.
  std::size_t n_steps() const {
    const double q = horizon / step;
    auto n = static_cast<std::size_t>(std::ceil(q - 1e-9 * std::max(1.0, q)));
    return std::max<std::size_t>(n, 1);
  }

  double time_at(std::size_t n) const { return n >= n_steps() ? horizon : static_cast<double>(n) * step; }
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  Termination termination = Termination::horizon;
  std::size_t chart_rebuilds = 0;
  std::uint64_t seed_used = 0;
  std::size_t path_index = 0;
  /// Largest distance of the unprojected state outside the clamp interval.
  double max_overshoot = 0.0;
};

/// Result of one path without the stored states.
struct PathOutcome {
  Termination termination = Termination::horizon;
  std::size_t steps = 0;
  std::size_t chart_rebuilds = 0;
  double max_overshoot = 0.0;
  Vec final_state;
  std::string error;
};

/// Per-step callback: (step index n, time t_n, state X_n, step length to the
/// next state or 0 at the last state).
using StepVisitor = std::function<void(std::size_t, double, const Vec&, double)>;

/// Path simulator for one model and configuration. Charts for the transformed
/// route are shared between paths through an atlas.
class Simulator {
 public:
  Simulator(Model model, SimConfig cfg) : model_(std::move(model)), cfg_(std::move(cfg)) {
    cfg_.check();
    if (!model_.field || !model_.working) throw InputError("simulator needs a model with a field");
    if (cfg_.scheme == Scheme::transformed)
      atlas_ = std::make_shared<ChartAtlas>(model_.working, cfg_.chart_radius, cfg_.chart, cfg_.exit_fraction);
  }

  const Model& model() const noexcept { return model_; }
  const SimConfig& config() const noexcept { return cfg_; }
  const ChartAtlas* atlas() const noexcept { return atlas_.get(); }

  /// Runs one path from x0, calling `visit` on every state. Throws
  /// NumericError or SimulationError on failure.
  template <class Visit>
  PathOutcome run(const Vec& x0, std::size_t path_index, Visit&& visit) const {
    model_.field->check_point(x0);
    return cfg_.scheme == Scheme::direct ? run_direct(x0, path_index, visit) : run_transformed(x0, path_index, visit);
  }

  Trajectory trajectory(const Vec& x0, std::size_t path_index) const {
    Trajectory tr;
    tr.seed_used = cfg_.base_seed;
    tr.path_index = path_index;
    const auto out = run(x0, path_index, [&](std::size_t, double t, const Vec& x, double) {
      tr.times.push_back(t);
      tr.states.push_back(x);
    });
    tr.termination = out.termination;
    tr.chart_rebuilds = out.chart_rebuilds;
    tr.max_overshoot = out.max_overshoot;
    return tr;
  }

 private:
  Model model_;
  SimConfig cfg_;
  std::shared_ptr<ChartAtlas> atlas_;

  struct Noise {
    GaussianStream stream;
    std::array<double, kMaxDim> buf{};
    Vec dw;
    void draw(std::size_t path, std::size_t n, double h, int d) {
      stream.normals(path, n, std::span<double>(buf.data(), static_cast<std::size_t>(d)));
      const double s = std::sqrt(h);
      for (int i = 0; i < d; ++i) dw(i) = s * buf[static_cast<std::size_t>(i)];
    }
  };

  double step_length(std::size_t n) const { return cfg_.time_at(n + 1) - cfg_.time_at(n); }

  /// Projects x in place; returns the overshoot before projection.
  double project(Vec& x) const {
    if (!cfg_.clamp || !model_.clamp) return 0.0;
    const auto& c = *model_.clamp;
    const double v = x(c.index);
    const double over = std::max({0.0, c.lo - v, v - c.hi});
    x(c.index) = std::clamp(v, c.lo, c.hi);
    return over;
  }

  static bool finite(const Vec& x) { return x.allFinite(); }

  template <class Visit>
  PathOutcome run_direct(const Vec& x0, std::size_t path, Visit& visit) const {
    const int d = model_.dim();
    const std::size_t N = cfg_.n_steps();
    const CoefficientField& f = *model_.field;
    Noise noise{GaussianStream(cfg_.base_seed), {}, Vec(d)};
    PathOutcome out;
    Vec x = x0;
    for (std::size_t n = 0;; ++n) {
      if (x.norm() > cfg_.explosion_guard) {
        visit(n, cfg_.time_at(n), x, 0.0);
        out.termination = Termination::explosion_guard_hit;
        out.steps = n;
        break;
      }
      if (n == N) {
        visit(n, cfg_.time_at(n), x, 0.0);
        out.steps = n;
        break;
      }
      const double h = step_length(n);
      visit(n, cfg_.time_at(n), x, h);
      noise.draw(path, n, h, d);
      const Vec mu = f.drift(x);
      const Mat sigma = f.diffusion(x);
      x = x + mu * h + sigma * noise.dw;
      if (!finite(x)) throw NumericError("non-finite state at step " + std::to_string(n + 1), n + 1);
      out.max_overshoot = std::max(out.max_overshoot, project(x));
    }
    out.final_state = x;
    return out;
  }

  template <class Visit>
  PathOutcome run_transformed(const Vec& x0, std::size_t path, Visit& visit) const {
    const int d = model_.dim();
    const std::size_t N = cfg_.n_steps();
    const CoefficientField& w = *model_.working;
    Noise noise{GaussianStream(cfg_.base_seed), {}, Vec(d)};
    PathOutcome out;
    auto fail = [&](std::size_t n, const Vec& x, const std::string& why) -> SimulationError {
      std::string s;
      for (int i = 0; i < x.size(); ++i) s += (i ? ", " : "") + std::to_string(x(i));
      return SimulationError("transformed route failed at step " + std::to_string(n) + ", state (" + s + "): " + why);
    };

    Vec x = x0;  // original coordinates
    Vec y;       // working coordinates
    Vec z;       // transformed coordinates
    GEval e;     // order-2 evaluation of G at y
    ChartAtlas::ChartPtr chart;
    auto attach = [&](std::size_t n, bool exact) {
      try {
        chart = exact ? atlas_->exact(y) : atlas_->covering(y);
      } catch (const Error& err) {
        throw fail(n, x, err.what());
      }
      chart->evaluate(y, 2, e);
      z = e.value;
    };
    try {
      y = model_.to_working(x);
    } catch (const Error& err) {
      throw fail(0, x, err.what());
    }
    attach(0, false);

    Vec mu, drift, incr, curv(d);
    Mat sigma, diffusion;
    for (std::size_t n = 0;; ++n) {
      if (x.norm() > cfg_.explosion_guard) {
        visit(n, cfg_.time_at(n), x, 0.0);
        out.termination = Termination::explosion_guard_hit;
        out.steps = n;
        break;
      }
      if (n == N) {
        visit(n, cfg_.time_at(n), x, 0.0);
        out.steps = n;
        break;
      }
      const double h = step_length(n);
      visit(n, cfg_.time_at(n), x, h);
      noise.draw(path, n, h, d);
      bool rebuilt = false;
      for (;;) {
        try {
          w.coefficients(y, mu, sigma);
          chart->transformed_from(e, mu, sigma, drift, diffusion);
          incr = drift * h + diffusion * noise.dw;
          const Vec znext = z + incr;
          if (!finite(znext)) throw NumericError("non-finite transformed state at step " + std::to_string(n + 1), n + 1);
          // second-order predictor: G(y + s) ~ z + J s + (s' H_k s)/2
          Vec guess = solve_small(e.jacobian, incr);
          for (int k = 0; k < d; ++k) curv(k) = 0.5 * guess.dot(e.hessian[static_cast<std::size_t>(k)] * guess);
          guess = y + solve_small(e.jacobian, incr - curv);
          y = chart->apply_H(znext, &guess, &e, 2);
          z = znext;
          break;
        } catch (const InversionError& err) {
          if (rebuilt) throw fail(n, x, err.what());
        } catch (const ChartExitError& err) {
          if (rebuilt) throw fail(n, x, err.what());
        } catch (const SurfaceChartError& err) {
          throw fail(n, x, err.what());
        }
        // retry the step from a chart centered at the current point
        attach(n, true);
        ++out.chart_rebuilds;
        rebuilt = true;
      }
      try {
        x = model_.to_original(y);
      } catch (const Error& err) {
        throw fail(n + 1, y, err.what());
      }
      if (!finite(x)) throw NumericError("non-finite state at step " + std::to_string(n + 1), n + 1);
      const double over = project(x);
      out.max_overshoot = std::max(out.max_overshoot, over);
      const bool moved = over > 0.0;
      if (moved) y = model_.to_working(x);
      if ((y - chart->center()).norm() > cfg_.exit_fraction * chart->radius()) {
        if (x.norm() <= cfg_.explosion_guard) {
          attach(n + 1, false);
          ++out.chart_rebuilds;
        }
      } else if (moved) {
        chart->evaluate(y, 2, e);
        z = e.value;
      }
    }
    out.final_state = x;
    return out;
  }

  static Vec solve_small(const Mat& J, const Vec& r) {
    if (J.rows() == 1) return r / J(0, 0);
    if (J.rows() == 2) {
      const double det = J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
      Vec out(2);
      out(0) = (J(1, 1) * r(0) - J(0, 1) * r(1)) / det;
      out(1) = (J(0, 0) * r(1) - J(1, 0) * r(0)) / det;
      return out;
    }
    return J.partialPivLu().solve(r);
  }
};

/// Model with the given field, no surface and no projection.
inline Model plain_model(std::shared_ptr<const CoefficientField> field, const Vec& x0) {
  Model m;
  m.name = field->name;
  m.field = std::move(field);
  m.x0 = x0;
  return finish_model(m);
}

inline Trajectory euler_maruyama(std::shared_ptr<const CoefficientField> field, const Vec& x0, SimConfig cfg,
                                 std::size_t path_index) {
  cfg.scheme = Scheme::direct;
  return Simulator(plain_model(std::move(field), x0), cfg).trajectory(x0, path_index);
}

inline Trajectory simulate_via_transform(std::shared_ptr<const CoefficientField> field, const Vec& x0, SimConfig cfg,
                                         std::size_t path_index) {
  cfg.scheme = Scheme::transformed;
  return Simulator(plain_model(std::move(field), x0), cfg).trajectory(x0, path_index);
}

/// Runs `work(path_index)` for every path on a thread pool; results are
/// stored by path index so the outcome does not depend on scheduling.
template <class Result, class Work>
std::vector<Result> for_each_path(std::size_t n_paths, unsigned threads, Work&& work) {
  std::vector<Result> results(n_paths);
  unsigned n_threads = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  n_threads = static_cast<unsigned>(std::min<std::size_t>(n_threads, n_paths));
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    constexpr std::size_t chunk = 64;
    for (;;) {
      const std::size_t begin = next.fetch_add(chunk);
      if (begin >= n_paths) return;
      const std::size_t end = std::min(n_paths, begin + chunk);
      for (std::size_t i = begin; i < end; ++i) results[i] = work(i);
    }
  };
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  return results;
}

/// One path's contribution to a Monte Carlo estimate.
struct PathSample {
  Termination termination = Termination::horizon;
  double value = 0.0;
  std::size_t rebuilds = 0;
  double max_overshoot = 0.0;
  std::string error;
};

/// Runs one path and catches failures into the termination record.
template <class Visit>
PathSample sample_path(const Simulator& sim, const Vec& x0, std::size_t i, const std::function<double(const Vec&)>& phi,
                       Visit&& visit) {
  PathSample s;
  try {
    const PathOutcome out = sim.run(x0, i, visit);
    s.termination = out.termination;
    s.rebuilds = out.chart_rebuilds;
    s.max_overshoot = out.max_overshoot;
    if (out.termination == Termination::horizon) s.value = phi(out.final_state);
  } catch (const NumericError& e) {
    s.termination = Termination::numeric_error;
    s.error = e.what();
  } catch (const SimulationError& e) {
    s.termination = Termination::simulation_error;
    s.error = e.what();
  }
  return s;
}

struct MonteCarloResult {
  double estimate = 0.0;
  double std_error = 0.0;
  std::size_t n_effective = 0;
  std::size_t n_paths = 0;
  std::size_t n_rebuilds_total = 0;
  double max_overshoot = 0.0;
  std::map<std::string, std::size_t> terminations;
  std::string first_error;

  double completion() const { return n_paths ? static_cast<double>(n_effective) / static_cast<double>(n_paths) : 0.0; }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["estimate"] = estimate;
    j["std_error"] = std_error;
    j["n_effective"] = n_effective;
    j["n_paths"] = n_paths;
    j["n_rebuilds_total"] = n_rebuilds_total;
    j["terminations"] = terminations;
    if (!first_error.empty()) j["first_error"] = first_error;
    return j;
  }
};

/// Mean and standard error over the paths that reached the horizon,
/// accumulated in path order.
inline MonteCarloResult reduce_samples(const std::vector<PathSample>& samples) {
  MonteCarloResult r;
  r.n_paths = samples.size();
  for (auto t : {Termination::horizon, Termination::explosion_guard_hit, Termination::numeric_error,
                 Termination::simulation_error})
    r.terminations[to_string(t)] = 0;
  double mean = 0.0, m2 = 0.0;
  for (const auto& s : samples) {
    ++r.terminations[to_string(s.termination)];
    r.n_rebuilds_total += s.rebuilds;
    r.max_overshoot = std::max(r.max_overshoot, s.max_overshoot);
    if (r.first_error.empty() && !s.error.empty()) r.first_error = s.error;
    if (s.termination != Termination::horizon) continue;
    ++r.n_effective;
    const double delta = s.value - mean;
    mean += delta / static_cast<double>(r.n_effective);
    m2 += delta * (s.value - mean);
  }
  r.estimate = mean;
  if (r.n_effective >= 2)
    r.std_error = std::sqrt(m2 / static_cast<double>(r.n_effective - 1) / static_cast<double>(r.n_effective));
  return r;
}

/// Mean of phi(X_T) over paths that reach the horizon.
inline MonteCarloResult monte_carlo(const Simulator& sim, const Vec& x0, const std::function<double(const Vec&)>& phi) {
  const SimConfig& cfg = sim.config();
  if (cfg.n_paths < 2) throw InputError("Monte Carlo needs at least two paths");
  const auto samples = for_each_path<PathSample>(
      cfg.n_paths, cfg.threads, [&](std::size_t i) { return sample_path(sim, x0, i, phi, [](auto&&...) {}); });
  MonteCarloResult r = reduce_samples(samples);
  if (r.n_effective == 0)
    throw EstimationError("no path reached the horizon" + (r.first_error.empty() ? "" : ": " + r.first_error));
  return r;
}

inline MonteCarloResult monte_carlo(const Model& model, const Vec& x0, const SimConfig& cfg,
                                    const std::function<double(const Vec&)>& phi) {
  return monte_carlo(Simulator(model, cfg), x0, phi);
}

/// Deterministic Euler for x' = 1/2 - sgn(x) from 0, with sgn(0) = sgn0.
/// Iterates stay on the lattice (h/2)Z, so the state is kept as an integer
/// multiple of h/2 and every step has length h.
inline Trajectory counterexample_run(double h, double T, int sgn0 = 0) {
  if (!(h > 0.0)) throw InputError("step must be positive");
  if (!(T > 0.0)) throw InputError("horizon must be positive");
  if (sgn0 < -1 || sgn0 > 1) throw InputError("sgn(0) convention must be -1, 0 or 1");
  SimConfig cfg;
  cfg.step = std::min(h, T);
  cfg.horizon = T;
  Trajectory tr;
  const std::size_t N = cfg.n_steps();
  const double half = 0.5 * cfg.step;
  long long k = 0;
  for (std::size_t n = 0; n <= N; ++n) {
    tr.times.push_back(cfg.time_at(n));
    tr.states.push_back(make_vec({static_cast<double>(k) * half}));
    const long long s = k > 0 ? 1 : (k < 0 ? -1 : sgn0);
    k += 1 - 2 * s;
  }
  return tr;
}

/// dX = (1/2 - sgn X) dt + dW from 0 in one dimension.
inline Model counterexample_noisy_model() {
  auto field = std::make_shared<CoefficientField>();
  field->dim = 1;
  field->name = "counterexample-noisy";
  field->drift_plus = [](const Vec&) { return make_vec({-0.5}); };
  field->drift_minus = [](const Vec&) { return make_vec({1.5}); };
  field->diffusion = [](const Vec&) { return Mat::Identity(1, 1).eval(); };
  field->boundary = BoundarySide::midpoint;
  return plain_model(field, make_vec({0.0}));
}

/// Fraction of noisy counterexample paths leaving [-bound, bound] before T.
struct EscapeResult {
  std::size_t n_paths = 0;
  std::size_t escaped = 0;
  double fraction() const { return n_paths ? static_cast<double>(escaped) / static_cast<double>(n_paths) : 0.0; }
};

inline EscapeResult counterexample_contrast(const SimConfig& cfg, double bound = 1.0) {
  SimConfig c = cfg;
  c.scheme = Scheme::direct;
  const Simulator sim(counterexample_noisy_model(), c);
  const Vec x0 = make_vec({0.0});
  const auto hits = for_each_path<char>(c.n_paths, c.threads, [&](std::size_t i) {
    char escaped = 0;
    try {
      sim.run(x0, i, [&](std::size_t, double, const Vec& x, double) {
        if (std::abs(x(0)) > bound) escaped = 1;
      });
    } catch (const Error&) {
    }
    return escaped;
  });
  EscapeResult r;
  r.n_paths = hits.size();
  for (char h : hits) r.escaped += static_cast<std::size_t>(h);
  return r;
}

// ---- output ----

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_csv(std::ostream& os, const Trajectory& tr) {
  const int d = tr.states.empty() ? 0 : static_cast<int>(tr.states.front().size());
  os << "t";
  for (int i = 1; i <= d; ++i) os << ",x" << i;
  os << '\n';
  for (std::size_t n = 0; n < tr.states.size(); ++n) {
    os << format_double(tr.times[n]);
    for (int i = 0; i < d; ++i) os << ',' << format_double(tr.states[n](i));
    os << '\n';
  }
}

inline void write_jsonl(std::ostream& os, const Trajectory& tr) {
  for (std::size_t n = 0; n < tr.states.size(); ++n) {
    nlohmann::json j;
    j["path"] = tr.path_index;
    j["t"] = tr.times[n];
    j["state"] = std::vector<double>(tr.states[n].data(), tr.states[n].data() + tr.states[n].size());
    os << j.dump() << '\n';
  }
}

}  // namespace zsde
