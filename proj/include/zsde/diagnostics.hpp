#pragma once

// Measurable checks on charts and simulated paths: ODE residuals, roundtrip
// error, drift jumps, occupation and local time, weak route comparison.

#include "zsde/coefficient_field.hpp"
#include "zsde/errors.hpp"
#include "zsde/path_engine.hpp"
#include "zsde/philox.hpp"
#include "zsde/transform_chart.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace zsde {

/// Uniform points in the chart ball with |x1| >= min_abs_x1, from a fixed stream.
inline std::vector<Vec> ball_sample(const Vec& center, double radius, std::size_t count, std::uint64_t seed = 7,
                                    double min_abs_x1 = 0.0) {
  const int d = static_cast<int>(center.size());
  const GaussianStream stream(seed);
  std::vector<Vec> out;
  std::array<double, kMaxDim + 2> g{};
  for (std::uint64_t i = 0; out.size() < count; ++i) {
    stream.normals(i, 0, std::span<double>(g.data(), static_cast<std::size_t>(d + 2)));
    Vec u(d);
    for (int k = 0; k < d; ++k) u(k) = g[static_cast<std::size_t>(k)];
    const double n = u.norm();
    if (!(n > 0.0)) continue;
    const double uniform = 0.5 * std::erfc(-g[static_cast<std::size_t>(d)] / std::sqrt(2.0));
    const Vec x = center + (radius * std::pow(uniform, 1.0 / d) / n) * u;
    if (std::abs(x(0)) < min_abs_x1) continue;
    out.push_back(x);
  }
  return out;
}

inline std::vector<Vec> ball_sample(const TransformChart& chart, std::size_t count, std::uint64_t seed = 7,
                                    double min_abs_x1 = 0.0) {
  return ball_sample(chart.center(), chart.radius(), count, seed, min_abs_x1);
}

/// Points x_rest with (0, x_rest) inside the chart ball: an even grid for
/// d = 2, sampled otherwise.
inline std::vector<Vec> hyperplane_grid(const TransformChart& chart, std::size_t count) {
  const int d = chart.dim();
  const double c1 = chart.center()(0);
  const double r = chart.radius();
  if (std::abs(c1) >= r) throw InputError("chart ball does not meet the hyperplane");
  const double reach = 0.95 * std::sqrt(r * r - c1 * c1);
  std::vector<Vec> out;
  if (d == 1) return {Vec(0)};
  const Vec rest = chart.center().tail(d - 1);
  if (d == 2) {
    for (std::size_t i = 0; i < count; ++i) {
      const double t = count == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(count - 1);
      out.push_back(rest + make_vec({t * reach}));
    }
    return out;
  }
  return ball_sample(rest, reach, count, 11);
}

/// Max over the grid of |mu1 g1' + a g1''/2| (k = 1) and
/// |mu_k + mu1 gk' + a gk''/2| (k >= 2), derivatives in x1 from the chart.
inline std::vector<double> ode_residual(const TransformChart& chart, const std::vector<Vec>& grid) {
  const int d = chart.dim();
  const CoefficientField& f = chart.field();
  std::vector<double> worst(static_cast<std::size_t>(d), 0.0);
  GEval e;
  for (const auto& x : grid) {
    if (std::abs(x(0)) < 1e-6) throw InputError("ODE residual grid must avoid |x1| < 1e-6");
    chart.evaluate(x, 2, e);
    const Vec mu = f.drift(x);
    const double a = f.a11(x);
    for (int k = 0; k < d; ++k) {
      const double g1 = e.jacobian(k, 0);
      const double g11 = e.hessian[static_cast<std::size_t>(k)](0, 0);
      const double r = (k == 0 ? 0.0 : mu(k)) + mu(0) * g1 + 0.5 * a * g11;
      worst[static_cast<std::size_t>(k)] = std::max(worst[static_cast<std::size_t>(k)], std::abs(r));
    }
  }
  return worst;
}

struct RoundtripResult {
  double max_error = 0.0;
  std::size_t failures = 0;
  std::size_t points = 0;
};

/// max |H(G(x)) - x| over the sample; inversion failures are counted.
inline RoundtripResult roundtrip_error(const TransformChart& chart, const std::vector<Vec>& sample) {
  RoundtripResult r;
  for (const auto& x : sample) {
    ++r.points;
    try {
      r.max_error = std::max(r.max_error, (chart.apply_H(chart.apply_G(x)) - x).norm());
    } catch (const InversionError&) {
      ++r.failures;
    } catch (const ChartExitError&) {
      ++r.failures;
    }
  }
  return r;
}

struct DriftJump {
  double original = 0.0;
  double transformed = 0.0;
  double offset = 1e-7;
};

/// Jumps of mu and of the transformed drift across {x1 = 0}. The latter
/// comes from one-sided evaluations at x1 = +-offset and +-offset/2,
/// extrapolated linearly to zero offset.
inline DriftJump drift_jump(const TransformChart& chart, const std::vector<Vec>& rest_grid, double offset = 1e-7) {
  const int d = chart.dim();
  const CoefficientField& f = chart.field();
  DriftJump out;
  out.offset = offset;
  GEval e;
  Vec dp, dm;
  Mat sp, sm;
  auto gap = [&](const Vec& x0, double delta) {
    Vec xp = x0, xm = x0;
    xp(0) = delta;
    xm(0) = -delta;
    chart.evaluate(xp, 2, e);
    chart.transformed_at(xp, e, dp, sp);
    chart.evaluate(xm, 2, e);
    chart.transformed_at(xm, e, dm, sm);
    return Vec(dp - dm);
  };
  for (const auto& rest : rest_grid) {
    Vec x0(d);
    x0(0) = 0.0;
    if (d > 1) x0.tail(d - 1) = rest;
    out.original = std::max(out.original, (f.drift_plus(x0) - f.drift_minus(x0)).norm());
    const Vec jump = 2.0 * gap(x0, 0.5 * offset) - gap(x0, offset);
    out.transformed = std::max(out.transformed, jump.norm());
  }
  return out;
}

/// Level whose zero set is the discontinuity; x1 by default.
using LevelFn = std::function<double(const Vec&)>;

/// Step-weighted fraction of [0, T] with |level(X_n)| < eps.
inline double occupation_time(const Trajectory& tr, double eps, const LevelFn& level = {}) {
  if (tr.states.empty()) throw InputError("occupation time needs a nonempty trajectory");
  if (tr.states.size() == 1) return 0.0;
  double inside = 0.0;
  for (std::size_t n = 0; n + 1 < tr.states.size(); ++n) {
    const double v = level ? level(tr.states[n]) : tr.states[n](0);
    if (std::abs(v) < eps) inside += tr.times[n + 1] - tr.times[n];
  }
  return inside / (tr.times.back() - tr.times.front());
}

/// Streaming occupation fractions for several window widths.
class OccupationAccumulator {
 public:
  OccupationAccumulator(std::vector<double> eps, LevelFn level = {}) : eps_(std::move(eps)), level_(std::move(level)) {
    inside_.assign(eps_.size(), 0.0);
  }

  void operator()(std::size_t, double, const Vec& x, double h) {
    if (h <= 0.0) return;
    total_ += h;
    const double v = std::abs(level_ ? level_(x) : x(0));
    for (std::size_t i = 0; i < eps_.size(); ++i)
      if (v < eps_[i]) inside_[i] += h;
  }

  std::vector<double> fractions() const {
    std::vector<double> out(eps_.size(), 0.0);
    if (total_ > 0.0)
      for (std::size_t i = 0; i < eps_.size(); ++i) out[i] = inside_[i] / total_;
    return out;
  }

 private:
  std::vector<double> eps_;
  LevelFn level_;
  std::vector<double> inside_;
  double total_ = 0.0;
};

/// Quadratic variation used by the local-time estimator.
enum class QuadraticVariation { model, increments };

/// Streaming (1/2 eps) sum 1{|X1_n - a| < eps} d[X1]_n for one path.
class LocalTimeAccumulator {
 public:
  LocalTimeAccumulator(const CoefficientField* field, double a, double eps,
                       QuadraticVariation qv = QuadraticVariation::model)
      : field_(field), a_(a), eps_(eps), qv_(qv) {
    if (!(eps > 0.0)) throw InputError("local time window must be positive");
    if (qv == QuadraticVariation::model && !field) throw InputError("model quadratic variation needs the field");
  }

  void operator()(std::size_t, double, const Vec& x, double h) {
    if (qv_ == QuadraticVariation::increments) {
      if (have_prev_ && prev_inside_) {
        const double dx = x(0) - prev_;
        sum_ += dx * dx;
      }
      prev_ = x(0);
      prev_inside_ = std::abs(x(0) - a_) < eps_;
      have_prev_ = true;
      return;
    }
    if (h > 0.0 && std::abs(x(0) - a_) < eps_) sum_ += field_->a11(x) * h;
  }

  double value() const { return sum_ / (2.0 * eps_); }

 private:
  const CoefficientField* field_;
  double a_;
  double eps_;
  QuadraticVariation qv_;
  double sum_ = 0.0;
  double prev_ = 0.0;
  bool prev_inside_ = false;
  bool have_prev_ = false;
};

struct LocalTimeEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t n_paths = 0;
};

inline LocalTimeEstimate mean_and_error(const std::vector<double>& values) {
  LocalTimeEstimate r;
  double mean = 0.0, m2 = 0.0;
  for (double v : values) {
    ++r.n_paths;
    const double delta = v - mean;
    mean += delta / static_cast<double>(r.n_paths);
    m2 += delta * (v - mean);
  }
  r.mean = mean;
  if (r.n_paths >= 2)
    r.std_error = std::sqrt(m2 / static_cast<double>(r.n_paths - 1) / static_cast<double>(r.n_paths));
  return r;
}

/// Local time at a up to T, averaged over stored trajectories.
inline LocalTimeEstimate local_time_estimate(const std::vector<Trajectory>& paths, const CoefficientField& field,
                                             double a, double eps,
                                             QuadraticVariation qv = QuadraticVariation::model) {
  std::vector<double> values;
  for (const auto& tr : paths) {
    LocalTimeAccumulator acc(&field, a, eps, qv);
    for (std::size_t n = 0; n < tr.states.size(); ++n) {
      const double h = n + 1 < tr.states.size() ? tr.times[n + 1] - tr.times[n] : 0.0;
      acc(n, tr.times[n], tr.states[n], h);
    }
    values.push_back(acc.value());
  }
  return mean_and_error(values);
}

/// Local time at a up to T by simulation without storing paths.
inline LocalTimeEstimate local_time_estimate(const Simulator& sim, const Vec& x0, double a, double eps,
                                             QuadraticVariation qv = QuadraticVariation::model) {
  const auto values = for_each_path<double>(sim.config().n_paths, sim.config().threads, [&](std::size_t i) {
    LocalTimeAccumulator acc(sim.model().field.get(), a, eps, qv);
    sim.run(x0, i, acc);
    return acc.value();
  });
  return mean_and_error(values);
}

struct WeakComparison {
  MonteCarloResult direct;
  MonteCarloResult transformed;
  double combined_se = 0.0;
  double z_score = 0.0;
  bool matched_streams = false;

  nlohmann::json to_json() const {
    return {{"estimate_direct", direct.estimate},
            {"estimate_transformed", transformed.estimate},
            {"std_error_direct", direct.std_error},
            {"std_error_transformed", transformed.std_error},
            {"combined_se", combined_se},
            {"z_score", z_score},
            {"matched_streams", matched_streams},
            {"direct", direct.to_json()},
            {"transformed", transformed.to_json()}};
  }
};

/// Seed used by the transformed route when the streams are independent.
inline std::uint64_t transformed_seed(std::uint64_t base_seed) { return mix_seed(base_seed ^ 0x7472616e73666f72ull); }

/// Monte Carlo of phi(X_T) under both schemes and the z-score of the difference.
inline WeakComparison compare_weak(const Model& model, const Vec& x0, const SimConfig& cfg,
                                   const std::function<double(const Vec&)>& phi, bool matched_streams = false,
                                   double min_completion = 0.9) {
  WeakComparison out;
  out.matched_streams = matched_streams;
  SimConfig c = cfg;
  auto run = [&](Scheme s) {
    c.scheme = s;
    c.base_seed = (s == Scheme::transformed && !matched_streams) ? transformed_seed(cfg.base_seed) : cfg.base_seed;
    const Simulator sim(model, c);
    const auto samples = for_each_path<PathSample>(
        c.n_paths, c.threads, [&](std::size_t i) { return sample_path(sim, x0, i, phi, [](auto&&...) {}); });
    return reduce_samples(samples);
  };
  out.direct = run(Scheme::direct);
  out.transformed = run(Scheme::transformed);
  for (const auto* r : {&out.direct, &out.transformed})
    if (r->completion() < min_completion) {
      std::string breakdown;
      for (const auto& [k, v] : r->terminations) breakdown += " " + k + "=" + std::to_string(v);
      throw ComparisonError(std::string(r == &out.direct ? "direct" : "transformed") + " route completed " +
                            std::to_string(r->n_effective) + " of " + std::to_string(r->n_paths) + " paths:" +
                            breakdown + (r->first_error.empty() ? "" : "; " + r->first_error));
    }
  out.combined_se = std::hypot(out.direct.std_error, out.transformed.std_error);
  const double diff = std::abs(out.direct.estimate - out.transformed.estimate);
  out.z_score = out.combined_se > 0.0 ? diff / out.combined_se
                                      : (diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
  return out;
}

struct DiagnosticsReport {
  std::vector<double> ode_residual_max;
  std::optional<RoundtripResult> roundtrip;
  std::optional<DriftJump> drift_jump;
  std::map<double, double> occupation_fraction;
  std::optional<LocalTimeEstimate> local_time;
  std::optional<double> local_time_level;
  std::optional<WeakComparison> weak_comparison;
  std::vector<std::string> notes;

  nlohmann::json to_json() const {
    nlohmann::json j;
    if (!ode_residual_max.empty()) j["ode_residual_max"] = ode_residual_max;
    if (roundtrip)
      j["roundtrip"] = {{"max", roundtrip->max_error}, {"failures", roundtrip->failures}, {"points", roundtrip->points}};
    if (drift_jump)
      j["drift_jump"] = {{"original", drift_jump->original},
                         {"transformed", drift_jump->transformed},
                         {"offset", drift_jump->offset}};
    if (!occupation_fraction.empty()) {
      auto occ = nlohmann::json::array();
      for (const auto& [eps, frac] : occupation_fraction) occ.push_back({{"eps", eps}, {"fraction", frac}});
      j["occupation_fraction"] = occ;
    }
    if (local_time)
      j["local_time"] = {{"level", local_time_level.value_or(0.0)},
                         {"estimate", local_time->mean},
                         {"std_error", local_time->std_error},
                         {"n_paths", local_time->n_paths}};
    if (weak_comparison) j["weak_comparison"] = weak_comparison->to_json();
    j["notes"] = notes;
    return j;
  }

  void print_table(std::ostream& os) const {
    auto row = [&](const std::string& name, const std::string& value) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%-28s %s\n", name.c_str(), value.c_str());
      os << buf;
    };
    auto num = [](double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.3e", v);
      return std::string(buf);
    };
    for (std::size_t k = 0; k < ode_residual_max.size(); ++k)
      row("ode residual g" + std::to_string(k + 1), num(ode_residual_max[k]));
    if (roundtrip)
      row("roundtrip max", num(roundtrip->max_error) + " (" + std::to_string(roundtrip->failures) + " failures of " +
                               std::to_string(roundtrip->points) + ")");
    if (drift_jump) {
      row("drift jump original", num(drift_jump->original));
      row("drift jump transformed", num(drift_jump->transformed) + " (offset " + num(drift_jump->offset) + ")");
    }
    for (const auto& [eps, frac] : occupation_fraction) row("occupation eps=" + num(eps), num(frac));
    if (local_time) row("local time", num(local_time->mean) + " +- " + num(local_time->std_error));
    if (weak_comparison) {
      row("estimate direct", num(weak_comparison->direct.estimate));
      row("estimate transformed", num(weak_comparison->transformed.estimate));
      row("combined SE", num(weak_comparison->combined_se));
      row("z-score", num(weak_comparison->z_score));
    }
    for (const auto& n : notes) os << "note: " << n << '\n';
  }
};

}  // namespace zsde
