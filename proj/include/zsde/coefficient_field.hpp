#pragma once

// Coefficient fields of dX = mu(X) dt + sigma(X) dW where mu switches between
// two smooth half-fields across {x1 = 0} (or across {s(x) = 0} for a general
// switching function), plus grid-based checks of the standing assumptions.

#include "zsde/errors.hpp"
#include "zsde/types.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace zsde {

using VectorField = std::function<Vec(const Vec&)>;
using MatrixField = std::function<Mat(const Vec&)>;
using ScalarFn = std::function<double(const Vec&)>;
using Grid = std::vector<Vec>;

enum class Half { plus, minus };

inline const char* to_string(Half h) { return h == Half::plus ? "plus" : "minus"; }

inline const char* to_string(BoundarySide s) {
  switch (s) {
    case BoundarySide::plus:
      return "plus";
    case BoundarySide::minus:
      return "minus";
    case BoundarySide::midpoint:
      return "midpoint";
  }
  return "plus";
}

struct CoefficientField {
  int dim = 1;
  std::string name;
  VectorField drift_plus;
  VectorField drift_minus;
  MatrixField diffusion;
  BoundarySide boundary = BoundarySide::plus;
  /// Drift switches on the sign of this function; empty means x1.
  ScalarFn switching;
  /// Optional evaluator of drift and diffusion together.
  std::function<void(const Vec&, Vec&, Mat&)> joint;

  double switch_value(const Vec& x) const { return switching ? switching(x) : x(0); }

  void check_point(const Vec& x) const {
    if (x.size() != dim)
      throw InputError("point has dimension " + std::to_string(x.size()) + ", field '" + name +
                       "' expects " + std::to_string(dim));
  }

  /// Half-field evaluated regardless of the side x is on.
  Vec drift_of(Half h, const Vec& x) const { return h == Half::plus ? drift_plus(x) : drift_minus(x); }

  Vec drift(const Vec& x) const {
    const double s = switch_value(x);
    if (s > 0.0) return drift_plus(x);
    if (s < 0.0) return drift_minus(x);
    switch (boundary) {
      case BoundarySide::plus:
        return drift_plus(x);
      case BoundarySide::minus:
        return drift_minus(x);
      case BoundarySide::midpoint:
        return 0.5 * (drift_plus(x) + drift_minus(x));
    }
    return drift_plus(x);
  }

  Mat sigma(const Vec& x) const { return diffusion(x); }

  std::optional<Half> side(double s) const { return side_of(boundary, s); }

  /// Half-field selected by a switching value, or none for the midpoint rule at 0.
  static std::optional<Half> side_of(BoundarySide boundary, double s) {
    if (s > 0.0) return Half::plus;
    if (s < 0.0) return Half::minus;
    if (boundary == BoundarySide::midpoint) return std::nullopt;
    return boundary == BoundarySide::plus ? Half::plus : Half::minus;
  }

  void coefficients(const Vec& x, Vec& mu, Mat& sig) const {
    if (joint) {
      joint(x, mu, sig);
      return;
    }
    mu = drift(x);
    sig = diffusion(x);
  }

  /// (sigma sigma^T)_{11}
  double a11(const Vec& x) const { return diffusion(x).row(0).squaredNorm(); }
};

/// mu+(x) for x1 > 0, mu-(x) for x1 < 0, the configured side on the boundary.
inline Vec evaluate_drift(const CoefficientField& field, const Vec& x) {
  field.check_point(x);
  return field.drift(x);
}

struct Verdict {
  std::string assumption;
  bool pass = true;
  bool advisory = false;
  std::string detail;
};

struct GrowthFit {
  double d1 = 0.0;
  double d2 = 0.0;
  double max_relative_excess = 0.0;
};

struct SmoothnessFlag {
  std::string coefficient;
  int order = 1;
  bool pass = true;
  double worst_ratio = 1.0;
  std::vector<double> worst_point;
};

struct ValidationReport {
  std::optional<double> ellipticity_floor;
  std::optional<GrowthFit> growth;
  std::vector<SmoothnessFlag> smoothness_flags;
  std::optional<double> transversality_floor;
  std::optional<double> surface_slope_floor;
  /// Largest finite-difference slope seen per coefficient. Reported only;
  /// a finite grid cannot decide local Lipschitz continuity.
  std::map<std::string, double> lipschitz_slopes;
  std::vector<Verdict> verdicts;

  /// True when every non-advisory verdict passed.
  bool passed() const {
    return std::all_of(verdicts.begin(), verdicts.end(), [](const Verdict& v) { return v.advisory || v.pass; });
  }

  void merge(const ValidationReport& other) {
    if (other.ellipticity_floor) ellipticity_floor = other.ellipticity_floor;
    if (other.growth) growth = other.growth;
    if (other.transversality_floor) transversality_floor = other.transversality_floor;
    if (other.surface_slope_floor) surface_slope_floor = other.surface_slope_floor;
    smoothness_flags.insert(smoothness_flags.end(), other.smoothness_flags.begin(), other.smoothness_flags.end());
    for (const auto& [k, v] : other.lipschitz_slopes) lipschitz_slopes[k] = std::max(lipschitz_slopes[k], v);
    verdicts.insert(verdicts.end(), other.verdicts.begin(), other.verdicts.end());
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    if (ellipticity_floor) j["ellipticity_floor"] = *ellipticity_floor;
    if (growth)
      j["growth"] = {{"D1", growth->d1}, {"D2", growth->d2}, {"max_relative_excess", growth->max_relative_excess}};
    if (transversality_floor) j["transversality_floor"] = *transversality_floor;
    if (surface_slope_floor) j["surface_slope_floor"] = *surface_slope_floor;
    auto flags = nlohmann::json::array();
    for (const auto& f : smoothness_flags)
      flags.push_back({{"coefficient", f.coefficient},
                       {"order", f.order},
                       {"pass", f.pass},
                       {"worst_ratio", f.worst_ratio},
                       {"worst_point", f.worst_point}});
    j["smoothness_flags"] = flags;
    j["lipschitz_slopes"] = lipschitz_slopes;
    auto verdicts_json = nlohmann::json::array();
    for (const auto& v : verdicts)
      verdicts_json.push_back(
          {{"assumption", v.assumption}, {"pass", v.pass}, {"advisory", v.advisory}, {"detail", v.detail}});
    j["verdicts"] = verdicts_json;
    j["passed"] = passed();
    return j;
  }
};

inline void require_grid(const Grid& grid, int dim) {
  if (grid.empty()) throw InputError("validation grid is empty");
  for (const auto& x : grid)
    if (x.size() != dim) throw InputError("grid point dimension does not match the field");
}

/// Infimum of (sigma sigma^T)_{11} over the grid; passes iff it is >= c.
inline ValidationReport validate_ellipticity(const CoefficientField& field, const Grid& grid, double c) {
  require_grid(grid, field.dim);
  if (!(c > 0.0)) throw InputError("ellipticity constant must be positive");
  double floor = std::numeric_limits<double>::infinity();
  for (const auto& x : grid) floor = std::min(floor, field.a11(x));
  ValidationReport report;
  report.ellipticity_floor = floor;
  report.verdicts.push_back({"ellipticity", floor >= c, false,
                             "min (sigma sigma^T)_11 = " + std::to_string(floor) + ", required c = " +
                                 std::to_string(c)});
  return report;
}

/// Least-squares fit of |mu(x)| ~ D1 + D2 |x| with D1, D2 >= 0, and the
/// largest relative excess of |mu| over the fitted bound. Advisory only.
inline ValidationReport validate_growth(const CoefficientField& field, const Grid& grid) {
  require_grid(grid, field.dim);
  const std::size_t n = grid.size();
  std::vector<double> r(n), m(n);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = grid[i].norm();
    m[i] = field.drift(grid[i]).norm();
  }
  // two-variable non-negative least squares by enumerating the active sets
  auto sse = [&](double d1, double d2) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::pow(m[i] - d1 - d2 * r[i], 2);
    return s;
  };
  double sr = 0, sm = 0, srr = 0, srm = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sr += r[i];
    sm += m[i];
    srr += r[i] * r[i];
    srm += r[i] * m[i];
  }
  const double nn = static_cast<double>(n);
  std::vector<std::pair<double, double>> candidates;
  const double det = nn * srr - sr * sr;
  if (std::abs(det) > 1e-14 * std::max(1.0, nn * srr)) {
    const double d2 = (nn * srm - sr * sm) / det;
    const double d1 = (sm - d2 * sr) / nn;
    if (d1 >= 0.0 && d2 >= 0.0) candidates.emplace_back(d1, d2);
  }
  candidates.emplace_back(std::max(0.0, sm / nn), 0.0);
  if (srr > 0.0) candidates.emplace_back(0.0, std::max(0.0, srm / srr));
  auto best = candidates.front();
  for (const auto& cand : candidates)
    if (sse(cand.first, cand.second) < sse(best.first, best.second)) best = cand;

  GrowthFit fit{best.first, best.second, 0.0};
  for (std::size_t i = 0; i < n; ++i) {
    const double bound = fit.d1 + fit.d2 * r[i];
    const double excess = m[i] - bound;
    if (excess <= 0.0) continue;
    const double rel = excess / std::max({bound, m[i], 1e-300});
    if (rel > 1e-12) fit.max_relative_excess = std::max(fit.max_relative_excess, rel);
  }
  ValidationReport report;
  report.growth = fit;
  report.verdicts.push_back({"linear-growth", fit.max_relative_excess == 0.0, true,
                             "advisory: fitted on a finite grid, cannot certify a global bound"});
  return report;
}

namespace detail {

inline double central_difference(const ScalarFn& f, const Vec& x, int dir, int order, double h) {
  auto at = [&](double t) {
    Vec y = x;
    y(dir) += t;
    return f(y);
  };
  switch (order) {
    case 1:
      return (at(h) - at(-h)) / (2.0 * h);
    case 2:
      return (at(h) - 2.0 * f(x) + at(-h)) / (h * h);
    default:
      return (at(2 * h) - 2.0 * at(h) + 2.0 * at(-h) - at(-2 * h)) / (2.0 * h * h * h);
  }
}

/// Base step per derivative order, scaled by (1 + |x|).
inline double probe_step(int order) {
  static constexpr double steps[] = {1e-5, 1e-4, 1e-3};
  return steps[std::clamp(order, 1, 3) - 1];
}

}  // namespace detail

/// Step-halving ratio test on central differences of every component of the
/// chosen drift half and of sigma, for all derivative orders up to `order`.
/// A coefficient fails when |D(h/2)/D(h) - 1| >= 0.5 above the noise floor.
inline ValidationReport probe_smoothness(const CoefficientField& field, Half half, int order, const Grid& grid) {
  require_grid(grid, field.dim);
  if (order < 1 || order > 3) throw InputError("smoothness order must be 1, 2 or 3");
  const int d = field.dim;
  struct Component {
    std::string name;
    ScalarFn f;
  };
  std::vector<Component> comps;
  const std::string mu = half == Half::plus ? "mu+" : "mu-";
  for (int i = 0; i < d; ++i)
    comps.push_back({mu + "[" + std::to_string(i + 1) + "]",
                     [&field, half, i](const Vec& x) { return field.drift_of(half, x)(i); }});
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      comps.push_back({"sigma[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]",
                       [&field, i, j](const Vec& x) { return field.diffusion(x)(i, j); }});

  ValidationReport report;
  bool all_pass = true;
  for (const auto& comp : comps) {
    double slope = 0.0;
    for (int o = 1; o <= order; ++o) {
      SmoothnessFlag flag{comp.name, o, true, 1.0, {}};
      double worst = 0.0;
      for (const auto& x : grid) {
        const double h = detail::probe_step(o) * (1.0 + x.norm());
        const double fx = comp.f(x);
        const double floor = 1e-6 * (1.0 + std::abs(fx));
        for (int dir = 0; dir < d; ++dir) {
          const double coarse = detail::central_difference(comp.f, x, dir, o, h);
          const double fine = detail::central_difference(comp.f, x, dir, o, 0.5 * h);
          if (o == 1) slope = std::max(slope, std::abs(fine));
          if (std::max(std::abs(coarse), std::abs(fine)) < floor) continue;
          const double ratio = coarse != 0.0 ? fine / coarse : std::numeric_limits<double>::infinity();
          const double dev = std::abs(ratio - 1.0);
          if (dev > worst || !std::isfinite(dev)) {
            worst = std::isfinite(dev) ? dev : std::numeric_limits<double>::infinity();
            flag.worst_ratio = ratio;
            flag.worst_point.assign(x.data(), x.data() + x.size());
          }
        }
      }
      flag.pass = worst < 0.5;
      all_pass = all_pass && flag.pass;
      report.smoothness_flags.push_back(flag);
    }
    report.lipschitz_slopes[comp.name] = slope;
  }
  report.verdicts.push_back({std::string("smoothness-") + to_string(half), all_pass, false,
                             "finite-difference ratio test at steps h and h/2, threshold |ratio - 1| < 0.5"});
  return report;
}

/// Regular grid with `per_dim` points per coordinate on the box center +- half_width.
inline Grid box_grid(const Vec& center, double half_width, int per_dim) {
  const int d = static_cast<int>(center.size());
  Grid out;
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  for (;;) {
    Vec x(d);
    for (int i = 0; i < d; ++i) {
      const double t = per_dim == 1 ? 0.0 : -1.0 + 2.0 * idx[static_cast<std::size_t>(i)] / (per_dim - 1);
      x(i) = center(i) + half_width * t;
    }
    out.push_back(x);
    int k = 0;
    while (k < d && ++idx[static_cast<std::size_t>(k)] == per_dim) idx[static_cast<std::size_t>(k++)] = 0;
    if (k == d) break;
  }
  return out;
}

}  // namespace zsde
