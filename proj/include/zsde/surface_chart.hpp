#pragma once

// Change of variables u = f(x) that straightens a discontinuity surface
// {f = 0} into the hyperplane {u = 0}, with f a graph over x1.

#include "zsde/coefficient_field.hpp"
#include "zsde/errors.hpp"
#include "zsde/expression.hpp"
#include "zsde/jet.hpp"
#include "zsde/types.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace zsde {

/// Scalar field with first and second derivatives, either exact (jets) or
/// by central differences around a plain evaluator.
class ScalarField {
 public:
  using JetFn = std::function<Jet(const Vec&)>;
  using GradFn = std::function<Vec(const Vec&)>;
  using HessFn = std::function<Mat(const Vec&)>;

  /// `value` and `slope` (df/dx1), when given, replace the jet for plain evaluations.
  static ScalarField from_jet(JetFn fn, int dim, std::string description = {}, ScalarFn value = {},
                              ScalarFn slope = {}) {
    ScalarField f;
    f.dim_ = dim;
    f.value_ = value ? std::move(value) : ScalarFn([fn](const Vec& x) { return fn(x).v; });
    f.slope_ = std::move(slope);
    f.jet_ = std::move(fn);
    f.description_ = std::move(description);
    return f;
  }

  static ScalarField from_expression(const Expression& e, int dim) {
    return from_jet([e](const Vec& x) { return e.jet(x); }, dim, e.text());
  }

  /// Plain evaluator; absent derivatives are replaced by central differences.
  static ScalarField from_callable(ScalarFn fn, int dim, GradFn grad = {}, HessFn hess = {},
                                   std::string description = {}) {
    ScalarField f;
    f.dim_ = dim;
    f.value_ = std::move(fn);
    f.grad_ = std::move(grad);
    f.hess_ = std::move(hess);
    f.description_ = std::move(description);
    return f;
  }

  int dim() const noexcept { return dim_; }
  const std::string& description() const noexcept { return description_; }

  double operator()(const Vec& x) const { return value_(x); }

  /// df/dx1 only.
  double d1(const Vec& x) const {
    if (slope_) return slope_(x);
    if (jet_) return jet_(x).g[0];
    if (grad_) return grad_(x)(0);
    const double h = kGradStep * (1.0 + x.norm());
    Vec a = x, b = x;
    a(0) += h;
    b(0) -= h;
    return (value_(a) - value_(b)) / (2.0 * h);
  }

  Vec gradient(const Vec& x) const {
    if (jet_) return jet_(x).gradient();
    if (grad_) return grad_(x);
    const double h = kGradStep * (1.0 + x.norm());
    Vec g(dim_);
    for (int i = 0; i < dim_; ++i) {
      Vec a = x, b = x;
      a(i) += h;
      b(i) -= h;
      g(i) = (value_(a) - value_(b)) / (2.0 * h);
    }
    return g;
  }

  Mat hessian(const Vec& x) const {
    if (jet_) return jet_(x).hessian();
    if (hess_) return hess_(x);
    const double h = kHessStep * (1.0 + x.norm());
    Mat H(dim_, dim_);
    const double f0 = value_(x);
    for (int i = 0; i < dim_; ++i) {
      Vec a = x, b = x;
      a(i) += h;
      b(i) -= h;
      H(i, i) = (value_(a) - 2.0 * f0 + value_(b)) / (h * h);
      for (int k = i + 1; k < dim_; ++k) {
        Vec pp = x, pm = x, mp = x, mm = x;
        pp(i) += h, pp(k) += h;
        pm(i) += h, pm(k) -= h;
        mp(i) -= h, mp(k) += h;
        mm(i) -= h, mm(k) -= h;
        H(i, k) = H(k, i) = (value_(pp) - value_(pm) - value_(mp) + value_(mm)) / (4.0 * h * h);
      }
    }
    return H;
  }

  void derivatives(const Vec& x, double& value, Vec& grad, Mat& hess) const {
    if (jet_) {
      const Jet j = jet_(x);
      value = j.v;
      grad = j.gradient();
      hess = j.hessian();
      return;
    }
    value = value_(x);
    grad = gradient(x);
    hess = hessian(x);
  }

 private:
  static constexpr double kGradStep = 1e-5;
  static constexpr double kHessStep = 1e-4;

  int dim_ = 1;
  ScalarFn value_;
  ScalarFn slope_;
  JetFn jet_;
  GradFn grad_;
  HessFn hess_;
  std::string description_;
};

struct SurfaceTolerances {
  double newton = 1e-12;
  int max_iter = 50;
  /// Floor for |df/dx1| accepted during the inversion.
  double slope_floor = 1e-12;
};

class SurfaceChart {
 public:
  SurfaceChart(ScalarField f, SurfaceTolerances tol = {}) : f_(std::move(f)), tol_(tol) {}

  const ScalarField& f() const noexcept { return f_; }
  int dim() const noexcept { return f_.dim(); }
  const SurfaceTolerances& tolerances() const noexcept { return tol_; }

  /// x1 with f(x1, x_rest) = u, by Newton from x1 = u.
  double solve_e(double u, const Vec& x_rest) const {
    if (x_rest.size() != dim() - 1) throw InputError("x_rest has the wrong dimension");
    Vec x(dim());
    x(0) = u;
    if (dim() > 1) x.tail(dim() - 1) = x_rest;
    const double target = tol_.newton * std::max(1.0, std::abs(u));
    double r = f_(x) - u;
    for (int it = 0; it < tol_.max_iter; ++it) {
      if (std::abs(r) <= target) return x(0);
      const double slope = f_.d1(x);
      if (!(std::abs(slope) > tol_.slope_floor) || !std::isfinite(slope))
        throw SurfaceChartError("df/dx1 vanishes during inversion at u = " + std::to_string(u));
      const double step = r / slope;
      double t = 1.0;
      double x1 = x(0);
      double rn = r;
      for (int halving = 0; halving < 30; ++halving) {
        x(0) = x1 - t * step;
        rn = f_(x) - u;
        if (std::abs(rn) < std::abs(r)) break;
        t *= 0.5;
      }
      if (!(std::abs(rn) < std::abs(r))) {
        x(0) = x1;
        if (std::abs(r) <= 16.0 * target) return x(0);
        throw SurfaceChartError("surface inversion stalled at u = " + std::to_string(u));
      }
      r = rn;
    }
    if (std::abs(r) <= target) return x(0);
    throw SurfaceChartError("surface inversion did not converge at u = " + std::to_string(u));
  }

  /// (f(x), x2, ..., xd)
  Vec to_lifted(const Vec& x) const {
    check(x);
    Vec y = x;
    y(0) = f_(x);
    return y;
  }

  /// (e(u, x_rest), x_rest)
  Vec to_original(const Vec& y) const {
    check(y);
    Vec x = y;
    x(0) = solve_e(y(0), y.tail(dim() - 1));
    return x;
  }

 private:
  ScalarField f_;
  SurfaceTolerances tol_;

  void check(const Vec& x) const {
    if (x.size() != dim()) throw InputError("point dimension does not match the surface");
  }
};

/// Minimum over the grid of |grad f . sigma|^2 and of |df/dx1|;
/// transversality passes iff the first is at least c.
inline ValidationReport validate_transversality(const SurfaceChart& chart, const CoefficientField& field,
                                                const Grid& grid, double c) {
  require_grid(grid, field.dim);
  if (chart.dim() != field.dim) throw InputError("surface and field dimensions differ");
  if (!(c > 0.0)) throw InputError("transversality constant must be positive");
  double floor = std::numeric_limits<double>::infinity();
  double slope = std::numeric_limits<double>::infinity();
  for (const auto& x : grid) {
    const Vec g = chart.f().gradient(x);
    floor = std::min(floor, (g.transpose() * field.diffusion(x)).squaredNorm());
    slope = std::min(slope, std::abs(g(0)));
  }
  ValidationReport report;
  report.transversality_floor = floor;
  report.surface_slope_floor = slope;
  report.verdicts.push_back({"transversality", floor >= c, false,
                             "min |grad f . sigma|^2 = " + std::to_string(floor) + ", required c = " +
                                 std::to_string(c)});
  report.verdicts.push_back({"surface-graph", slope > 0.0, false,
                             "min |df/dx1| = " + std::to_string(slope)});
  return report;
}

/// Coefficients of (U, X2, ..., Xd) with U = f(X), as a field in (u, x_rest)
/// whose drift switches across {u = 0}.
inline std::shared_ptr<const CoefficientField> lift_coefficients(std::shared_ptr<const SurfaceChart> chart,
                                                                  std::shared_ptr<const CoefficientField> field) {
  if (!chart || !field) throw InputError("lift needs a surface and a field");
  if (chart->dim() != field->dim) throw InputError("surface and field dimensions differ");
  auto lifted = std::make_shared<CoefficientField>();
  lifted->dim = field->dim;
  lifted->name = field->name + " (lifted)";
  lifted->boundary = field->boundary;
  auto lift = [chart, field](const Vec& y, std::optional<Half> half, Vec* mu_out, Mat* sigma_out) {
    const Vec x = chart->to_original(y);
    double v;
    Vec g;
    Mat H;
    chart->f().derivatives(x, v, g, H);
    Mat s = field->diffusion(x);
    if (mu_out) {
      Vec mu = half ? field->drift_of(*half, x) : Vec(0.5 * (field->drift_plus(x) + field->drift_minus(x)));
      mu(0) = g.dot(mu) + 0.5 * ((s * s.transpose()).cwiseProduct(H)).sum();
      *mu_out = std::move(mu);
    }
    if (sigma_out) {
      s.row(0) = g.transpose() * s;
      *sigma_out = std::move(s);
    }
  };
  lifted->drift_plus = [lift](const Vec& y) {
    Vec mu;
    lift(y, Half::plus, &mu, nullptr);
    return mu;
  };
  lifted->drift_minus = [lift](const Vec& y) {
    Vec mu;
    lift(y, Half::minus, &mu, nullptr);
    return mu;
  };
  lifted->diffusion = [lift](const Vec& y) {
    Mat s;
    lift(y, std::nullopt, nullptr, &s);
    return s;
  };
  lifted->joint = [lift, boundary = lifted->boundary](const Vec& y, Vec& mu, Mat& sigma) {
    lift(y, CoefficientField::side_of(boundary, y(0)), &mu, &sigma);
  };
  return lifted;
}

}  // namespace zsde
