#pragma once

// Built-in coefficient fields and expression-defined custom fields.

#include "zsde/coefficient_field.hpp"
#include "zsde/errors.hpp"
#include "zsde/expression.hpp"
#include "zsde/surface_chart.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace zsde {

/// A field together with its discontinuity surface and starting point.
/// `working` is the field the transform acts on: the lifted field when a
/// surface is present, the field itself otherwise.
struct Model {
  std::string name;
  std::shared_ptr<const CoefficientField> field;
  std::shared_ptr<const SurfaceChart> surface;
  std::shared_ptr<const CoefficientField> working;
  Vec x0;
  /// Optional projection of one original coordinate onto [lo, hi] after each step.
  struct Clamp {
    int index = 1;
    double lo = 0.0;
    double hi = 1.0;
  };
  std::optional<Clamp> clamp;

  int dim() const { return field->dim; }

  Vec to_working(const Vec& x) const { return surface ? surface->to_lifted(x) : x; }
  Vec to_original(const Vec& y) const { return surface ? surface->to_original(y) : y; }

  /// Signed distance proxy to the discontinuity: f(x) or x1.
  double level(const Vec& x) const { return surface ? surface->f()(x) : x(0); }
};

inline Model finish_model(Model m) {
  if (m.surface) {
    auto field = std::make_shared<CoefficientField>(*m.field);
    auto surface = m.surface;
    field->switching = [surface](const Vec& x) { return surface->f()(x); };
    m.field = field;
    m.working = lift_coefficients(m.surface, m.field);
  } else {
    m.working = m.field;
  }
  if (m.x0.size() != m.field->dim) throw ConfigError("x0 has the wrong dimension for model '" + m.name + "'");
  return m;
}

struct DividendParams {
  double kappa = 1.0;
  double sigma = 1.0;
  double theta1 = 0.0;
  double theta2 = 1.0;
  std::string boundary = "y";  // b(y)
  Vec x0 = make_vec({0.5, 0.5});
};

/// dX1 = (X2 - kappa 1{X1 >= b(X2)}) dt + s dW,
/// dX2 = (theta2 - X2)(X2 - theta1)/s dW  (same W).
inline Model dividend_model(const DividendParams& p = {}) {
  if (!(p.sigma != 0.0)) throw ConfigError("dividend model needs sigma != 0");
  if (!(p.theta1 < p.theta2)) throw ConfigError("dividend model needs theta1 < theta2");
  const double kappa = p.kappa, s = p.sigma, t1 = p.theta1, t2 = p.theta2;
  auto field = std::make_shared<CoefficientField>();
  field->dim = 2;
  field->name = "dividend";
  field->drift_plus = [kappa](const Vec& x) { return make_vec({x(1) - kappa, 0.0}); };
  field->drift_minus = [](const Vec& x) { return make_vec({x(1), 0.0}); };
  field->diffusion = [s, t1, t2](const Vec& x) {
    Mat m = Mat::Zero(2, 2);
    m(0, 0) = s;
    m(1, 0) = (t2 - x(1)) * (x(1) - t1) / s;
    return m;
  };
  field->boundary = BoundarySide::plus;
  const std::map<std::string, double> constants{{"kappa", kappa}, {"sigma", s}, {"theta1", t1}, {"theta2", t2}};
  // b is written in y; position 1 of the state carries x2
  const Expression b = Expression::compile(p.boundary, {"_x1", "y"}, constants);
  auto f = ScalarField::from_jet(
      [b](const Vec& x) { return Jet::variable(x(0), 0, static_cast<int>(x.size())) - b.jet(x); }, 2,
      "x1 - (" + p.boundary + ")", [b](const Vec& x) { return x(0) - b(x); }, [](const Vec&) { return 1.0; });
  Model m;
  m.name = "dividend";
  m.field = field;
  m.surface = std::make_shared<SurfaceChart>(f);
  m.x0 = p.x0;
  m.clamp = Model::Clamp{1, t1, t2};
  return finish_model(m);
}

/// dX1 = (1/2 - sgn(X1 + X2)) dt + dW, dX2 = -dW; sgn(0) = 0.
inline Model counterexample_model() {
  auto field = std::make_shared<CoefficientField>();
  field->dim = 2;
  field->name = "counterexample";
  field->drift_plus = [](const Vec&) { return make_vec({-0.5, 0.0}); };
  field->drift_minus = [](const Vec&) { return make_vec({1.5, 0.0}); };
  field->diffusion = [](const Vec&) {
    Mat m = Mat::Zero(2, 2);
    m(0, 0) = 1.0;
    m(1, 0) = -1.0;
    return m;
  };
  field->boundary = BoundarySide::midpoint;
  auto f = ScalarField::from_jet(
      [](const Vec& x) {
        const int n = static_cast<int>(x.size());
        return Jet::variable(x(0), 0, n) + Jet::variable(x(1), 1, n);
      },
      2, "x1 + x2", [](const Vec& x) { return x(0) + x(1); }, [](const Vec&) { return 1.0; });
  Model m;
  m.name = "counterexample";
  m.field = field;
  m.surface = std::make_shared<SurfaceChart>(f);
  m.x0 = make_vec({0.0, 0.0});
  return finish_model(m);
}

/// mu+ = -a, mu- = +a, sigma = 1 in one dimension; with `m` a second
/// coordinate with constant drift m and independent unit noise.
inline Model piecewise_constant_model(double a = 0.5, std::optional<double> m = std::nullopt) {
  auto field = std::make_shared<CoefficientField>();
  field->name = "piecewise-constant-1d";
  field->dim = m ? 2 : 1;
  if (m) {
    const double mv = *m;
    field->drift_plus = [a, mv](const Vec&) { return make_vec({-a, mv}); };
    field->drift_minus = [a, mv](const Vec&) { return make_vec({a, mv}); };
  } else {
    field->drift_plus = [a](const Vec&) { return make_vec({-a}); };
    field->drift_minus = [a](const Vec&) { return make_vec({a}); };
  }
  const int d = field->dim;
  field->diffusion = [d](const Vec&) { return Mat::Identity(d, d).eval(); };
  Model model;
  model.name = field->name;
  model.field = field;
  model.x0 = Vec::Zero(d);
  return finish_model(model);
}

struct CustomSpec {
  int dim = 1;
  std::vector<std::string> drift_plus;
  std::vector<std::string> drift_minus;
  std::vector<std::vector<std::string>> diffusion;
  /// "plane", "graph: b(y) = <expr>" or an expression for f in x1..xd.
  std::string surface = "plane";
  BoundarySide boundary = BoundarySide::plus;
  std::map<std::string, double> constants;
  Vec x0;
  std::string name = "custom";
};

inline Model custom_model(const CustomSpec& spec) {
  const int d = spec.dim;
  if (d < 1 || d > kMaxDim) throw ConfigError("dim must be between 1 and " + std::to_string(kMaxDim));
  if (static_cast<int>(spec.drift_plus.size()) != d || static_cast<int>(spec.drift_minus.size()) != d)
    throw ConfigError("drift_plus and drift_minus need " + std::to_string(d) + " entries");
  if (static_cast<int>(spec.diffusion.size()) != d)
    throw ConfigError("diffusion needs " + std::to_string(d) + " rows");
  for (const auto& row : spec.diffusion)
    if (static_cast<int>(row.size()) != d) throw ConfigError("every diffusion row needs " + std::to_string(d) + " entries");
  const auto names = coordinate_names(d);
  auto compile_all = [&](const std::vector<std::string>& texts) {
    std::vector<Expression> out;
    for (const auto& t : texts) out.push_back(Expression::compile(t, names, spec.constants));
    return out;
  };
  const auto plus = compile_all(spec.drift_plus);
  const auto minus = compile_all(spec.drift_minus);
  std::vector<Expression> sigma;
  for (const auto& row : spec.diffusion)
    for (const auto& t : row) sigma.push_back(Expression::compile(t, names, spec.constants));

  auto field = std::make_shared<CoefficientField>();
  field->dim = d;
  field->name = spec.name;
  field->boundary = spec.boundary;
  auto vector_of = [d](std::vector<Expression> e) {
    return [d, e = std::move(e)](const Vec& x) {
      Vec out(d);
      for (int i = 0; i < d; ++i) out(i) = e[static_cast<std::size_t>(i)](x);
      return out;
    };
  };
  field->drift_plus = vector_of(plus);
  field->drift_minus = vector_of(minus);
  field->diffusion = [d, sigma](const Vec& x) {
    Mat out(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out(i, j) = sigma[static_cast<std::size_t>(i * d + j)](x);
    return out;
  };

  Model m;
  m.name = spec.name;
  m.field = field;
  m.x0 = spec.x0.size() == d ? spec.x0 : Vec::Zero(d);
  const std::string surface = spec.surface;
  if (surface.empty() || surface == "plane") {
    // hyperplane {x1 = 0}
  } else if (surface.rfind("graph:", 0) == 0) {
    if (d < 2) throw ConfigError("a graph surface needs dim >= 2");
    const auto eq = surface.find('=');
    if (eq == std::string::npos) throw ConfigError("graph surface must read 'graph: b(y) = <expression>'");
    const std::string text = surface.substr(eq + 1);
    const Expression b = Expression::compile(text, {"_x1", "y"}, spec.constants);
    m.surface = std::make_shared<SurfaceChart>(ScalarField::from_jet(
        [b](const Vec& x) { return Jet::variable(x(0), 0, static_cast<int>(x.size())) - b.jet(x); }, d,
        "x1 - (" + text + ")", [b](const Vec& x) { return x(0) - b(x); }, [](const Vec&) { return 1.0; }));
  } else {
    m.surface = std::make_shared<SurfaceChart>(
        ScalarField::from_expression(Expression::compile(surface, names, spec.constants), d));
  }
  return finish_model(m);
}

}  // namespace zsde
