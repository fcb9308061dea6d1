#include "zsde/coefficient_field.hpp"
#include "zsde/models.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace zsde;

namespace {

std::shared_ptr<CoefficientField> field_1d(VectorField plus, VectorField minus, double s = 1.0) {
  auto f = std::make_shared<CoefficientField>();
  f->dim = 1;
  f->drift_plus = std::move(plus);
  f->drift_minus = std::move(minus);
  f->diffusion = [s](const Vec&) { return Mat::Constant(1, 1, s); };
  return f;
}

CoefficientField field_2d(Mat sigma) {
  CoefficientField f;
  f.dim = 2;
  f.drift_plus = [](const Vec&) { return Vec::Zero(2).eval(); };
  f.drift_minus = f.drift_plus;
  f.diffusion = [sigma](const Vec&) { return sigma; };
  return f;
}

Grid points_1d(std::initializer_list<double> xs) {
  Grid g;
  for (double x : xs) g.push_back(make_vec({x}));
  return g;
}

}  // namespace

TEST(EvaluateDrift, SelectsHalfBySign) {
  auto f = field_1d([](const Vec&) { return make_vec({1.0}); }, [](const Vec&) { return make_vec({-1.0}); });
  EXPECT_EQ(evaluate_drift(*f, make_vec({0.5}))(0), 1.0);
  EXPECT_EQ(evaluate_drift(*f, make_vec({-0.5}))(0), -1.0);
  EXPECT_EQ(evaluate_drift(*f, make_vec({0.0}))(0), 1.0);
  f->boundary = BoundarySide::minus;
  EXPECT_EQ(evaluate_drift(*f, make_vec({0.0}))(0), -1.0);
  f->boundary = BoundarySide::midpoint;
  EXPECT_EQ(evaluate_drift(*f, make_vec({0.0}))(0), 0.0);
}

TEST(EvaluateDrift, DimensionMismatchThrows) {
  auto f = field_1d([](const Vec&) { return make_vec({1.0}); }, [](const Vec&) { return make_vec({-1.0}); });
  EXPECT_THROW(evaluate_drift(*f, make_vec({0.5, 0.1})), InputError);
}

TEST(EvaluateDrift, DividendLiftedDrift) {
  const Model m = dividend_model();
  // lifted coordinates (u, x2); u = 0.3 lies on the plus side
  const Vec mu = evaluate_drift(*m.working, make_vec({0.3, 0.5}));
  EXPECT_NEAR(mu(0), -0.5, 1e-12);
  EXPECT_NEAR(mu(1), 0.0, 1e-15);
}

TEST(EvaluateDrift, DependsOnlyOnTheActiveHalf) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  auto f = field_1d([](const Vec& x) { return make_vec({std::sin(x(0))}); },
                    [](const Vec& x) { return make_vec({x(0) * x(0)}); });
  for (int i = 0; i < 200; ++i) {
    const Vec x = make_vec({u(rng)});
    if (x(0) == 0.0) continue;
    const Vec expect = x(0) > 0 ? f->drift_plus(x) : f->drift_minus(x);
    EXPECT_EQ(evaluate_drift(*f, x), expect);
  }
}

TEST(Ellipticity, IdentityPasses) {
  const auto f = field_2d(Mat::Identity(2, 2));
  const auto r = validate_ellipticity(f, box_grid(Vec::Zero(2), 1.0, 5), 0.5);
  EXPECT_DOUBLE_EQ(*r.ellipticity_floor, 1.0);
  EXPECT_TRUE(r.passed());
}

TEST(Ellipticity, SharedNoiseCounterexampleRowPasses) {
  Mat s(2, 2);
  s << 1.0, 0.0, -1.0, 0.0;
  const auto r = validate_ellipticity(field_2d(s), box_grid(Vec::Zero(2), 1.0, 3), 0.5);
  EXPECT_DOUBLE_EQ(*r.ellipticity_floor, 1.0);
  EXPECT_TRUE(r.passed());
}

TEST(Ellipticity, NoNoiseInFirstCoordinateFails) {
  Mat z = Mat::Zero(2, 2);
  z(1, 1) = 1.0;
  const auto r = validate_ellipticity(field_2d(z), box_grid(Vec::Zero(2), 1.0, 3), 0.1);
  EXPECT_DOUBLE_EQ(*r.ellipticity_floor, 0.0);
  EXPECT_FALSE(r.passed());
}

TEST(Ellipticity, FloorIsFirstRowSquaredNorm) {
  // row 1 = (0, 1): (sigma sigma^T)_11 = 0^2 + 1^2
  Mat s(2, 2);
  s << 0.0, 1.0, 0.0, 1.0;
  const auto r = validate_ellipticity(field_2d(s), box_grid(Vec::Zero(2), 1.0, 3), 0.1);
  EXPECT_DOUBLE_EQ(*r.ellipticity_floor, 1.0);
  EXPECT_TRUE(r.passed());
}

TEST(Ellipticity, MonotoneInConstant) {
  auto f = std::make_shared<CoefficientField>();
  f->dim = 1;
  f->drift_plus = [](const Vec&) { return make_vec({0.0}); };
  f->drift_minus = f->drift_plus;
  f->diffusion = [](const Vec& x) { return Mat::Constant(1, 1, 0.5 + 0.4 * std::sin(3.0 * x(0))); };
  const Grid g = box_grid(Vec::Zero(1), 2.0, 41);
  for (double c : {0.01, 0.05, 0.1, 0.2, 0.5, 1.0}) {
    if (!validate_ellipticity(*f, g, c).passed()) continue;
    for (double smaller : {c / 2, c / 4, c / 10}) EXPECT_TRUE(validate_ellipticity(*f, g, smaller).passed());
  }
}

TEST(Ellipticity, RejectsBadInput) {
  const auto f = field_2d(Mat::Identity(2, 2));
  EXPECT_THROW(validate_ellipticity(f, {}, 0.5), InputError);
  EXPECT_THROW(validate_ellipticity(f, box_grid(Vec::Zero(2), 1.0, 3), 0.0), InputError);
}

TEST(Growth, ZeroDrift) {
  auto f = field_1d([](const Vec&) { return make_vec({0.0}); }, [](const Vec&) { return make_vec({0.0}); });
  const auto r = validate_growth(*f, points_1d({-4, -2, -1, 1, 2, 4}));
  EXPECT_EQ(r.growth->d1, 0.0);
  EXPECT_EQ(r.growth->d2, 0.0);
  EXPECT_EQ(r.growth->max_relative_excess, 0.0);
  EXPECT_TRUE(r.verdicts.front().advisory);
}

TEST(Growth, LinearDriftFitsExactly) {
  auto f = field_1d([](const Vec& x) { return x; }, [](const Vec& x) { return x; });
  const auto r = validate_growth(*f, points_1d({-4, -2, -1, 1, 2, 4}));
  EXPECT_GE(r.growth->d2, 1.0 - 1e-12);
  EXPECT_EQ(r.growth->max_relative_excess, 0.0);
}

TEST(Growth, QuadraticDriftShowsExcess) {
  auto f = field_1d([](const Vec& x) { return make_vec({x(0) * x(0)}); },
                    [](const Vec& x) { return make_vec({x(0) * x(0)}); });
  const Grid g = points_1d({-4, -2, -1, 1, 2, 4});
  const auto r = validate_growth(*f, g);
  EXPECT_GT(r.growth->max_relative_excess, 0.0);
  // brute force: no (D1, D2) >= 0 matching the least-squares optimum bounds all points
  double best = INFINITY, bd1 = 0, bd2 = 0;
  for (int i = 0; i <= 400; ++i)
    for (int j = 0; j <= 400; ++j) {
      const double d1 = 0.05 * i, d2 = 0.05 * j;
      double s = 0;
      for (const auto& x : g) s += std::pow(x(0) * x(0) - d1 - d2 * std::abs(x(0)), 2);
      if (s < best) best = s, bd1 = d1, bd2 = d2;
    }
  bool exceeded = false;
  for (const auto& x : g) exceeded = exceeded || x(0) * x(0) > bd1 + bd2 * std::abs(x(0));
  EXPECT_TRUE(exceeded);
  EXPECT_NEAR(r.growth->d1, bd1, 0.05);
  EXPECT_NEAR(r.growth->d2, bd2, 0.05);
}

TEST(Growth, AffineNormHasZeroExcessOnAnyGrid) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  auto f = std::make_shared<CoefficientField>();
  f->dim = 2;
  // |mu(x)| = 0.7 + 1.3 |x| exactly
  f->drift_plus = [](const Vec& x) {
    const double n = x.norm();
    return make_vec({0.7 + 1.3 * n, 0.0});
  };
  f->drift_minus = f->drift_plus;
  f->diffusion = [](const Vec&) { return Mat::Identity(2, 2).eval(); };
  for (int trial = 0; trial < 5; ++trial) {
    Grid g;
    for (int i = 0; i < 20; ++i) g.push_back(make_vec({u(rng), u(rng)}));
    const auto r = validate_growth(*f, g);
    EXPECT_EQ(r.growth->max_relative_excess, 0.0);
    EXPECT_NEAR(r.growth->d1, 0.7, 1e-9);
    EXPECT_NEAR(r.growth->d2, 1.3, 1e-9);
  }
}

TEST(Smoothness, PolynomialPasses) {
  auto f = std::make_shared<CoefficientField>();
  f->dim = 2;
  f->drift_plus = [](const Vec& x) { return make_vec({x(0) * x(0) * x(1) - 3.0 * x(1), 1.0 + x(0)}); };
  f->drift_minus = f->drift_plus;
  f->diffusion = [](const Vec&) { return Mat::Identity(2, 2).eval(); };
  const Grid g = box_grid(make_vec({0.5, 0.0}), 0.4, 5);
  for (int order = 1; order <= 3; ++order) EXPECT_TRUE(probe_smoothness(*f, Half::plus, order, g).passed());
}

TEST(Smoothness, AbsoluteValueFailsNearKink) {
  auto f = std::make_shared<CoefficientField>();
  f->dim = 2;
  f->drift_plus = [](const Vec& x) { return make_vec({std::abs(x(1)), 0.0}); };
  f->drift_minus = f->drift_plus;
  f->diffusion = [](const Vec&) { return Mat::Identity(2, 2).eval(); };
  Grid g{make_vec({0.5, 0.0}), make_vec({0.5, 3e-6}), make_vec({0.5, 0.3})};
  const auto r = probe_smoothness(*f, Half::plus, 1, g);
  EXPECT_FALSE(r.passed());
  bool flagged = false;
  for (const auto& flag : r.smoothness_flags) flagged = flagged || (flag.coefficient == "mu+[1]" && !flag.pass);
  EXPECT_TRUE(flagged);
}

TEST(Smoothness, ConstantSigmaPasses) {
  const auto f = field_2d(Mat::Constant(2, 2, 0.3));
  EXPECT_TRUE(probe_smoothness(f, Half::minus, 3, box_grid(make_vec({-0.5, 0.0}), 0.3, 4)).passed());
}

TEST(BoxGrid, CountsAndCorners) {
  const Grid g = box_grid(make_vec({1.0, -1.0}), 0.5, 3);
  ASSERT_EQ(g.size(), 9u);
  EXPECT_EQ(g.front(), make_vec({0.5, -1.5}));
  EXPECT_EQ(g.back(), make_vec({1.5, -0.5}));
}

TEST(Models, BuiltInsAreConsistent) {
  const Model d = dividend_model();
  EXPECT_EQ(d.dim(), 2);
  EXPECT_TRUE(d.clamp.has_value());
  const Vec x = make_vec({0.8, 0.5});
  EXPECT_NEAR((d.to_original(d.to_working(x)) - x).norm(), 0.0, 1e-14);
  EXPECT_NEAR(d.to_working(x)(0), 0.3, 1e-15);

  const Model ce = counterexample_model();
  EXPECT_EQ(ce.field->boundary, BoundarySide::midpoint);

  const Model pc = piecewise_constant_model(0.5);
  EXPECT_EQ(pc.dim(), 1);
  EXPECT_EQ(evaluate_drift(*pc.field, make_vec({0.2}))(0), -0.5);
  EXPECT_EQ(evaluate_drift(*pc.field, make_vec({-0.2}))(0), 0.5);

  DividendParams bad;
  bad.theta1 = 1.0;
  bad.theta2 = 0.0;
  EXPECT_THROW(dividend_model(bad), ConfigError);
}

TEST(Models, CustomExpressions) {
  CustomSpec spec;
  spec.dim = 2;
  spec.drift_plus = {"-a*sgn(x1)", "x2"};
  spec.drift_minus = {"a", "0"};
  spec.diffusion = {{"1", "0"}, {"0", "exp(x1)"}};
  spec.constants = {{"a", 0.25}};
  const Model m = custom_model(spec);
  const Vec mu = evaluate_drift(*m.field, make_vec({1.0, 2.0}));
  EXPECT_DOUBLE_EQ(mu(0), -0.25);
  EXPECT_DOUBLE_EQ(mu(1), 2.0);
  EXPECT_DOUBLE_EQ(m.field->diffusion(make_vec({1.0, 0.0}))(1, 1), std::exp(1.0));

  spec.drift_plus = {"x3", "0"};
  EXPECT_THROW(custom_model(spec), ConfigError);
}
