#include "zsde/models.hpp"
#include "zsde/transform_chart.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace zsde;

namespace {

std::shared_ptr<const CoefficientField> constant_field(Vec plus, Vec minus, Mat sigma) {
  auto f = std::make_shared<CoefficientField>();
  f->dim = static_cast<int>(plus.size());
  f->drift_plus = [plus](const Vec&) { return plus; };
  f->drift_minus = [minus](const Vec&) { return minus; };
  f->diffusion = [sigma](const Vec&) { return sigma; };
  return f;
}

double g1_closed(double x) { return (x > 0 ? 1.0 : -1.0) * (std::exp(std::abs(x)) - 1.0); }

const double e = std::numbers::e;

}  // namespace

TEST(TransformChart, ZeroDriftGivesIdentity) {
  auto f = constant_field(Vec::Zero(2), Vec::Zero(2), Mat::Identity(2, 2));
  const auto chart = build_chart(f, make_vec({0.3, -0.2}), 1.0);
  EXPECT_DOUBLE_EQ(chart.radius(), 1.0);
  for (const Vec& x : {make_vec({0.3, -0.2}), make_vec({-0.5, 0.4}), make_vec({1.0, -0.2})}) {
    EXPECT_LT((chart.apply_G(x) - x).norm(), 1e-14);
    EXPECT_LT((chart.grad_G(x) - Mat::Identity(2, 2)).norm(), 1e-13);
    for (int k = 0; k < 2; ++k) EXPECT_LT(chart.hess_G(k, x).norm(), 1e-12);
    EXPECT_LT((chart.apply_H(x) - x).norm(), 1e-14);
  }
  const auto [mu, sigma] = chart.transformed_coefficients(make_vec({0.1, 0.1}));
  EXPECT_LT(mu.norm(), 1e-12);
  EXPECT_LT((sigma - Mat::Identity(2, 2)).norm(), 1e-12);
}

TEST(TransformChart, InnerExponentExamples) {
  auto zero = constant_field(make_vec({0.0}), make_vec({0.0}), Mat::Identity(1, 1));
  EXPECT_EQ(build_chart(zero, make_vec({0.0}), 1.0).inner_exponent(0.7, Vec(0)), 0.0);

  auto pc = piecewise_constant_model(0.5).field;
  const auto chart = build_chart(pc, make_vec({0.0}), 1.0);
  EXPECT_NEAR(chart.inner_exponent(1.0, Vec(0)), -1.0, 1e-12);
  EXPECT_NEAR(chart.inner_exponent(-1.0, Vec(0)), -1.0, 1e-12);

  Mat s(1, 1);
  s(0, 0) = std::sqrt(2.0);
  auto c = constant_field(make_vec({1.0}), make_vec({1.0}), s);
  const auto far = build_chart(c, make_vec({2.0}), 1.5);
  EXPECT_NEAR(far.inner_exponent(3.0, Vec(0)), 3.0, 1e-11);
}

TEST(TransformChart, ClosedFormOneDimensional) {
  auto pc = piecewise_constant_model(0.5).field;
  const auto chart = build_chart(pc, make_vec({0.0}), 1.0);
  EXPECT_NEAR(chart.g1(make_vec({1.0})), e - 1.0, 1e-10);
  EXPECT_NEAR(chart.g1(make_vec({-1.0})), -(e - 1.0), 1e-10);
  EXPECT_NEAR(chart.apply_G(make_vec({1.0}))(0), e - 1.0, 1e-10);
  EXPECT_NEAR(chart.grad_G(make_vec({1.0}))(0, 0), e, 1e-9);
  EXPECT_NEAR(chart.hess_G(0, make_vec({1.0}))(0, 0), e, 1e-8);
  EXPECT_NEAR(chart.grad_G(make_vec({0.0}))(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(chart.apply_H(make_vec({e - 1.0}))(0), 1.0, 1e-10);
  for (double x = -1.0; x <= 1.0; x += 0.01) {
    EXPECT_NEAR(chart.apply_G(make_vec({x}))(0), g1_closed(x), 1e-10);
    const double z = g1_closed(x);
    const auto [mu, sigma] = chart.transformed_coefficients(make_vec({z}));
    EXPECT_NEAR(mu(0), 0.0, 1e-8);
    EXPECT_NEAR(sigma(0, 0), std::exp(std::abs(x)), 1e-8);
  }
}

TEST(TransformChart, CompanionOdeExamples) {
  // mu = (0, 1), sigma = I: C_k = -2 xi, g_k = -x1^2
  auto f = piecewise_constant_model(0.0, 1.0).field;
  const auto chart = build_chart(f, make_vec({0.0, 0.0}), 2.5);
  const Vec rest = make_vec({0.3});
  EXPECT_NEAR(chart.ck(2, 0.5, rest), -1.0, 1e-12);
  EXPECT_NEAR(chart.ck(2, -1.5, rest), 3.0, 1e-12);
  EXPECT_NEAR(chart.gk(2, make_vec({2.0, 0.3})), -4.0, 1e-10);
  EXPECT_NEAR(chart.gk(2, make_vec({-2.0, 0.3})), -4.0, 1e-10);
  EXPECT_NEAR(chart.apply_G(make_vec({2.0, 0.3}))(1), 0.3 - 4.0, 1e-10);
}

TEST(TransformChart, HyperplaneIsFixedAndGradientIsIdentity) {
  const Model m = dividend_model();
  const auto chart = build_chart(m.working, m.to_working(m.x0), 1.0);
  for (double r : {0.0, 0.2, 0.5, 0.9}) {
    const Vec x = make_vec({0.0, r});
    EXPECT_LT((chart.apply_G(x) - x).norm(), 1e-14);
    EXPECT_LT((chart.grad_G(x) - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((chart.apply_H(x) - x).norm(), 1e-12);
  }
}

TEST(TransformChart, RoundTripOnDividendChart) {
  const Model m = dividend_model();
  const auto chart = build_chart(m.working, m.to_working(m.x0), 1.0);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    Vec dir = make_vec({n(rng), n(rng)});
    dir.normalize();
    const Vec x = chart.center() + chart.radius() * std::sqrt(u(rng)) * dir;
    EXPECT_LT((chart.apply_H(chart.apply_G(x)) - x).norm(), 1e-10);
  }
}

TEST(TransformChart, ForcedHugeRadiusFailsCertification) {
  const Model m = dividend_model();
  ChartTolerances tol;
  tol.force_radius = true;
  EXPECT_THROW(build_chart(m.working, m.to_working(m.x0), 1e3, tol), ChartBuildError);
}

TEST(TransformChart, JsonRoundTrip) {
  const Model m = dividend_model();
  const auto chart = build_chart(m.working, m.to_working(m.x0), 1.0);
  const auto j = chart.to_json();
  const auto back = TransformChart::from_json(nlohmann::json::parse(j.dump()), m.working);
  const Vec x = make_vec({0.3, 0.4});
  EXPECT_EQ(chart.apply_G(x), back.apply_G(x));
  EXPECT_FALSE(j.at("pieces").at(0).at("cached_grids").empty());
}
