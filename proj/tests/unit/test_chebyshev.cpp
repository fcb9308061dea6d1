#include "zsde/chebyshev.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace zsde;

namespace {

std::vector<double> sample(int n, double a, double b, double (*f)(double)) {
  const auto& g = cheb::grid(n);
  std::vector<double> v;
  for (double s : g.s) v.push_back(f(cheb::from_unit(s, a, b)));
  return v;
}

}  // namespace

TEST(Chebyshev, InterpolatesSmoothFunction) {
  const auto& g = cheb::grid(33);
  const auto c = cheb::coefficients(g, sample(33, -1.0, 2.0, [](double x) { return std::exp(x); }));
  for (double x : {-1.0, -0.3, 0.0, 1.1, 2.0})
    EXPECT_NEAR(cheb::evaluate(c, cheb::to_unit(x, -1.0, 2.0)), std::exp(x), 1e-13);
}

TEST(Chebyshev, PolynomialIsExactAfterDegree) {
  const auto& g = cheb::grid(9);
  const auto c = cheb::coefficients(g, sample(9, -1.0, 1.0, [](double x) { return 4 * x * x * x - 3 * x; }));
  // T_3
  for (std::size_t k = 0; k < c.size(); ++k) EXPECT_NEAR(c[k], k == 3 ? 1.0 : 0.0, 1e-14);
}

TEST(Chebyshev, IntegralAnchoredAtEitherEnd) {
  const double a = 0.0, b = 1.5, half = 0.75;
  const auto& g = cheb::grid(33);
  const auto c = cheb::coefficients(g, sample(33, a, b, [](double x) { return std::cos(x); }));
  const auto left = cheb::integrate(c, half, -1.0);
  const auto right = cheb::integrate(c, half, 1.0);
  for (double x : {0.0, 0.4, 1.5}) {
    const double s = cheb::to_unit(x, a, b);
    EXPECT_NEAR(cheb::evaluate(left, s), std::sin(x), 1e-14);
    EXPECT_NEAR(cheb::evaluate(right, s), std::sin(x) - std::sin(b), 1e-14);
  }
}

TEST(Chebyshev, DerivativeMatchesBasisRecurrence) {
  const double a = -2.0, b = 0.0, half = 1.0;
  const auto& g = cheb::grid(33);
  const auto c = cheb::coefficients(g, sample(33, a, b, [](double x) { return std::exp(0.7 * x) * x; }));
  const auto dc = cheb::derivative(c, half);
  std::vector<double> T(c.size()), dT(c.size()), d2T(c.size());
  for (double x : {-2.0, -1.3, -0.1, 0.0}) {
    const double s = cheb::to_unit(x, a, b);
    cheb::basis(static_cast<int>(c.size()), s, half, 2, T.data(), dT.data(), d2T.data());
    double v = 0, dv = 0, d2v = 0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      v += c[k] * T[k];
      dv += c[k] * dT[k];
      d2v += c[k] * d2T[k];
    }
    const double e = std::exp(0.7 * x);
    EXPECT_NEAR(v, e * x, 1e-13);
    EXPECT_NEAR(dv, e * (1 + 0.7 * x), 1e-12);
    EXPECT_NEAR(cheb::evaluate(dc, s), e * (1 + 0.7 * x), 1e-12);
    EXPECT_NEAR(d2v, e * (1.4 + 0.49 * x), 1e-10);
  }
}

TEST(Chebyshev, ResolvedLengthFindsTail) {
  std::vector<double> c{1.0, 0.5, 1e-3, 1e-12, 1e-16, 0.0};
  EXPECT_EQ(cheb::resolved_length(c, 0.0, 1e-10), 3u);
  EXPECT_EQ(cheb::resolved_length(c, 0.0, 1e-2), 2u);
  EXPECT_EQ(cheb::resolved_length(c, 0.0, 0.0), 5u);
}
