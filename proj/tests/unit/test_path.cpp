#include "zsde/config.hpp"
#include "zsde/models.hpp"
#include "zsde/path_engine.hpp"
#include "zsde/transform_chart.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

using namespace zsde;

namespace {

std::shared_ptr<const CoefficientField> constant_field(Vec mu, Mat sigma) {
  auto f = std::make_shared<CoefficientField>();
  f->dim = static_cast<int>(mu.size());
  f->drift_plus = [mu](const Vec&) { return mu; };
  f->drift_minus = f->drift_plus;
  f->diffusion = [sigma](const Vec&) { return sigma; };
  return f;
}

double g1_closed(double x) { return (x > 0 ? 1.0 : -1.0) * (std::exp(std::abs(x)) - 1.0); }

bool identical(const Trajectory& a, const Trajectory& b) {
  if (a.times != b.times || a.states.size() != b.states.size()) return false;
  for (std::size_t n = 0; n < a.states.size(); ++n)
    if (a.states[n] != b.states[n]) return false;
  return true;
}

}  // namespace

TEST(SimConfig, StepCountAndShortLastStep) {
  SimConfig c;
  c.step = 0.3;
  c.horizon = 1.0;
  EXPECT_EQ(c.n_steps(), 4u);
  EXPECT_DOUBLE_EQ(c.time_at(4), 1.0);
  EXPECT_NEAR(c.time_at(4) - c.time_at(3), 0.1, 1e-15);
  c.step = 1e-3;
  EXPECT_EQ(c.n_steps(), 1000u);
}

TEST(SimConfig, RejectsBadValues) {
  SimConfig c;
  c.step = -1.0;
  EXPECT_THROW(c.check(), ConfigError);
  c = SimConfig{};
  c.step = 2.0;
  EXPECT_THROW(c.check(), ConfigError);
  c = SimConfig{};
  c.exit_fraction = 1.0;
  EXPECT_THROW(c.check(), ConfigError);
  EXPECT_THROW(parse_scheme("sideways"), ConfigError);
  EXPECT_EQ(parse_scheme("transformed"), Scheme::transformed);
}

TEST(EulerMaruyama, ZeroCoefficientsGiveConstantPath) {
  const Vec x0 = make_vec({0.4, -1.2});
  const auto tr = euler_maruyama(constant_field(Vec::Zero(2), Mat::Zero(2, 2)), x0, SimConfig{}, 3);
  ASSERT_EQ(tr.states.size(), 1001u);
  for (const auto& x : tr.states) EXPECT_EQ(x, x0);
}

TEST(EulerMaruyama, UnitDriftReachesOneExactly) {
  SimConfig c;
  c.step = 0.1;
  c.horizon = 1.0;
  const auto tr = euler_maruyama(constant_field(make_vec({1.0}), Mat::Zero(1, 1)), make_vec({0.0}), c, 0);
  ASSERT_EQ(tr.states.size(), 11u);
  EXPECT_EQ(tr.states.back()(0), 1.0);
  EXPECT_EQ(tr.times.back(), 1.0);
}

TEST(EulerMaruyama, DeterministicPerPathIndex) {
  const Model m = dividend_model();
  SimConfig c;
  c.base_seed = 17;
  const Simulator sim(m, c);
  EXPECT_TRUE(identical(sim.trajectory(m.x0, 4), sim.trajectory(m.x0, 4)));
  EXPECT_FALSE(identical(sim.trajectory(m.x0, 4), sim.trajectory(m.x0, 5)));
  c.base_seed = 18;
  EXPECT_FALSE(identical(sim.trajectory(m.x0, 4), Simulator(m, c).trajectory(m.x0, 4)));
}

TEST(EulerMaruyama, IncrementsAreTheGaussianStream) {
  SimConfig c;
  c.step = 0.01;
  c.base_seed = 99;
  const auto tr = euler_maruyama(zero_drift_model(3).field, Vec::Zero(3), c, 12);
  const GaussianStream stream(99);
  std::array<double, 3> g{};
  for (std::size_t n = 0; n + 1 < tr.states.size(); ++n) {
    stream.normals(12, n, g);
    for (int i = 0; i < 3; ++i)
      EXPECT_NEAR(tr.states[n + 1](i) - tr.states[n](i), 0.1 * g[static_cast<std::size_t>(i)], 1e-14);
  }
}

TEST(EulerMaruyama, NonFiniteStateIsANumericError) {
  auto f = std::make_shared<CoefficientField>();
  f->dim = 1;
  f->drift_plus = [](const Vec& x) { return make_vec({1.0 / x(0)}); };
  f->drift_minus = f->drift_plus;
  f->diffusion = [](const Vec&) { return Mat::Zero(1, 1).eval(); };
  EXPECT_THROW(euler_maruyama(f, make_vec({0.0}), SimConfig{}, 0), NumericError);
}

TEST(EulerMaruyama, DividendSecondCoordinateStaysInBounds) {
  const Model m = dividend_model();
  SimConfig c;
  c.step = 0.05;
  c.n_paths = 50;
  const Simulator sim(m, c);
  for (std::size_t i = 0; i < 50; ++i)
    for (const auto& x : sim.trajectory(m.x0, i).states) {
      EXPECT_GE(x(1), 0.0);
      EXPECT_LE(x(1), 1.0);
    }
}

TEST(Transformed, IdentityChartMatchesDirect) {
  SimConfig c;
  c.step = 0.01;
  c.base_seed = 4;
  const auto field = zero_drift_model(2).field;
  const Vec x0 = make_vec({0.1, -0.3});
  for (std::size_t path : {0u, 1u, 25u}) {
    const auto a = euler_maruyama(field, x0, c, path);
    const auto b = simulate_via_transform(field, x0, c, path);
    ASSERT_EQ(a.states.size(), b.states.size());
    for (std::size_t n = 0; n < a.states.size(); ++n) EXPECT_LT((a.states[n] - b.states[n]).norm(), 1e-12);
  }
}

TEST(Transformed, OneDimensionalTransformedDriftVanishes) {
  const auto field = piecewise_constant_model(0.5).field;
  const auto chart = build_chart(field, make_vec({0.0}), 1.0);
  for (double x : {-0.9, -0.3, -1e-4, 1e-4, 0.5, 0.95}) {
    const auto [mu, sigma] = chart.transformed_coefficients(make_vec({g1_closed(x)}));
    EXPECT_LT(std::abs(mu(0)), 1e-8) << x;
    EXPECT_NEAR(sigma(0, 0), std::exp(std::abs(x)), 1e-9) << x;
  }
}

TEST(Transformed, OneDimensionalStepsArePureDiffusionInZ) {
  // Z = g1(X) moves by g1'(X_n) dW_n with the same increments as the direct scheme
  SimConfig c;
  c.step = 1e-3;
  c.horizon = 0.5;
  c.base_seed = 31;
  const auto field = piecewise_constant_model(0.5).field;
  const GaussianStream stream(31);
  std::array<double, 1> g{};
  std::size_t rebuilds = 0;
  for (std::size_t path = 0; path < 8; ++path) {
    const auto tr = simulate_via_transform(field, make_vec({0.0}), c, path);
    rebuilds += tr.chart_rebuilds;
    for (std::size_t n = 0; n + 1 < tr.states.size(); ++n) {
      stream.normals(path, n, g);
      const double x = tr.states[n](0);
      const double dz = g1_closed(tr.states[n + 1](0)) - g1_closed(x);
      EXPECT_NEAR(dz, std::exp(std::abs(x)) * std::sqrt(c.step) * g[0], 1e-9);
    }
  }
  SUCCEED() << rebuilds << " rebuilds";
}

TEST(Transformed, DividendPathsCompleteWithinBounds) {
  const Model m = dividend_model();
  SimConfig c;
  c.step = 1e-2;
  c.scheme = Scheme::transformed;
  const Simulator sim(m, c);
  for (std::size_t i = 0; i < 20; ++i) {
    const auto tr = sim.trajectory(m.x0, i);
    EXPECT_EQ(tr.termination, Termination::horizon);
    EXPECT_EQ(tr.states.size(), 101u);
    for (const auto& x : tr.states) {
      EXPECT_TRUE(x.allFinite());
      EXPECT_GE(x(1), 0.0);
      EXPECT_LE(x(1), 1.0);
    }
  }
}

TEST(MonteCarlo, ConstantFunctionalHasZeroError) {
  SimConfig c;
  c.n_paths = 200;
  const auto r = monte_carlo(dividend_model(), make_vec({0.5, 0.5}), c, [](const Vec&) { return 1.0; });
  EXPECT_EQ(r.estimate, 1.0);
  EXPECT_EQ(r.std_error, 0.0);
  EXPECT_EQ(r.n_effective, 200u);
}

TEST(MonteCarlo, BrownianSecondMomentAndMean) {
  SimConfig c;
  c.step = 0.25;
  c.horizon = 1.0;
  c.n_paths = 100000;
  c.base_seed = 2024;
  const Model m = zero_drift_model(1);
  const auto sq = monte_carlo(m, make_vec({0.0}), c, [](const Vec& x) { return x(0) * x(0); });
  EXPECT_LE(std::abs(sq.estimate - 1.0), 3.0 * sq.std_error);
  const auto mean = monte_carlo(m, make_vec({0.7}), c, [](const Vec& x) { return x(0); });
  EXPECT_LE(std::abs(mean.estimate - 0.7), 3.0 * mean.std_error);
  EXPECT_NEAR(mean.std_error, 1.0 / std::sqrt(1e5), 1e-4);
}

TEST(MonteCarlo, AllPathsStoppedIsAnEstimationError) {
  SimConfig c;
  c.n_paths = 10;
  c.explosion_guard = 1e-3;
  const Model m = dividend_model();
  EXPECT_THROW(monte_carlo(m, m.x0, c, [](const Vec& x) { return x(0); }), EstimationError);
}

TEST(MonteCarlo, ThreadCountDoesNotChangeTheResult) {
  const Model m = dividend_model();
  SimConfig c;
  c.step = 0.01;
  c.n_paths = 300;
  c.threads = 1;
  const auto a = monte_carlo(m, m.x0, c, [](const Vec& x) { return x(0); });
  c.threads = 3;
  const auto b = monte_carlo(m, m.x0, c, [](const Vec& x) { return x(0); });
  EXPECT_EQ(a.estimate, b.estimate);
  EXPECT_EQ(a.std_error, b.std_error);
}

TEST(MonteCarlo, ReductionIsOrderInsensitive) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> N(3.0, 2.0);
  std::vector<PathSample> s(5000);
  for (auto& p : s) p.value = N(rng);
  s[17].termination = Termination::explosion_guard_hit;
  const auto a = reduce_samples(s);
  std::shuffle(s.begin(), s.end(), rng);
  const auto b = reduce_samples(s);
  EXPECT_EQ(a.n_effective, 4999u);
  EXPECT_NEAR(a.estimate, b.estimate, 1e-12 * std::abs(a.estimate));
  EXPECT_NEAR(a.std_error, b.std_error, 1e-12 * a.std_error);
  EXPECT_EQ(a.terminations.at("explosion_guard_hit"), 1u);
}

TEST(Counterexample, HandIteration) {
  const auto tr = counterexample_run(0.1, 0.4, 0);
  ASSERT_EQ(tr.states.size(), 5u);
  const double expected[] = {0.0, 0.05, 0.0, 0.05, 0.0};
  for (std::size_t n = 0; n < 5; ++n) EXPECT_NEAR(tr.states[n](0), expected[n], 1e-15);
}

TEST(Counterexample, BoundedByTheGridForEveryConvention) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> logh(-4.0, -0.5);
  for (int i = 0; i < 30; ++i) {
    const double h = std::pow(10.0, logh(rng));
    for (int sgn0 : {-1, 0, 1}) {
      const auto tr = counterexample_run(h, 1.0, sgn0);
      double worst = 0.0;
      for (const auto& x : tr.states) worst = std::max(worst, std::abs(x(0)));
      const double bound = sgn0 == 0 ? 0.5 * h : (sgn0 > 0 ? h : 1.5 * h);
      EXPECT_LE(worst, bound) << "h = " << h << ", sgn0 = " << sgn0;
    }
  }
}

TEST(Counterexample, InvalidArguments) {
  EXPECT_THROW(counterexample_run(0.0, 1.0), InputError);
  EXPECT_THROW(counterexample_run(0.1, 1.0, 2), InputError);
}

TEST(Counterexample, NoiseMakesPathsEscape) {
  SimConfig c;
  c.step = 1e-3;
  c.horizon = 10.0;
  c.n_paths = 100;
  const auto r = counterexample_contrast(c, 0.1);
  EXPECT_EQ(r.n_paths, 100u);
  EXPECT_GE(r.fraction(), 0.99);
}

TEST(Output, CsvHeaderAndRows) {
  Trajectory tr;
  tr.times = {0.0, 0.5};
  tr.states = {make_vec({1.0, 2.0}), make_vec({0.1, -3.0})};
  std::ostringstream os;
  write_csv(os, tr);
  EXPECT_EQ(os.str(), "t,x1,x2\n0,1,2\n0.5,0.10000000000000001,-3\n");
  std::ostringstream js;
  tr.path_index = 3;
  write_jsonl(js, tr);
  std::istringstream in(js.str());
  std::string line;
  std::getline(in, line);
  const auto j = nlohmann::json::parse(line);
  EXPECT_EQ(j["path"], 3);
  EXPECT_EQ(j["state"][1], 2.0);
}
