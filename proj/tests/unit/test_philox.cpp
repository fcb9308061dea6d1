#include "zsde/philox.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace zsde;

// Known-answer vectors of the reference Philox4x32-10 implementation.
TEST(Philox, KnownAnswers) {
  using C = Philox4x32::Counter;
  using K = Philox4x32::Key;
  EXPECT_EQ(Philox4x32::generate(C{0, 0, 0, 0}, K{0, 0}), (C{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u}));
  EXPECT_EQ(Philox4x32::generate(C{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, K{0xffffffffu, 0xffffffffu}),
            (C{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu}));
  EXPECT_EQ(Philox4x32::generate(C{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, K{0xa4093822u, 0x299f31d0u}),
            (C{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u}));
}

TEST(GaussianStream, PureFunctionOfIndices) {
  const GaussianStream a(42), b(42), c(43);
  std::vector<double> x(5), y(5), z(5);
  a.normals(7, 11, x);
  b.normals(7, 11, y);
  c.normals(7, 11, z);
  EXPECT_EQ(x, y);
  EXPECT_NE(x, z);
  a.normals(8, 11, z);
  EXPECT_NE(x, z);
  a.normals(7, 12, z);
  EXPECT_NE(x, z);
  // a prefix request returns the same leading coordinates
  std::vector<double> w(3);
  a.normals(7, 11, w);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(w[static_cast<std::size_t>(i)], x[static_cast<std::size_t>(i)]);
  EXPECT_EQ(a.seed(), 42u);
  EXPECT_EQ(GaussianStream(0x123456789abcdefull).seed(), 0x123456789abcdefull);
}

TEST(GaussianStream, Moments) {
  const GaussianStream g(2024);
  const int n = 200000;
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0, cross = 0;
  std::vector<double> v(2);
  for (int i = 0; i < n / 2; ++i) {
    g.normals(static_cast<std::uint64_t>(i), 3, v);
    for (double x : v) {
      s1 += x;
      s2 += x * x;
      s3 += x * x * x;
      s4 += x * x * x * x;
    }
    cross += v[0] * v[1];
  }
  EXPECT_NEAR(s1 / n, 0.0, 5 * std::sqrt(1.0 / n));
  EXPECT_NEAR(s2 / n, 1.0, 5 * std::sqrt(2.0 / n));
  EXPECT_NEAR(s3 / n, 0.0, 5 * std::sqrt(15.0 / n));
  EXPECT_NEAR(s4 / n, 3.0, 5 * std::sqrt(96.0 / n));
  EXPECT_NEAR(cross / (n / 2), 0.0, 5 * std::sqrt(2.0 / n));
}

TEST(GaussianStream, OpenUnitInterval) {
  EXPECT_GT(GaussianStream::to_open_unit(0, 0), 0.0);
  EXPECT_LT(GaussianStream::to_open_unit(0xffffffffu, 0xffffffffu), 1.0);
}

TEST(MixSeed, SplitMixReference) {
  // first outputs of SplitMix64 seeded with 0: state advances by the golden gamma
  EXPECT_EQ(mix_seed(0), 0xe220a8397b1dcdafull);
  EXPECT_EQ(mix_seed(0x9E3779B97F4A7C15ull), 0x6e789e6aa1b965f4ull);
  EXPECT_NE(mix_seed(1), mix_seed(2));
}
