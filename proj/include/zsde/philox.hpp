#pragma once

// Philox4x32-10 counter-based generator (Salmon, Moraes, Dror, Shaw,
// "Parallel random numbers: as easy as 1, 2, 3", SC'11) and the Gaussian
// increment map built on it.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace zsde {

class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      ctr = single_round(ctr, key);
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  static Counter single_round(const Counter& c, const Key& k) noexcept {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// Pure map (seed, path, step, coordinate) -> standard normal variate.
///
/// Coordinates are produced in pairs by one Philox block and a Box-Muller
/// transform, so a d-dimensional increment costs ceil(d/2) blocks.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) noexcept
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  std::uint64_t seed() const noexcept {
    return static_cast<std::uint64_t>(key_[0]) | (static_cast<std::uint64_t>(key_[1]) << 32);
  }

  /// Fills `out` with independent N(0,1) draws for (path, step).
  void normals(std::uint64_t path, std::uint64_t step, std::span<double> out) const noexcept {
    const std::size_t n = out.size();
    for (std::size_t block = 0; 2 * block < n; ++block) {
      const auto pair = normal_pair(path, step, static_cast<std::uint32_t>(block));
      out[2 * block] = pair[0];
      if (2 * block + 1 < n) out[2 * block + 1] = pair[1];
    }
  }

  std::array<double, 2> normal_pair(std::uint64_t path, std::uint64_t step,
                                    std::uint32_t block) const noexcept {
    const Philox4x32::Counter ctr{
        static_cast<std::uint32_t>(step),
        (static_cast<std::uint32_t>(step >> 32) << 16) | (block & 0xFFFFu),
        static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32)};
    const auto w = Philox4x32::generate(ctr, key_);
    const double u1 = to_open_unit(w[0], w[1]);
    const double u2 = to_open_unit(w[2], w[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  /// 52-bit uniform strictly inside (0, 1); (k + 1/2) 2^-52 is exact for every k.
  static double to_open_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 12;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-52;
  }

 private:
  Philox4x32::Key key_;
};

/// SplitMix64 finalizer, used to derive decorrelated seeds from a base seed.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace zsde
