#pragma once

// One-dimensional Chebyshev series on an interval [a, b], sampled at the
// n extreme points s_j = cos(pi j / (n-1)). Series are stored as plain
// coefficient vectors c with f(s) = sum_k c_k T_k(s).

#include "zsde/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

namespace zsde::cheb {

struct Grid {
  int n = 0;
  std::vector<double> s;          // nodes, s_0 = +1 ... s_{n-1} = -1
  std::vector<double> cos_table;  // cos(pi j k / (n-1)), row j, column k
};

/// Shared, lazily built node tables. References stay valid for the program lifetime.
inline const Grid& grid(int n) {
  if (n < 2) throw InputError("Chebyshev grid needs at least two points");
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<Grid>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) {
    auto g = std::make_unique<Grid>();
    g->n = n;
    const int N = n - 1;
    g->s.resize(static_cast<std::size_t>(n));
    g->cos_table.resize(static_cast<std::size_t>(n * n));
    for (int j = 0; j < n; ++j) {
      g->s[static_cast<std::size_t>(j)] = std::cos(std::numbers::pi * j / N);
      for (int k = 0; k < n; ++k) {
        // reduce j*k mod 2N first so the argument stays small
        const int m = (j * k) % (2 * N);
        g->cos_table[static_cast<std::size_t>(j * n + k)] = std::cos(std::numbers::pi * m / N);
      }
    }
    // exact symmetric values
    g->s[static_cast<std::size_t>(N)] = -1.0;
    if (n % 2 == 1) g->s[static_cast<std::size_t>(N / 2)] = 0.0;
    slot = std::move(g);
  }
  return *slot;
}

inline double to_unit(double x, double a, double b) { return (2.0 * x - (a + b)) / (b - a); }

inline double from_unit(double s, double a, double b) { return 0.5 * (a + b) + 0.5 * (b - a) * s; }

/// Values at the n extreme points -> n coefficients (DCT-I).
inline void coefficients(const Grid& g, std::span<const double> values, std::span<double> out) {
  const int n = g.n;
  const int N = n - 1;
  for (int k = 0; k < n; ++k) {
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
      const double w = (j == 0 || j == N) ? 0.5 : 1.0;
      acc += w * values[static_cast<std::size_t>(j)] * g.cos_table[static_cast<std::size_t>(j * n + k)];
    }
    acc *= 2.0 / N;
    if (k == 0 || k == N) acc *= 0.5;
    out[static_cast<std::size_t>(k)] = acc;
  }
}

inline std::vector<double> coefficients(const Grid& g, std::span<const double> values) {
  std::vector<double> out(static_cast<std::size_t>(g.n));
  coefficients(g, values, out);
  return out;
}

/// Clenshaw evaluation at s in [-1, 1].
inline double evaluate(std::span<const double> c, double s) {
  double b1 = 0.0;
  double b2 = 0.0;
  for (std::size_t k = c.size(); k-- > 1;) {
    const double b0 = 2.0 * s * b1 - b2 + c[k];
    b2 = b1;
    b1 = b0;
  }
  return (c.empty() ? 0.0 : c[0]) + s * b1 - b2;
}

/// Antiderivative in x (interval half-length `half`), normalized to vanish at
/// s = anchor (either -1 or +1). Result has one more coefficient.
inline std::vector<double> integrate(std::span<const double> c, double half, double anchor) {
  const std::size_t n = c.size();
  std::vector<double> F(n + 1, 0.0);
  auto at = [&](std::size_t k) { return k < n ? c[k] : 0.0; };
  if (n > 0) F[1] = at(0) - 0.5 * at(2);
  for (std::size_t k = 2; k <= n; ++k) F[k] = (at(k - 1) - at(k + 1)) / (2.0 * static_cast<double>(k));
  for (auto& v : F) v *= half;
  double at_anchor = 0.0;
  for (std::size_t k = 1; k <= n; ++k) at_anchor += (anchor < 0 && (k % 2 == 1)) ? -F[k] : F[k];
  F[0] = -at_anchor;
  return F;
}

/// Derivative in x for interval half-length `half`.
inline std::vector<double> derivative(std::span<const double> c, double half) {
  const std::size_t n = c.size();
  if (n <= 1) return {0.0};
  std::vector<double> d(n + 1, 0.0);
  // d_{k-1} = d_{k+1} + 2 k c_k
  for (std::size_t k = n - 1; k >= 1; --k) d[k - 1] = d[k + 1] + 2.0 * static_cast<double>(k) * c[k];
  d[0] *= 0.5;
  d.resize(n - 1);
  for (auto& v : d) v /= half;
  return d;
}

/// T_k(s), T'_k(s), T''_k(s) for k < count, derivatives scaled by 1/half and 1/half^2.
inline void basis(int count, double s, double half, int order, double* T, double* dT, double* d2T) {
  if (count <= 0) return;
  T[0] = 1.0;
  if (order >= 1) dT[0] = 0.0;
  if (order >= 2) d2T[0] = 0.0;
  if (count > 1) {
    T[1] = s;
    if (order >= 1) dT[1] = 1.0;
    if (order >= 2) d2T[1] = 0.0;
  }
  for (int k = 1; k + 1 < count; ++k) {
    T[k + 1] = 2.0 * s * T[k] - T[k - 1];
    if (order >= 1) dT[k + 1] = 2.0 * T[k] + 2.0 * s * dT[k] - dT[k - 1];
    if (order >= 2) d2T[k + 1] = 4.0 * dT[k] + 2.0 * s * d2T[k] - d2T[k - 1];
  }
  if (order >= 1) {
    const double inv = 1.0 / half;
    for (int k = 0; k < count; ++k) dT[k] *= inv;
    if (order >= 2) {
      const double inv2 = inv * inv;
      for (int k = 0; k < count; ++k) d2T[k] *= inv2;
    }
  }
}

/// Smallest m with sum_{k >= m} |c_k| (1 + slope k) <= tol.
inline std::size_t resolved_length(std::span<const double> c, double slope, double tol) {
  double tail = 0.0;
  std::size_t m = c.size();
  for (std::size_t k = c.size(); k-- > 0;) {
    const double kk = static_cast<double>(k);
    tail += std::abs(c[k]) * (1.0 + slope * kk);
    if (tail > tol) break;
    m = k;
  }
  return m;
}

inline double max_abs(std::span<const double> c) {
  double m = 0.0;
  for (double v : c) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace zsde::cheb
