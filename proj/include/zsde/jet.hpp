#pragma once

#include "zsde/types.hpp"

#include <array>
#include <cmath>

namespace zsde {

/// Second-order forward-mode number: value, gradient and Hessian with respect
/// to `n` seed variables. Used to differentiate expression-defined surfaces
/// exactly (up to rounding).
struct Jet {
  double v = 0.0;
  int n = 0;
  std::array<double, kMaxDim> g{};
  std::array<double, kMaxDim * kMaxDim> h{};

  static Jet constant(double value, int nvars) {
    Jet j;
    j.v = value;
    j.n = nvars;
    return j;
  }

  static Jet variable(double value, int index, int nvars) {
    Jet j = constant(value, nvars);
    j.g[static_cast<std::size_t>(index)] = 1.0;
    return j;
  }

  double hess(int i, int k) const { return h[static_cast<std::size_t>(i * kMaxDim + k)]; }
  double& hess(int i, int k) { return h[static_cast<std::size_t>(i * kMaxDim + k)]; }

  bool is_constant() const {
    for (int i = 0; i < n; ++i)
      if (g[static_cast<std::size_t>(i)] != 0.0) return false;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k)
        if (hess(i, k) != 0.0) return false;
    return true;
  }

  Vec gradient() const {
    Vec out(n);
    for (int i = 0; i < n; ++i) out(i) = g[static_cast<std::size_t>(i)];
    return out;
  }

  Mat hessian() const {
    Mat out(n, n);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) out(i, k) = hess(i, k);
    return out;
  }
};

/// f(u) given f(u0), f'(u0), f''(u0).
inline Jet chain(const Jet& u, double f, double df, double d2f) {
  Jet r = Jet::constant(f, u.n);
  for (int i = 0; i < u.n; ++i) r.g[static_cast<std::size_t>(i)] = df * u.g[static_cast<std::size_t>(i)];
  for (int i = 0; i < u.n; ++i)
    for (int k = 0; k < u.n; ++k)
      r.hess(i, k) = df * u.hess(i, k) +
                     d2f * u.g[static_cast<std::size_t>(i)] * u.g[static_cast<std::size_t>(k)];
  return r;
}

inline Jet operator+(const Jet& a, const Jet& b) {
  Jet r = a;
  r.v += b.v;
  for (int i = 0; i < a.n; ++i) r.g[static_cast<std::size_t>(i)] += b.g[static_cast<std::size_t>(i)];
  for (int i = 0; i < a.n; ++i)
    for (int k = 0; k < a.n; ++k) r.hess(i, k) += b.hess(i, k);
  return r;
}

inline Jet operator-(const Jet& a) { return chain(a, -a.v, -1.0, 0.0); }

inline Jet operator-(const Jet& a, const Jet& b) { return a + (-b); }

inline Jet operator*(const Jet& a, const Jet& b) {
  Jet r = Jet::constant(a.v * b.v, a.n);
  for (int i = 0; i < a.n; ++i) {
    const auto si = static_cast<std::size_t>(i);
    r.g[si] = a.v * b.g[si] + b.v * a.g[si];
  }
  for (int i = 0; i < a.n; ++i)
    for (int k = 0; k < a.n; ++k) {
      const auto si = static_cast<std::size_t>(i);
      const auto sk = static_cast<std::size_t>(k);
      r.hess(i, k) = a.v * b.hess(i, k) + b.v * a.hess(i, k) + a.g[si] * b.g[sk] + b.g[si] * a.g[sk];
    }
  return r;
}

inline Jet reciprocal(const Jet& a) {
  const double inv = 1.0 / a.v;
  return chain(a, inv, -inv * inv, 2.0 * inv * inv * inv);
}

inline Jet operator/(const Jet& a, const Jet& b) { return a * reciprocal(b); }

inline Jet exp(const Jet& a) {
  const double e = std::exp(a.v);
  return chain(a, e, e, e);
}

inline Jet log(const Jet& a) { return chain(a, std::log(a.v), 1.0 / a.v, -1.0 / (a.v * a.v)); }

inline Jet sqrt(const Jet& a) {
  const double s = std::sqrt(a.v);
  return chain(a, s, 0.5 / s, -0.25 / (s * a.v));
}

inline double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

inline Jet sgn(const Jet& a) { return Jet::constant(sgn(a.v), a.n); }

inline Jet abs(const Jet& a) { return chain(a, std::abs(a.v), sgn(a.v), 0.0); }

inline Jet pow(const Jet& base, const Jet& exponent) {
  if (exponent.is_constant()) {
    const double p = exponent.v;
    const double f = std::pow(base.v, p);
    const double df = p * std::pow(base.v, p - 1.0);
    const double d2f = p * (p - 1.0) * std::pow(base.v, p - 2.0);
    return chain(base, f, df, d2f);
  }
  return exp(exponent * log(base));
}

}  // namespace zsde
