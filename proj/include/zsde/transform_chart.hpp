#pragma once

// Local transformation G = (g1, x2 + g2, ..., xd + gd) that removes a drift
// discontinuity across {x1 = 0}, its derivatives, and its Newton inverse H.
//
// On a chart box the maps x1 -> g_k(x1, x_rest) are stored as Chebyshev
// series on the two pieces [lo, 0] and [0, hi], tabulated at a tensor grid of
// Chebyshev nodes in x_rest and interpolated across it.

#include "zsde/chebyshev.hpp"
#include "zsde/coefficient_field.hpp"
#include "zsde/errors.hpp"
#include "zsde/philox.hpp"
#include "zsde/types.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace zsde {

struct ChartTolerances {
  double quadrature = 1e-10;
  double newton = 1e-12;
  int newton_max_iter = 50;
  double delta_inv = 1e-3;
  double shrink = 0.7;
  double min_radius = 1e-3;
  /// Largest |I| accepted on a chart; bounds the dynamic range of exp(-I).
  double max_exponent = 6.0;
  bool force_radius = false;
};

/// G, its Jacobian and the Hessians of its components at one point.
struct GEval {
  Vec value;
  Mat jacobian;
  std::array<Mat, kMaxDim> hessian;
};

namespace detail {

inline constexpr int kX1Sizes[] = {17, 33, 65, 129, 257};
inline constexpr int kRestSizes[] = {9, 17, 33, 65};

struct PieceGeom {
  double a = 0.0;
  double b = 0.0;
  int side = 1;  // +1 plus piece [0, b], -1 minus piece [a, 0]

  double half() const { return 0.5 * (b - a); }
  double anchor() const { return side > 0 ? -1.0 : 1.0; }
  Half field_half() const { return side > 0 ? Half::plus : Half::minus; }
};

/// Series of one piece at one x_rest.
struct Slice {
  std::vector<double> inner;               // I
  std::vector<std::vector<double>> g;      // g_1 .. g_d
  std::vector<std::vector<double>> c;      // C_2 .. C_d
};

/// Chops `c` in place when `truncate`; false if the series is not resolved.
inline bool chop(std::vector<double>& c, double half, double tol, bool truncate) {
  const double scale = std::max(1.0, cheb::max_abs(c));
  const std::size_t m = cheb::resolved_length(c, 1.0 / half, tol * scale);
  if (m + 4 > c.size()) return false;
  if (truncate) c.resize(std::max<std::size_t>(m, 1));
  return true;
}

inline bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

/// Samples the field along one x1 piece and runs the integration chain.
/// Returns nullopt when some stage is not resolved at n points.
/// `full` receives the untruncated chain, used to judge resolution across x_rest.
inline std::optional<Slice> build_slice(const CoefficientField& field, const PieceGeom& geom, const Vec& x_rest,
                                        int n, double tol, Slice* full) {
  const auto& grid = cheb::grid(n);
  const int d = field.dim;
  const double half = geom.half();
  std::vector<double> beta(static_cast<std::size_t>(n));
  std::vector<double> beta_k(static_cast<std::size_t>((d - 1) * n));
  Vec x(d);
  if (d > 1) x.tail(d - 1) = x_rest;
  for (int j = 0; j < n; ++j) {
    x(0) = cheb::from_unit(grid.s[static_cast<std::size_t>(j)], geom.a, geom.b);
    const double a11 = field.a11(x);
    const Vec mu = field.drift_of(geom.field_half(), x);
    if (!(a11 > 0.0) || !std::isfinite(a11) || !mu.allFinite())
      throw TransformBuildError("(sigma sigma^T)_11 not positive or coefficients not finite at x1 = " +
                                std::to_string(x(0)));
    beta[static_cast<std::size_t>(j)] = 2.0 * mu(0) / a11;
    for (int k = 1; k < d; ++k) beta_k[static_cast<std::size_t>((k - 1) * n + j)] = 2.0 * mu(k) / a11;
  }

  auto chain = [&](bool truncate) -> std::optional<Slice> {
    Slice out;
    std::vector<double> cb = cheb::coefficients(grid, beta);
    if (!chop(cb, half, tol, truncate)) return std::nullopt;
    out.inner = cheb::integrate(cb, half, geom.anchor());
    std::vector<double> I(static_cast<std::size_t>(n)), E(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      I[static_cast<std::size_t>(j)] = cheb::evaluate(out.inner, grid.s[static_cast<std::size_t>(j)]);
      E[static_cast<std::size_t>(j)] = std::exp(-I[static_cast<std::size_t>(j)]);
    }
    if (!all_finite(E)) throw TransformBuildError("exp(-I) overflows on the chart box");
    std::vector<double> cE = cheb::coefficients(grid, E);
    if (!chop(cE, half, tol, truncate)) return std::nullopt;
    out.g.push_back(cheb::integrate(cE, half, geom.anchor()));
    std::vector<double> P(static_cast<std::size_t>(n)), Q(static_cast<std::size_t>(n));
    for (int k = 1; k < d; ++k) {
      for (int j = 0; j < n; ++j)
        P[static_cast<std::size_t>(j)] =
            -beta_k[static_cast<std::size_t>((k - 1) * n + j)] / E[static_cast<std::size_t>(j)];
      if (!all_finite(P)) throw TransformBuildError("exp(I) overflows on the chart box");
      std::vector<double> cP = cheb::coefficients(grid, P);
      if (!chop(cP, half, tol, truncate)) return std::nullopt;
      out.c.push_back(cheb::integrate(cP, half, geom.anchor()));
      for (int j = 0; j < n; ++j)
        Q[static_cast<std::size_t>(j)] =
            cheb::evaluate(out.c.back(), grid.s[static_cast<std::size_t>(j)]) * E[static_cast<std::size_t>(j)];
      std::vector<double> cQ = cheb::coefficients(grid, Q);
      if (!chop(cQ, half, tol, truncate)) return std::nullopt;
      out.g.push_back(cheb::integrate(cQ, half, geom.anchor()));
    }
    return out;
  };

  if (full) {
    auto f = chain(false);
    if (!f) return std::nullopt;
    *full = std::move(*f);
  }
  return chain(true);
}

/// 1-D Chebyshev transform along one rest dimension of a tensor laid out as
/// data[inner_index + inner * flat_rest], flat_rest = j_1 + M j_2 + ...
inline void transform_along(std::span<double> data, std::size_t inner, int M, int dim) {
  const auto& grid = cheb::grid(M);
  std::size_t stride = inner;
  for (int m = 0; m < dim; ++m) stride *= static_cast<std::size_t>(M);
  const std::size_t span = stride * static_cast<std::size_t>(M);
  std::vector<double> line(static_cast<std::size_t>(M)), out(static_cast<std::size_t>(M));
  for (std::size_t outer = 0; outer < data.size(); outer += span)
    for (std::size_t off = 0; off < stride; ++off) {
      double* base = data.data() + outer + off;
      for (int j = 0; j < M; ++j) line[static_cast<std::size_t>(j)] = base[stride * static_cast<std::size_t>(j)];
      cheb::coefficients(grid, line, out);
      for (int j = 0; j < M; ++j) base[stride * static_cast<std::size_t>(j)] = out[static_cast<std::size_t>(j)];
    }
}

inline std::size_t ipow(int base, int e) {
  std::size_t r = 1;
  for (int i = 0; i < e; ++i) r *= static_cast<std::size_t>(base);
  return r;
}

}  // namespace detail

class TransformChart {
 public:
  /// Series tables on one side of the hyperplane.
  struct Piece {
    detail::PieceGeom geom;
    bool empty = true;
    int n_samples = 0;        // x1 sample count used for the build
    int n1 = 0;               // stored coefficient count in x1
    std::vector<int> active;  // components with a nonzero series
    /// coef[i1 + n1 (a + na (j + R b))]: a indexes `active`, j the rest
    /// coefficient multi-index within a sub-box, b the sub-box.
    std::vector<double> coef;
    std::vector<std::vector<double>> inner;  // I series per rest node
  };

  const Vec& center() const noexcept { return center_; }
  double radius() const noexcept { return radius_; }
  int dim() const noexcept { return dim_; }
  int rest_nodes() const noexcept { return M_; }
  int rest_splits() const noexcept { return S_; }
  const ChartTolerances& tolerances() const noexcept { return tol_; }
  const CoefficientField& field() const noexcept { return *field_; }
  const std::shared_ptr<const CoefficientField>& field_ptr() const noexcept { return field_; }
  const Piece& plus_piece() const noexcept { return plus_; }
  const Piece& minus_piece() const noexcept { return minus_; }
  double box_lo(int i) const { return lo_[static_cast<std::size_t>(i)]; }
  double box_hi(int i) const { return hi_[static_cast<std::size_t>(i)]; }

  bool in_ball(const Vec& x) const { return (x - center_).norm() <= radius_ * (1.0 + 1e-12); }

  bool in_box(const Vec& x) const {
    for (int i = 0; i < dim_; ++i) {
      const double lo = lo_[static_cast<std::size_t>(i)];
      const double hi = hi_[static_cast<std::size_t>(i)];
      const double slack = 1e-12 * (1.0 + std::abs(lo) + std::abs(hi));
      if (!(x(i) >= lo - slack && x(i) <= hi + slack)) return false;
    }
    return true;
  }

  Vec clip_to_box(Vec x) const {
    for (int i = 0; i < dim_; ++i)
      x(i) = std::clamp(x(i), lo_[static_cast<std::size_t>(i)], hi_[static_cast<std::size_t>(i)]);
    return x;
  }

  /// G and, for order >= 1, the Jacobian, for order 2 also the Hessians.
  /// Defined on the whole chart box; x1 = 0 uses the plus piece.
  void evaluate(const Vec& x, int order, GEval& out) const {
    if (x.size() != dim_) throw InputError("point dimension does not match the chart");
    if (!in_box(x)) throw ChartExitError("point outside the chart box");
    const Piece& p = (x(0) > 0.0 || (x(0) == 0.0 && !plus_.empty)) ? plus_ : minus_;
    if (p.empty) throw ChartExitError("point on a side of the hyperplane the chart does not cover");
    const int d = dim_;
    const int rd = d - 1;
    const int n1 = p.n1;
    const int na = static_cast<int>(p.active.size());
    const int M = M_;
    const std::size_t block = static_cast<std::size_t>(na * n1);
    const std::size_t R = detail::ipow(M, rd);

    thread_local std::vector<double> Tr, dTr, d2Tr, T1, acc;
    Tr.resize(static_cast<std::size_t>(std::max(1, rd * M)));
    dTr.resize(Tr.size());
    d2Tr.resize(Tr.size());
    std::size_t box = 0;
    std::size_t box_stride = 1;
    for (int m = 0; m < rd; ++m) {
      const double lo = lo_[static_cast<std::size_t>(m + 1)];
      const double width = (hi_[static_cast<std::size_t>(m + 1)] - lo) / S_;
      const int b = std::clamp(static_cast<int>(std::floor((x(m + 1) - lo) / width)), 0, S_ - 1);
      box += box_stride * static_cast<std::size_t>(b);
      box_stride *= static_cast<std::size_t>(S_);
      const double a = lo + b * width;
      const double s = std::clamp(cheb::to_unit(x(m + 1), a, a + width), -1.0, 1.0);
      const std::size_t off = static_cast<std::size_t>(m * M);
      cheb::basis(M, s, 0.5 * width, order, &Tr[off], &dTr[off], &d2Tr[off]);
    }
    // x1 basis columns T, T', T'' stored contiguously
    const std::size_t n1s = static_cast<std::size_t>(n1);
    T1.resize(3 * n1s);
    const double s1 = std::clamp(cheb::to_unit(x(0), p.geom.a, p.geom.b), -1.0, 1.0);
    cheb::basis(n1, s1, p.geom.half(), order, T1.data(), T1.data() + n1s, T1.data() + 2 * n1s);

    // contract x1 first: acc[deriv * RA + flat * na + a]
    const std::size_t RA = R * static_cast<std::size_t>(na);
    acc.resize(static_cast<std::size_t>(order + 1) * RA);
    {
      using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
      const double* coef = p.coef.data() + box * R * block;
      Eigen::Map<const RowMajor> C(coef, static_cast<Eigen::Index>(RA), n1);
      Eigen::Map<const Eigen::MatrixXd> B(T1.data(), n1, order + 1);
      Eigen::Map<Eigen::MatrixXd> U(acc.data(), static_cast<Eigen::Index>(RA), order + 1);
      U.noalias() = C.lazyProduct(B);
    }

    out.value = x;
    out.value(0) = 0.0;
    if (order >= 1) {
      out.jacobian.setIdentity(d, d);
      out.jacobian(0, 0) = 0.0;
    }
    if (order >= 2)
      for (int k = 0; k < d; ++k) out.hessian[static_cast<std::size_t>(k)].setZero(d, d);
    if (na == 0) return;

    if (rd <= 1) {
      const std::size_t Ms = rd == 0 ? 1 : static_cast<std::size_t>(M);
      if (rd == 0) Tr[0] = 1.0;
      for (int a = 0; a < na; ++a) {
        const int k = p.active[static_cast<std::size_t>(a)];
        const double* u = acc.data() + a;
        const std::size_t st = static_cast<std::size_t>(na);
        double v = 0.0, gx = 0.0, gy = 0.0, hxx = 0.0, hxy = 0.0, hyy = 0.0;
        for (std::size_t jj = 0; jj < Ms; ++jj) {
          const double u0 = u[jj * st];
          v += Tr[jj] * u0;
          if (order >= 1) {
            const double u1 = u[RA + jj * st];
            gx += Tr[jj] * u1;
            if (rd == 1) gy += dTr[jj] * u0;
            if (order >= 2) {
              hxx += Tr[jj] * u[2 * RA + jj * st];
              if (rd == 1) {
                hxy += dTr[jj] * u1;
                hyy += d2Tr[jj] * u0;
              }
            }
          }
        }
        out.value(k) += v;
        if (order >= 1) {
          out.jacobian(k, 0) += gx;
          if (rd == 1) out.jacobian(k, 1) += gy;
        }
        if (order >= 2) {
          Mat& h = out.hessian[static_cast<std::size_t>(k)];
          h(0, 0) = hxx;
          if (rd == 1) {
            h(0, 1) = h(1, 0) = hxy;
            h(1, 1) = hyy;
          }
        }
      }
      return;
    }

    std::array<int, kMaxDim> j{};
    std::array<double, 1 + kMaxDim> w1{};
    std::array<double, kMaxDim * kMaxDim> w2{};
    auto factor = [&](int m, int deriv) {
      const std::size_t i = static_cast<std::size_t>(m * M + j[static_cast<std::size_t>(m)]);
      return deriv == 0 ? Tr[i] : (deriv == 1 ? dTr[i] : d2Tr[i]);
    };
    for (std::size_t flat = 0; flat < R; ++flat) {
      // rest basis products with zero, one or two differentiated factors
      double w0 = 1.0;
      for (int m = 0; m < rd; ++m) w0 *= factor(m, 0);
      if (order >= 1)
        for (int m = 0; m < rd; ++m) {
          double v = factor(m, 1);
          for (int l = 0; l < rd; ++l)
            if (l != m) v *= factor(l, 0);
          w1[static_cast<std::size_t>(m)] = v;
        }
      if (order >= 2)
        for (int m = 0; m < rd; ++m)
          for (int l = m; l < rd; ++l) {
            double v = (m == l) ? factor(m, 2) : factor(m, 1) * factor(l, 1);
            for (int o = 0; o < rd; ++o)
              if (o != m && o != l) v *= factor(o, 0);
            w2[static_cast<std::size_t>(m * rd + l)] = v;
          }
      for (int a = 0; a < na; ++a) {
        const int k = p.active[static_cast<std::size_t>(a)];
        const std::size_t q = flat * static_cast<std::size_t>(na) + static_cast<std::size_t>(a);
        const double u0 = acc[q];
        out.value(k) += w0 * u0;
        if (order >= 1) {
          const double u1 = acc[RA + q];
          out.jacobian(k, 0) += w0 * u1;
          for (int m = 0; m < rd; ++m) out.jacobian(k, m + 1) += w1[static_cast<std::size_t>(m)] * u0;
          if (order >= 2) {
            Mat& h = out.hessian[static_cast<std::size_t>(k)];
            h(0, 0) += w0 * acc[2 * RA + q];
            for (int m = 0; m < rd; ++m) h(0, m + 1) += w1[static_cast<std::size_t>(m)] * u1;
            for (int m = 0; m < rd; ++m)
              for (int l = m; l < rd; ++l) h(m + 1, l + 1) += w2[static_cast<std::size_t>(m * rd + l)] * u0;
          }
        }
      }
      for (int m = 0; m < rd; ++m) {
        if (++j[static_cast<std::size_t>(m)] < M) break;
        j[static_cast<std::size_t>(m)] = 0;
      }
    }
    if (order >= 2)
      for (int k : p.active) {
        Mat& h = out.hessian[static_cast<std::size_t>(k)];
        for (int m = 0; m < d; ++m)
          for (int l = m + 1; l < d; ++l) h(l, m) = h(m, l);
      }
  }

  Vec apply_G(const Vec& x) const {
    require_ball(x);
    GEval e;
    evaluate(x, 0, e);
    return e.value;
  }

  Mat grad_G(const Vec& x) const {
    require_ball(x);
    GEval e;
    evaluate(x, 1, e);
    return e.jacobian;
  }

  /// Hessian of the k-th component (0-based).
  Mat hess_G(int k, const Vec& x) const {
    if (k < 0 || k >= dim_) throw InputError("component index out of range");
    require_ball(x);
    GEval e;
    evaluate(x, 2, e);
    return e.hessian[static_cast<std::size_t>(k)];
  }

  /// Newton inverse of G started from `guess` (default: z clipped to the ball).
  /// Every iterate is evaluated to `order`; on success `at` (if given) holds
  /// the evaluation at the returned point.
  Vec apply_H(const Vec& z, const Vec* guess = nullptr, GEval* at = nullptr, int order = 1) const {
    if (z.size() != dim_) throw InputError("point dimension does not match the chart");
    order = std::max(order, 1);
    Vec x;
    if (guess) {
      x = clip_to_box(*guess);
    } else {
      x = z;
      const Vec off = x - center_;
      const double n = off.norm();
      if (n > radius_) x = center_ + off * (radius_ / n);
    }
    const double target = tol_.newton * std::max(1.0, z.norm());
    thread_local GEval buffers[2];
    GEval* cur = &buffers[0];
    GEval* trial = &buffers[1];
    evaluate(x, order, *cur);
    double nr = (cur->value - z).norm();
    auto done = [&]() {
      if (at) *at = *cur;
      return x;
    };
    for (int it = 0; it < tol_.newton_max_iter; ++it) {
      if (nr <= target) return done();
      const Vec step = solve(cur->jacobian, cur->value - z);
      if (!step.allFinite()) throw InversionError("singular Jacobian during inversion");
      double t = 1.0;
      Vec xn;
      double nrn = 0.0;
      for (int halving = 0;; ++halving) {
        xn = clip_to_box(x - t * step);
        evaluate(xn, order, *trial);
        nrn = (trial->value - z).norm();
        if (nrn < nr || halving >= 30) break;
        t *= 0.5;
      }
      if (!(nrn < nr)) {
        if (nr <= 16.0 * target) return done();
        throw InversionError("inversion stalled at residual " + std::to_string(nr));
      }
      x = xn;
      std::swap(cur, trial);
      nr = nrn;
    }
    if (nr <= target) return done();
    throw InversionError("inversion did not converge in " + std::to_string(tol_.newton_max_iter) + " iterations");
  }

  /// mu~ and sigma~ at the point x = H(z), given the order-2 evaluation there.
  void transformed_at(const Vec& x, const GEval& e, Vec& drift, Mat& diffusion) const {
    const Vec mu = field_->drift(x);
    const Mat sigma = field_->diffusion(x);
    transformed_from(e, mu, sigma, drift, diffusion);
  }

  /// Same, with mu(x) and sigma(x) supplied by the caller.
  void transformed_from(const GEval& e, const Vec& mu, const Mat& sigma, Vec& drift, Mat& diffusion) const {
    drift.resize(dim_);
    const Mat a = sigma * sigma.transpose();
    for (int k = 0; k < dim_; ++k)
      drift(k) = e.jacobian.row(k).dot(mu) + 0.5 * a.cwiseProduct(e.hessian[static_cast<std::size_t>(k)]).sum();
    diffusion = e.jacobian * sigma;
  }

  std::pair<Vec, Mat> transformed_coefficients(const Vec& z) const {
    GEval e;
    const Vec x = apply_H(z, nullptr, &e, 2);
    Vec drift;
    Mat diffusion;
    transformed_at(x, e, drift, diffusion);
    return {drift, diffusion};
  }

  /// Smallest singular value of grad G at x (box-level, no ball check).
  double min_singular_value(const Vec& x) const {
    GEval e;
    evaluate(x, 1, e);
    if (!e.jacobian.allFinite()) return 0.0;
    Eigen::JacobiSVD<Mat> svd(e.jacobian);
    return svd.singularValues().minCoeff();
  }

  /// Sample points used to certify invertibility: the center and shells at
  /// r/4, r/2, 3r/4 and r with 32 d directions each.
  std::vector<Vec> certification_points() const {
    std::vector<Vec> pts{center_};
    const int ndir = 32 * dim_;
    const GaussianStream stream(0x5eedc0de5eedc0deull);
    std::vector<Vec> dirs;
    for (int i = 0; i < ndir; ++i) {
      Vec u(dim_);
      if (dim_ == 1) {
        u(0) = (i % 2 == 0) ? 1.0 : -1.0;
      } else if (dim_ == 2) {
        const double a = 2.0 * std::numbers::pi * i / ndir;
        u << std::cos(a), std::sin(a);
      } else {
        std::array<double, kMaxDim> g{};
        stream.normals(static_cast<std::uint64_t>(i), 0, std::span<double>(g.data(), static_cast<std::size_t>(dim_)));
        for (int k = 0; k < dim_; ++k) u(k) = g[static_cast<std::size_t>(k)];
        u.normalize();
      }
      dirs.push_back(u);
    }
    for (double frac : {0.25, 0.5, 0.75, 1.0})
      for (const auto& u : dirs) pts.push_back(center_ + frac * radius_ * u);
    return pts;
  }

  /// Minimum singular value over the certification points.
  double certified_floor() const {
    double floor = std::numeric_limits<double>::infinity();
    for (const auto& p : certification_points()) floor = std::min(floor, min_singular_value(p));
    return floor;
  }

  /// Bound on |I| over the tabulated box, from the stored series.
  double exponent_bound() const {
    double bound = 0.0;
    for (const Piece* p : {&plus_, &minus_})
      for (const auto& series : p->inner) {
        double sum = 0.0;
        for (double c : series) sum += std::abs(c);
        bound = std::max(bound, sum);
      }
    return bound;
  }

  // Quantities along a freshly computed x1 slice at the exact x_rest.
  double inner_exponent(double x1, const Vec& x_rest) const { return slice_value(x1, x_rest, SliceQuantity::inner, 0); }
  double g1(const Vec& x) const { return slice_value(x(0), rest_of(x), SliceQuantity::g, 0); }
  /// C_k for k = 2..d.
  double ck(int k, double xi, const Vec& x_rest) const {
    check_k(k);
    return slice_value(xi, x_rest, SliceQuantity::c, k - 2);
  }
  /// g_k for k = 2..d.
  double gk(int k, const Vec& x) const {
    check_k(k);
    return slice_value(x(0), rest_of(x), SliceQuantity::g, k - 1);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["dim"] = dim_;
    j["center"] = std::vector<double>(center_.data(), center_.data() + dim_);
    j["radius"] = radius_;
    j["tolerances"] = {{"quadrature", tol_.quadrature},
                       {"newton", tol_.newton},
                       {"newton_max_iter", tol_.newton_max_iter},
                       {"delta_inv", tol_.delta_inv}};
    j["box_lo"] = lo_;
    j["box_hi"] = hi_;
    j["rest_nodes"] = M_;
    j["rest_splits"] = S_;
    auto pieces = nlohmann::json::array();
    const auto nodes = rest_node_points();
    for (const Piece* p : {&minus_, &plus_}) {
      nlohmann::json pj;
      pj["side"] = p->geom.side > 0 ? "plus" : "minus";
      pj["a"] = p->geom.a;
      pj["b"] = p->geom.b;
      pj["empty"] = p->empty;
      pj["samples"] = p->n_samples;
      pj["n1"] = p->n1;
      pj["active"] = p->active;
      pj["coefficients"] = p->coef;
      // cached grids of the inner exponent: xi and I(xi) at the x1 samples per x_rest node
      auto grids = nlohmann::json::array();
      if (!p->empty) {
        const auto& g = cheb::grid(p->n_samples);
        for (std::size_t r = 0; r < p->inner.size(); ++r) {
          std::vector<double> xi, val;
          for (double s : g.s) {
            xi.push_back(cheb::from_unit(s, p->geom.a, p->geom.b));
            val.push_back(cheb::evaluate(p->inner[r], s));
          }
          grids.push_back({{"x_rest", std::vector<double>(nodes[r].data(), nodes[r].data() + nodes[r].size())},
                           {"xi", xi},
                           {"inner", val},
                           {"inner_series", p->inner[r]}});
        }
      }
      pj["cached_grids"] = grids;
      pieces.push_back(pj);
    }
    j["pieces"] = pieces;
    return j;
  }

  static TransformChart from_json(const nlohmann::json& j, std::shared_ptr<const CoefficientField> field) {
    TransformChart c;
    c.field_ = std::move(field);
    c.dim_ = j.at("dim").get<int>();
    if (c.dim_ != c.field_->dim) throw InputError("chart dimension does not match the field");
    c.center_ = make_vec(j.at("center").get<std::vector<double>>());
    c.radius_ = j.at("radius").get<double>();
    const auto& t = j.at("tolerances");
    c.tol_.quadrature = t.at("quadrature").get<double>();
    c.tol_.newton = t.at("newton").get<double>();
    c.tol_.newton_max_iter = t.at("newton_max_iter").get<int>();
    c.tol_.delta_inv = t.at("delta_inv").get<double>();
    c.lo_ = j.at("box_lo").get<std::vector<double>>();
    c.hi_ = j.at("box_hi").get<std::vector<double>>();
    c.M_ = j.at("rest_nodes").get<int>();
    c.S_ = j.at("rest_splits").get<int>();
    const std::size_t nodes = detail::ipow(c.M_ * c.S_, c.dim_ - 1);
    for (const auto& pj : j.at("pieces")) {
      const bool plus = pj.at("side").get<std::string>() == "plus";
      Piece& p = plus ? c.plus_ : c.minus_;
      p.geom.side = plus ? 1 : -1;
      p.geom.a = pj.at("a").get<double>();
      p.geom.b = pj.at("b").get<double>();
      p.empty = pj.at("empty").get<bool>();
      p.n_samples = pj.at("samples").get<int>();
      p.n1 = pj.at("n1").get<int>();
      p.active = pj.at("active").get<std::vector<int>>();
      p.coef = pj.at("coefficients").get<std::vector<double>>();
      for (const auto& g : pj.at("cached_grids")) p.inner.push_back(g.at("inner_series").get<std::vector<double>>());
      const std::size_t expected = p.empty ? 0 : static_cast<std::size_t>(p.n1) * p.active.size() * nodes;
      if (p.coef.size() != expected) throw InputError("chart JSON has a coefficient tensor of the wrong size");
    }
    return c;
  }

  /// Builds the series tables for a fixed radius; no invertibility check.
  static TransformChart tabulate(std::shared_ptr<const CoefficientField> field, const Vec& center, double radius,
                                 const ChartTolerances& tol) {
    if (!field) throw InputError("chart needs a coefficient field");
    field->check_point(center);
    if (!(radius > 0.0) || !std::isfinite(radius)) throw InputError("chart radius must be positive");
    if (!(tol.quadrature > 0.0) || !(tol.newton > 0.0)) throw InputError("tolerances must be positive");
    TransformChart c;
    c.field_ = std::move(field);
    c.dim_ = c.field_->dim;
    c.center_ = center;
    c.radius_ = radius;
    c.tol_ = tol;
    const int d = c.dim_;
    c.lo_.assign(static_cast<std::size_t>(d), 0.0);
    c.hi_.assign(static_cast<std::size_t>(d), 0.0);
    c.lo_[0] = std::min(0.0, center(0) - radius);
    c.hi_[0] = std::max(0.0, center(0) + radius);
    for (int i = 1; i < d; ++i) {
      c.lo_[static_cast<std::size_t>(i)] = center(i) - radius;
      c.hi_[static_cast<std::size_t>(i)] = center(i) + radius;
    }
    c.minus_.geom = {c.lo_[0], 0.0, -1};
    c.plus_.geom = {0.0, c.hi_[0], 1};
    c.minus_.empty = !(c.lo_[0] < 0.0);
    c.plus_.empty = !(c.hi_[0] > 0.0);

    int n_minus = detail::kX1Sizes[0];
    int n_plus = detail::kX1Sizes[0];
    const int rd = d - 1;
    if (rd == 0) {
      c.M_ = 1;
      c.S_ = 1;
      c.tabulate_piece(c.minus_, n_minus, false);
      c.tabulate_piece(c.plus_, n_plus, false);
      return c;
    }
    // candidate (nodes, splits) pairs, cheapest evaluation first
    for (int M : detail::kRestSizes)
      for (int S : {1, 2, 4, 8, 16, 32}) {
        if (detail::ipow(M * S, rd) > kMaxRestNodes) continue;
        c.M_ = M;
        c.S_ = S;
        if (c.tabulate_piece(c.minus_, n_minus, true) && c.tabulate_piece(c.plus_, n_plus, true)) return c;
      }
    throw TransformBuildError("series in x2..xd not resolved on the chart box");
  }

 private:
  static constexpr std::size_t kMaxRestNodes = 20000;

  std::shared_ptr<const CoefficientField> field_;
  int dim_ = 1;
  Vec center_;
  double radius_ = 0.0;
  ChartTolerances tol_;
  std::vector<double> lo_, hi_;
  int M_ = 1;  // Chebyshev nodes per rest dimension in each sub-box
  int S_ = 1;  // sub-boxes per rest dimension
  Piece plus_, minus_;

  enum class SliceQuantity { inner, g, c };

  static Vec solve(const Mat& J, const Vec& r) {
    if (J.rows() == 1) {
      Vec out(1);
      out(0) = r(0) / J(0, 0);
      return out;
    }
    if (J.rows() == 2) {
      const double det = J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
      Vec out(2);
      out(0) = (J(1, 1) * r(0) - J(0, 1) * r(1)) / det;
      out(1) = (J(0, 0) * r(1) - J(1, 0) * r(0)) / det;
      return out;
    }
    return J.partialPivLu().solve(r);
  }

  void require_ball(const Vec& x) const {
    if (x.size() != dim_) throw InputError("point dimension does not match the chart");
    if (!in_ball(x)) throw ChartExitError("point outside the chart ball");
  }

  void check_k(int k) const {
    if (k < 2 || k > dim_) throw InputError("component index k must be in 2..d");
  }

  Vec rest_of(const Vec& x) const {
    if (x.size() != dim_) throw InputError("point dimension does not match the chart");
    return x.tail(dim_ - 1);
  }

  /// Rest nodes, sub-box by sub-box.
  std::vector<Vec> rest_node_points() const {
    const int rd = dim_ - 1;
    const std::size_t R = detail::ipow(M_, rd);
    const std::size_t B = detail::ipow(S_, rd);
    std::vector<Vec> out;
    out.reserve(R * B);
    const auto& g = cheb::grid(std::max(M_, 2));
    std::array<int, kMaxDim> b{};
    for (std::size_t box = 0; box < B; ++box) {
      std::array<int, kMaxDim> j{};
      for (std::size_t flat = 0; flat < R; ++flat) {
        Vec r(rd);
        for (int m = 0; m < rd; ++m) {
          const double lo = lo_[static_cast<std::size_t>(m + 1)];
          const double width = (hi_[static_cast<std::size_t>(m + 1)] - lo) / S_;
          const double a = lo + b[static_cast<std::size_t>(m)] * width;
          r(m) = cheb::from_unit(g.s[static_cast<std::size_t>(j[static_cast<std::size_t>(m)])], a, a + width);
        }
        out.push_back(r);
        for (int m = 0; m < rd; ++m) {
          if (++j[static_cast<std::size_t>(m)] < M_) break;
          j[static_cast<std::size_t>(m)] = 0;
        }
      }
      for (int m = 0; m < rd; ++m) {
        if (++b[static_cast<std::size_t>(m)] < S_) break;
        b[static_cast<std::size_t>(m)] = 0;
      }
    }
    return out;
  }

  /// Fills one piece at the current (M, S). Returns false when the series are
  /// not resolved across x_rest. `n` is raised in place as needed.
  bool tabulate_piece(Piece& p, int& n, bool check_rest) {
    if (p.empty) return true;
    const int d = dim_;
    const int rd = d - 1;
    const auto nodes = rest_node_points();
    const std::size_t total = nodes.size();
    const std::size_t R = detail::ipow(M_, rd);
    std::vector<detail::Slice> kept(total), full(total);
    for (;;) {
      bool resolved = true;
      for (std::size_t r = 0; r < total; ++r) {
        auto s = detail::build_slice(*field_, p.geom, nodes[r], n, tol_.quadrature, check_rest ? &full[r] : nullptr);
        if (!s) {
          resolved = false;
          break;
        }
        kept[r] = std::move(*s);
      }
      if (resolved) break;
      const int* next = std::upper_bound(std::begin(detail::kX1Sizes), std::end(detail::kX1Sizes), n);
      if (next == std::end(detail::kX1Sizes))
        throw TransformBuildError("series in x1 not resolved with " + std::to_string(n) + " samples on [" +
                                  std::to_string(p.geom.a) + ", " + std::to_string(p.geom.b) + "]");
      n = *next;
    }

    if (check_rest) {
      // resolution across x_rest, judged on the untruncated series in each sub-box
      const std::size_t len = static_cast<std::size_t>(n + 1);
      const std::size_t inner = static_cast<std::size_t>(d) * len;
      std::vector<double> tensor(inner * total, 0.0);
      for (std::size_t r = 0; r < total; ++r)
        for (int k = 0; k < d; ++k) {
          const auto& g = full[r].g[static_cast<std::size_t>(k)];
          for (std::size_t i = 0; i < g.size(); ++i) tensor[i + len * static_cast<std::size_t>(k) + inner * r] = g[i];
        }
      const double scale = std::max(1.0, cheb::max_abs(tensor));
      for (std::size_t box = 0; box < total / R; ++box) {
        std::span<double> part(tensor.data() + box * R * inner, R * inner);
        for (int m = 0; m < rd; ++m) detail::transform_along(part, inner, M_, m);
        for (int m = 0; m < rd; ++m) {
          std::vector<double> profile(static_cast<std::size_t>(M_), 0.0);
          const std::size_t stride = inner * detail::ipow(M_, m);
          for (std::size_t idx = 0; idx < part.size(); ++idx) {
            const std::size_t jm = (idx / stride) % static_cast<std::size_t>(M_);
            profile[jm] = std::max(profile[jm], std::abs(part[idx]));
          }
          if (cheb::resolved_length(profile, 0.0, tol_.quadrature * scale) + 4 > profile.size()) return false;
        }
      }
    }

    std::size_t n1 = 1;
    p.active.clear();
    for (int k = 0; k < d; ++k) {
      bool nonzero = false;
      for (const auto& s : kept) {
        const auto& g = s.g[static_cast<std::size_t>(k)];
        n1 = std::max(n1, g.size());
        nonzero = nonzero || std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; });
      }
      if (nonzero) p.active.push_back(k);
    }
    p.n_samples = n;
    p.n1 = static_cast<int>(n1);
    const std::size_t inner = p.active.size() * n1;
    p.coef.assign(inner * total, 0.0);
    for (std::size_t r = 0; r < total; ++r)
      for (std::size_t a = 0; a < p.active.size(); ++a) {
        const auto& g = kept[r].g[static_cast<std::size_t>(p.active[a])];
        std::copy(g.begin(), g.end(), p.coef.begin() + static_cast<std::ptrdiff_t>(a * n1 + inner * r));
      }
    if (inner > 0)
      for (std::size_t box = 0; box < total / R; ++box) {
        std::span<double> part(p.coef.data() + box * R * inner, R * inner);
        for (int m = 0; m < rd; ++m) detail::transform_along(part, inner, M_, m);
      }
    p.inner.clear();
    for (auto& s : kept) p.inner.push_back(std::move(s.inner));
    return true;
  }

  double slice_value(double x1, const Vec& x_rest, SliceQuantity what, int index) const {
    if (x_rest.size() != dim_ - 1) throw InputError("x_rest has the wrong dimension");
    Vec x(dim_);
    x(0) = x1;
    if (dim_ > 1) x.tail(dim_ - 1) = x_rest;
    if (!in_box(x)) throw ChartExitError("point outside the chart box");
    if (x1 == 0.0) return 0.0;  // every slice quantity vanishes on the hyperplane
    const Piece& p = x1 > 0.0 ? plus_ : minus_;
    if (p.empty) throw ChartExitError("point on a side of the hyperplane the chart does not cover");
    int n = std::max(p.n_samples, detail::kX1Sizes[0]);
    for (;;) {
      auto s = detail::build_slice(*field_, p.geom, x_rest, n, tol_.quadrature, nullptr);
      if (s) {
        const double u = std::clamp(cheb::to_unit(x1, p.geom.a, p.geom.b), -1.0, 1.0);
        switch (what) {
          case SliceQuantity::inner:
            return cheb::evaluate(s->inner, u);
          case SliceQuantity::g:
            return cheb::evaluate(s->g[static_cast<std::size_t>(index)], u);
          case SliceQuantity::c:
            return cheb::evaluate(s->c[static_cast<std::size_t>(index)], u);
        }
      }
      const int* next = std::upper_bound(std::begin(detail::kX1Sizes), std::end(detail::kX1Sizes), n);
      if (next == std::end(detail::kX1Sizes)) throw TransformBuildError("series in x1 not resolved");
      n = *next;
    }
  }
};

/// Tabulates G on B_r(x0) starting from r = r_hint and shrinking by
/// tol.shrink until the smallest singular value of grad G on the
/// certification shells is at least tol.delta_inv and |I| stays below
/// tol.max_exponent.
inline TransformChart build_chart(std::shared_ptr<const CoefficientField> field, const Vec& x0, double r_hint,
                                  const ChartTolerances& tol = {}) {
  if (!field) throw InputError("chart needs a coefficient field");
  field->check_point(x0);
  if (!(r_hint > 0.0)) throw InputError("radius hint must be positive");
  double r = r_hint;
  std::string reason;
  for (;;) {
    try {
      TransformChart chart = TransformChart::tabulate(field, x0, r, tol);
      const double floor = chart.certified_floor();
      const double exponent = chart.exponent_bound();
      if (floor >= tol.delta_inv && exponent <= tol.max_exponent) return chart;
      reason = floor < tol.delta_inv ? "smallest singular value " + std::to_string(floor) + " below " +
                                           std::to_string(tol.delta_inv)
                                     : "inner exponent reaches " + std::to_string(exponent) + ", above " +
                                           std::to_string(tol.max_exponent);
    } catch (const TransformBuildError& e) {
      reason = e.what();
    }
    if (tol.force_radius)
      throw ChartBuildError("radius " + std::to_string(r) + " cannot be certified: " + reason);
    r *= tol.shrink;
    if (r < tol.min_radius)
      throw ChartBuildError("no certified radius down to " + std::to_string(tol.min_radius) + ": " + reason);
  }
}

/// Memoized charts for path simulation. Centers are snapped to a lattice of
/// spacing r_hint/4 so that charts can be shared between paths; a snapped
/// chart is used only if the requested point lies within rho r / 2 of its
/// center, otherwise a chart centered exactly at the point is built.
class ChartAtlas {
 public:
  using ChartPtr = std::shared_ptr<const TransformChart>;

  ChartAtlas(std::shared_ptr<const CoefficientField> field, double r_hint, ChartTolerances tol, double rho)
      : field_(std::move(field)), r_hint_(r_hint), tol_(tol), rho_(rho) {
    if (!(r_hint > 0.0)) throw InputError("radius hint must be positive");
    if (!(rho > 0.0 && rho < 1.0)) throw InputError("chart exit fraction must lie in (0, 1)");
  }

  double exit_fraction() const noexcept { return rho_; }
  const ChartTolerances& tolerances() const noexcept { return tol_; }
  const std::shared_ptr<const CoefficientField>& field() const noexcept { return field_; }

  /// Chart centered exactly at x, memoized.
  ChartPtr exact(const Vec& x) {
    Key key{1, {}};
    for (int i = 0; i < x.size(); ++i) key.second.push_back(std::bit_cast<long long>(x(i)));
    return lookup(key, x);
  }

  /// A chart whose ball comfortably contains x.
  ChartPtr covering(const Vec& x) {
    const double spacing = r_hint_ / 4.0;
    Key key{0, {}};
    Vec c(x.size());
    for (int i = 0; i < x.size(); ++i) {
      const double k = std::round(x(i) / spacing);
      key.second.push_back(static_cast<long long>(k));
      c(i) = k * spacing;
    }
    if (ChartPtr chart = lookup(key, c, /*allow_failure=*/true);
        chart && (x - chart->center()).norm() <= 0.5 * rho_ * chart->radius())
      return chart;
    return exact(x);
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return charts_.size();
  }

 private:
  using Key = std::pair<int, std::vector<long long>>;

  std::shared_ptr<const CoefficientField> field_;
  double r_hint_;
  ChartTolerances tol_;
  double rho_;
  mutable std::mutex mutex_;
  std::map<Key, std::shared_future<ChartPtr>> charts_;

  ChartPtr lookup(const Key& key, const Vec& center, bool allow_failure = false) {
    std::promise<ChartPtr> promise;
    std::shared_future<ChartPtr> future;
    bool builder = false;
    {
      std::lock_guard lock(mutex_);
      auto it = charts_.find(key);
      if (it == charts_.end()) {
        future = promise.get_future().share();
        charts_.emplace(key, future);
        builder = true;
      } else {
        future = it->second;
      }
    }
    if (builder) {
      try {
        promise.set_value(std::make_shared<const TransformChart>(build_chart(field_, center, r_hint_, tol_)));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    try {
      return future.get();
    } catch (const Error&) {
      if (allow_failure) return nullptr;
      throw;
    }
  }
};

}  // namespace zsde
