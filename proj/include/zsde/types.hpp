#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>

namespace zsde {

/// Largest state dimension supported. Vectors and matrices live inline
/// (no heap traffic in the simulation loop) up to this size.
inline constexpr int kMaxDim = 6;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

inline Vec make_vec(std::initializer_list<double> values) {
  Vec v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

inline Vec make_vec(std::span<const double> values) {
  Vec v(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v(static_cast<Eigen::Index>(i)) = values[i];
  return v;
}

/// Which half-field is used on the switching surface itself.
enum class BoundarySide { plus, minus, midpoint };

}  // namespace zsde
