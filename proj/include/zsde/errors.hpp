#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace zsde {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed arguments: dimension mismatches, empty grids, bad parameters.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration or expression text.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// The series/quadrature behind a transform chart did not resolve within tolerance.
class TransformBuildError : public Error {
 public:
  using Error::Error;
};

/// No radius could be certified for a chart.
class ChartBuildError : public Error {
 public:
  using Error::Error;
};

/// A point was evaluated outside the domain a chart covers.
class ChartExitError : public Error {
 public:
  using Error::Error;
};

/// Newton inversion of a chart map failed.
class InversionError : public Error {
 public:
  using Error::Error;
};

/// Newton inversion of the surface map x1 -> f(x1, x_rest) failed.
class SurfaceChartError : public Error {
 public:
  using Error::Error;
};

/// A simulated state became non-finite.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t step) : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Transform-route simulation could not continue (chart or inversion failure).
class SimulationError : public Error {
 public:
  using Error::Error;
};

/// Monte Carlo estimation had no usable paths.
class EstimationError : public Error {
 public:
  using Error::Error;
};

/// Weak comparison could not be carried out (too many incomplete paths).
class ComparisonError : public Error {
 public:
  using Error::Error;
};

}  // namespace zsde
