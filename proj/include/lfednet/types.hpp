#ifndef LFEDNET_TYPES_HPP
#define LFEDNET_TYPES_HPP

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace lfednet {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Generator outputs, one row per hour and one column per unit. Row-major
/// storage makes the flat view hour-major: index = t * n_gen + g.
using DispatchSchedule = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kHoursPerDay = 24;

/// Lower bound applied to every forecast variance.
inline constexpr double kSigma2Floor = 1e-6;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (CLI exit code 2).
class DataError : public Error {
public:
  using Error::Error;
};

/// A SystemConfig violating one or more invariants. Every violation is kept.
class ValidationError : public DataError {
public:
  explicit ValidationError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
  std::vector<std::string> violations_;
};

/// Solver or training failure (CLI exit code 3).
class NumericalError : public Error {
public:
  using Error::Error;
};

inline Vector flatten(const DispatchSchedule& p) {
  return Eigen::Map<const Vector>(p.data(), p.size());
}

inline DispatchSchedule unflatten(const Vector& v, Eigen::Index hours, Eigen::Index n_gen) {
  return Eigen::Map<const DispatchSchedule>(v.data(), hours, n_gen);
}

}  // namespace lfednet

#endif  // LFEDNET_TYPES_HPP
