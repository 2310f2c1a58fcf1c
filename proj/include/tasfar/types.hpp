#ifndef TASFAR_TYPES_HPP
#define TASFAR_TYPES_HPP

#include <Eigen/Dense>

#include <random>
#include <stdexcept>
#include <string>

namespace tasfar {

using Scalar = double;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;
using Rng = std::mt19937_64;

/// Invalid parameters or configuration. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Unusable, missing or inconsistent data. CLI exit code 3.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dimension mismatch between values that must agree.
struct ShapeError : DataError {
  using DataError::DataError;
};

/// Non-finite values or diverging computations. CLI exit code 4.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tasfar

#endif
