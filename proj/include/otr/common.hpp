#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace otr {

// Covariates are read row by row (x_i^T beta), so they are stored row-major.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using SquareMatrix = Eigen::MatrixXd;

// Base for every error raised by the library. The CLI maps the subclass onto
// an exit code and a machine-readable error type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "error"; }
};

// Invalid input data or configuration (bad CSV, missing column, bad flags).
class DataError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "data_error"; }
};

// A numerical routine failed (non-convergence, separation, non-finite values).
class NumericalError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "numerical_error"; }
};

}  // namespace otr
