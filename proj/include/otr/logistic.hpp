#pragma once

#include "otr/common.hpp"

namespace otr {

struct IrlsOptions {
  double tolerance = 1e-8;  // max-abs coefficient change
  int max_iterations = 100;
  double ridge = 1e-8;      // jitter added to the weighted normal equations
};

struct LogisticFit {
  Vector coefficients;
  int iterations = 0;
  double gradient_norm = 0.0;  // max-abs score X^T (y - p) at the solution
};

// Binomial maximum likelihood by iteratively reweighted least squares.
// Throws NumericalError on non-convergence or on diverging coefficients
// (perfect or quasi-complete separation).
LogisticFit fit_logistic(const Matrix& x, const Vector& y, const IrlsOptions& options = {});

// Ordinary least squares with the same ridge jitter.
Vector fit_least_squares(const Matrix& x, const Vector& y, double ridge = 1e-8);

double expit(double eta);
double logit(double p);

}  // namespace otr
