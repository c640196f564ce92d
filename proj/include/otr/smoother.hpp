#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "otr/common.hpp"

namespace otr {

// Silverman rule of thumb, 1.06 * sd * n^(-1/5).
double rule_of_thumb_bandwidth(std::span<const double> x);

// Weighted local-linear regression of r on a single covariate x with an
// Epanechnikov kernel. `bandwidth` is the Gaussian-equivalent scale: the
// kernel support is +/- sqrt(5) * bandwidth so that its standard deviation
// equals `bandwidth`.
//
// Where the local design is singular the estimate falls back to the local
// constant (weighted mean in the window), and to the nearest observation when
// the window is empty.
class LocalLinearSmoother {
 public:
  LocalLinearSmoother() = default;
  LocalLinearSmoother(std::span<const double> x, std::span<const double> r,
                      std::span<const double> weights, double bandwidth);

  struct Estimate {
    double value = 0.0;
    bool fallback = false;
  };

  Estimate operator()(double x0) const;

  // Estimates at every point of `points`; returns the number of fallbacks.
  std::size_t evaluate(std::span<const double> points, std::span<double> out) const;

  double bandwidth() const { return bandwidth_; }
  double half_width() const { return half_width_; }

 private:
  std::vector<double> x_;  // sorted
  std::vector<double> r_;
  std::vector<double> w_;
  double bandwidth_ = 0.0;
  double half_width_ = 0.0;
};

// mean + sum_j f_j(x_j), each f_j a centered local-linear smooth of one
// covariate column, fitted by weighted backfitting.
class AdditiveModel {
 public:
  struct Options {
    int max_cycles = 20;
    double tolerance = 1e-6;
    // <= 0 selects the rule of thumb separately for each column.
    double bandwidth = 0.0;
  };

  struct Diagnostics {
    int cycles = 0;
    bool converged = false;
    std::size_t fallbacks = 0;
    std::vector<double> bandwidths;
  };

  AdditiveModel() = default;

  // Smooths every non-constant column of x; constant columns (the intercept)
  // are absorbed by the mean term.
  static AdditiveModel fit(const Matrix& x, const Vector& z, const Vector& weights,
                           const Options& options, Diagnostics* diagnostics = nullptr);

  double predict(const Eigen::Ref<const Vector>& row) const;

  // Values at the training rows, exactly those produced by the final cycle.
  const Vector& fitted() const { return fitted_; }

 private:
  struct Component {
    Eigen::Index column = 0;
    LocalLinearSmoother smoother;
    double center = 0.0;
  };

  double mean_ = 0.0;
  std::vector<Component> components_;
  Vector fitted_;
};

}  // namespace otr
