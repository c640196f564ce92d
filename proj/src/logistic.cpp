#include "otr/logistic.hpp"

#include <cmath>
#include <sstream>

namespace otr {

namespace {
// |eta| beyond this means fitted probabilities within 1e-17 of 0 or 1; the
// likelihood is being driven to its supremum by separation.
constexpr double kSeparationEta = 40.0;
}  // namespace

double expit(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

LogisticFit fit_logistic(const Matrix& x, const Vector& y, const IrlsOptions& options) {
  const auto n = x.rows();
  const auto p = x.cols();
  if (y.size() != n || n == 0) throw DataError("logistic regression: size mismatch or empty design");

  LogisticFit fit;
  fit.coefficients = Vector::Zero(p);
  Vector eta(n), mu(n), w(n);
  const SquareMatrix jitter = options.ridge * SquareMatrix::Identity(p, p);

  for (int it = 1; it <= options.max_iterations; ++it) {
    eta.noalias() = x * fit.coefficients;
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = expit(eta(i));
      w(i) = mu(i) * (1.0 - mu(i));
    }
    const Vector score = x.transpose() * (y - mu);
    const SquareMatrix info = x.transpose() * w.asDiagonal() * x + jitter;
    const Vector step = info.ldlt().solve(score);
    if (!step.allFinite()) throw NumericalError("logistic regression: singular information matrix");
    fit.coefficients += step;
    fit.iterations = it;

    eta.noalias() = x * fit.coefficients;
    if (eta.cwiseAbs().maxCoeff() > kSeparationEta) {
      throw NumericalError(
          "logistic regression: coefficients diverge (perfect separation); clip the propensity "
          "model, regularize, or drop the separating covariates");
    }
    for (Eigen::Index i = 0; i < n; ++i) mu(i) = expit(eta(i));
    fit.gradient_norm = (x.transpose() * (y - mu)).cwiseAbs().maxCoeff();
    if (step.cwiseAbs().maxCoeff() < options.tolerance) return fit;
  }
  std::ostringstream msg;
  msg << "logistic regression did not converge in " << options.max_iterations
      << " iterations (final gradient norm " << fit.gradient_norm << ")";
  throw NumericalError(msg.str());
}

Vector fit_least_squares(const Matrix& x, const Vector& y, double ridge) {
  if (y.size() != x.rows() || x.rows() == 0) throw DataError("least squares: size mismatch or empty design");
  const SquareMatrix gram =
      x.transpose() * x + ridge * SquareMatrix::Identity(x.cols(), x.cols());
  return gram.ldlt().solve(x.transpose() * y);
}

}  // namespace otr
