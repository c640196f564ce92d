#include "otr/objective.hpp"

#include <algorithm>
#include <type_traits>

namespace otr {

RegimeObjective::RegimeObjective(const Matrix& rows, const Vector& weights, double offset)
    : dimension_(static_cast<std::size_t>(rows.cols())), offset_(offset) {
  if (weights.size() != rows.rows()) throw DataError("objective: one weight per row required");
  if (!weights.allFinite() || !std::isfinite(offset)) throw NumericalError("objective: non-finite weights");
  Eigen::Index kept = 0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) kept += weights(i) != 0.0;
  rows_.resize(kept, rows.cols());
  weights_.resize(kept);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights(i) == 0.0) continue;
    rows_.row(r) = rows.row(i);
    weights_(r) = weights(i);
    ++r;
  }
}

void RegimeObjective::set_penalty(Vector center, SquareMatrix hessian) {
  const auto l = static_cast<Eigen::Index>(dimension_);
  if (center.size() != l || hessian.rows() != l || hessian.cols() != l) {
    throw DataError("objective: penalty dimensions do not match the covariates");
  }
  const double min_eigen =
      Eigen::SelfAdjointEigenSolver<SquareMatrix>(hessian, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  const double reach = center.norm() + 1.0;
  penalty_bound_ = min_eigen >= 0.0 ? 0.0 : -0.5 * min_eigen * reach * reach;
  center_ = std::move(center);
  hessian_ = std::move(hessian);
}

double RegimeObjective::step_part(const Eigen::Ref<const Vector>& beta) const {
  if (static_cast<std::size_t>(beta.size()) != dimension_) {
    throw DataError("objective: coefficient dimension does not match the covariates");
  }
  // Direct loop over the row-major storage: no temporary, and the small
  // fixed dimensions get unrolled.
  const double* x = rows_.data();
  const double* w = weights_.data();
  const Eigen::Index n = rows_.rows();
  double sum = 0.0;
  auto accumulate = [&](auto dim) {
    for (Eigen::Index i = 0; i < n; ++i, x += dim) {
      double proj = 0.0;
      for (Eigen::Index k = 0; k < dim; ++k) proj += x[k] * beta(k);
      sum += proj > 0.0 ? w[i] : 0.0;
    }
  };
  switch (dimension_) {
    case 2: accumulate(std::integral_constant<Eigen::Index, 2>{}); break;
    case 3: accumulate(std::integral_constant<Eigen::Index, 3>{}); break;
    default: accumulate(static_cast<Eigen::Index>(dimension_)); break;
  }
  return offset_ + sum;
}

double RegimeObjective::penalty(const Eigen::Ref<const Vector>& beta) const {
  if (!center_) return 0.0;
  const Vector diff = *center_ - beta;
  return -0.5 * diff.dot(hessian_ * diff);
}

double RegimeObjective::operator()(const Eigen::Ref<const Vector>& beta) const {
  return step_part(beta) + penalty(beta);
}

}  // namespace otr
