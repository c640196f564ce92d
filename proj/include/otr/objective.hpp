#pragma once

#include <optional>

#include "otr/common.hpp"

namespace otr {

// Objective over linear regimes of the form
//
//   f(beta) = offset + sum_i weight_i * I(x_i^T beta > 0)
//             - 1/2 (center - beta)^T H (center - beta)
//
// Every AIPW value estimate is of this form: each pseudo-outcome takes one of
// two values depending on the decision, so the value is the mean of the
// control-arm terms plus the decision-weighted contrasts. The optional
// quadratic term carries the bootstrap reshaping. Rows with zero weight are
// dropped at construction.
class RegimeObjective {
 public:
  RegimeObjective(const Matrix& rows, const Vector& weights, double offset);

  void set_penalty(Vector center, SquareMatrix hessian);

  double operator()(const Eigen::Ref<const Vector>& beta) const;

  // offset + sum of weights with x_i^T beta > 0.
  double step_part(const Eigen::Ref<const Vector>& beta) const;
  // Quadratic term (0 without a penalty).
  double penalty(const Eigen::Ref<const Vector>& beta) const;

  // Upper bound of penalty() over the unit sphere; 0 when H is PSD.
  double penalty_upper_bound() const { return penalty_bound_; }
  bool has_penalty() const { return center_.has_value(); }
  const Vector& penalty_center() const { return *center_; }
  const SquareMatrix& penalty_hessian() const { return hessian_; }

  std::size_t dimension() const { return dimension_; }
  const Matrix& rows() const { return rows_; }
  const Vector& weights() const { return weights_; }
  double offset() const { return offset_; }

 private:
  std::size_t dimension_;
  Matrix rows_;
  Vector weights_;
  double offset_;
  std::optional<Vector> center_;
  SquareMatrix hessian_;
  double penalty_bound_ = 0.0;
};

}  // namespace otr
