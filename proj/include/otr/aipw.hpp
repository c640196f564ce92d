#pragma once

#include <cstddef>

#include "json.hpp"

#include "otr/common.hpp"
#include "otr/dataset.hpp"
#include "otr/nuisance.hpp"
#include "otr/objective.hpp"

namespace otr {

// Pseudo-outcome of observation i under regime beta:
//
//   I{A_i = d_i} / rho(A_i | X_i) * (Y_i - mu_d(X_i)) + mu_d(X_i)
//
// with rho(A|X) = e(X) A + (1 - e(X)) (1 - A) and mu_d the outcome mean of
// the arm the rule assigns. Throws NumericalError if the result is not finite.
double pseudo_outcome(std::size_t i, const Dataset& data, const NuisanceFit& nf,
                      const Eigen::Ref<const Vector>& beta);
double pseudo_outcome(std::size_t i, const Dataset& data, const NuisanceFit& nf,
                      const RegimeParameter& beta);

Vector pseudo_outcomes(const Dataset& data, const NuisanceFit& nf, const Eigen::Ref<const Vector>& beta);

// Mean pseudo-outcome. The raw-vector overload accepts any nonzero direction.
double value(const Dataset& data, const NuisanceFit& nf, const RegimeParameter& beta);
double value_at(const Dataset& data, const NuisanceFit& nf, const Eigen::Ref<const Vector>& beta);

// (1/n) sum (v_i - V)^2 with divisor n. Requires n >= 2.
double sigma2(const Dataset& data, const NuisanceFit& nf, const RegimeParameter& beta);

// Pseudo-outcome of every observation under d = 0 and d = 1.
struct ArmPseudoOutcomes {
  Vector control;
  Vector treated;
};
ArmPseudoOutcomes arm_pseudo_outcomes(const Dataset& data, const NuisanceFit& nf);

// The value function as a RegimeObjective (offset = mean control term,
// weights = contrasts / n), used by the policy search.
RegimeObjective value_objective(const Dataset& data, const NuisanceFit& nf);

struct ValueReport {
  Vector beta_hat;
  double value = 0.0;
  double sigma2 = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double level = 0.95;
  std::size_t n = 0;

  nlohmann::json to_json() const;
};

// Normal interval value +/- z_{1 - (1 - level)/2} sqrt(sigma2 / n).
ValueReport value_ci(const Dataset& data, const NuisanceFit& nf, const RegimeParameter& beta_hat,
                     double level = 0.95);

// Two-sided standard normal critical value for the given confidence level.
double normal_critical_value(double level);

}  // namespace otr
