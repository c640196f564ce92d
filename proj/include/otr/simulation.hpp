#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "otr/bootstrap.hpp"
#include "otr/common.hpp"
#include "otr/dataset.hpp"
#include "otr/nuisance.hpp"
#include "otr/policy_search.hpp"

namespace otr {

// Generator with p uniform covariates, a logistic propensity and a linear
// outcome model. Coefficient vectors are on (1, x_1, ..., x_p):
//
//   logit e(x) = propensity . (1, x)
//   Y = baseline . (1, x) + A * contrast . (1, x) + noise_sd * N(0, 1)
//
// Defaults give the two-covariate design with optimal rule 2 x_1 + x_2 > 0.
struct DgpSpec {
  std::size_t n = 20000;
  double lower = 1.0 - 1.7320508075688772;
  double upper = 1.0 + 1.7320508075688772;
  std::vector<double> propensity{-1.0, 0.8, 0.8};
  std::vector<double> baseline{2.0, -1.5, -1.5};
  std::vector<double> contrast{0.0, 2.0, 1.0};
  double noise_sd = 1.0;
  bool zero_noise = false;  // test hook: Y exactly equals its conditional mean
  std::uint64_t seed = 0;

  std::size_t covariates() const { return propensity.size() - 1; }
  void validate() const;

  double propensity_at(const Eigen::Ref<const Vector>& x) const;  // x includes the leading 1
  double mu0_at(const Eigen::Ref<const Vector>& x) const;
  double mu1_at(const Eigen::Ref<const Vector>& x) const;
  TrueNuisance truth() const;
  // Normalized contrast coefficients: the optimal linear rule.
  Vector true_regime() const;

  static DgpSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

Dataset generate(const DgpSpec& spec);

struct OracleValue {
  double value = 0.0;
  double standard_error = 0.0;
  std::size_t draws = 0;
};

// Monte Carlo value of the rule beta under the generator, drawing both
// potential outcomes per unit (shared noise). Seeded by spec.seed.
OracleValue true_value_oracle(const DgpSpec& spec, const Vector& beta, std::size_t draws);

struct StudyConfig {
  DgpSpec dgp;
  int replications = 100;
  SearchConfig search;
  EstimatorSpec estimator;
  BootstrapSettings bootstrap;  // draws = 0: estimation only
  std::vector<double> epsilons{0.5};
  std::size_t oracle_draws = 10'000'000;
  double value_level = 0.95;

  void validate() const;
  static StudyConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct EpsilonColumn {
  double epsilon = 0.0;
  std::vector<double> coverage;     // per scored coordinate
  std::vector<double> mean_length;  // per scored coordinate
  int replications = 0;
};

struct McSummary {
  std::vector<std::string> coordinates;  // scored coordinate names
  std::vector<double> true_beta;         // scored coordinates of the true rule
  std::vector<double> mean_beta_hat;
  std::vector<EpsilonColumn> columns;
  // Share of value CIs containing the oracle value, and the same with the
  // truth shifted by -2 and +2 oracle standard errors.
  double value_coverage = 0.0;
  double value_coverage_low = 0.0;
  double value_coverage_high = 0.0;
  double true_value = 0.0;
  double true_value_se = 0.0;
  int replications = 0;  // requested
  int completed = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;
  nlohmann::json settings;

  nlohmann::json to_json() const;
  // Coverage / length rows per coordinate, one column per epsilon.
  std::string table() const;
};

McSummary run_coverage_study(const StudyConfig& config);

struct RateReport {
  std::vector<std::size_t> sizes;
  std::vector<double> median_error;
  std::vector<std::vector<double>> errors;
  double slope = 0.0;

  nlohmann::json to_json() const;
};

// Median |beta_hat - beta_0| over `reps` generated datasets per size, and the
// least-squares slope of log median error on log n.
RateReport rate_diagnostic(const DgpSpec& base, const std::vector<std::size_t>& sizes, int reps,
                           const SearchConfig& search_cfg, const EstimatorSpec& estimator);

}  // namespace otr
