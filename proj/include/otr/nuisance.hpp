#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "otr/common.hpp"
#include "otr/dataset.hpp"

namespace otr {

enum class NuisanceMethod {
  kLogistic,  // logistic propensity, linear outcome means (per arm)
  kKernel,    // additive local-linear smoothing (local scoring for the propensity)
  kOracle,    // known generating functions
};

std::string to_string(NuisanceMethod method);
NuisanceMethod parse_nuisance_method(const std::string& name);

struct EstimatorSpec {
  NuisanceMethod method = NuisanceMethod::kKernel;
  double bandwidth = 0.0;  // <= 0: rule of thumb per covariate
  double irls_tolerance = 1e-8;
  int irls_max_iterations = 100;
  double ridge = 1e-8;
  double clip_lo = 0.01;
  double clip_hi = 0.99;
  int backfit_max_cycles = 20;
  double backfit_tolerance = 1e-6;
  int local_scoring_max_iterations = 30;
  int cross_fit_folds = 0;  // < 2: full-sample fitting
  std::uint64_t cross_fit_seed = 0;

  // Throws DataError when a field is out of range.
  void validate() const;

  static EstimatorSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

using Predictor = std::function<double(const Eigen::Ref<const Vector>&)>;

// Generating functions for the oracle method; e is the unclipped propensity.
struct TrueNuisance {
  Predictor e;
  Predictor mu0;
  Predictor mu1;
};

struct NuisanceDiagnostics {
  std::string method;
  int propensity_iterations = 0;
  bool propensity_converged = true;
  double propensity_gradient_norm = 0.0;
  std::vector<int> outcome_cycles;  // backfitting cycles for arm 0, arm 1
  std::size_t clipped_low = 0;
  std::size_t clipped_high = 0;
  std::size_t smoother_fallbacks = 0;
  std::vector<double> propensity_bandwidths;
  int cross_fit_folds = 0;

  nlohmann::json to_json() const;
};

// Fitted nuisance values at every observation plus predictors for new points.
// The propensity predictor returns clipped values.
struct NuisanceFit {
  Vector e_hat;
  Vector mu0_hat;
  Vector mu1_hat;
  Predictor propensity;
  Predictor mu0;
  Predictor mu1;
  NuisanceDiagnostics diagnostics;

  std::size_t size() const { return static_cast<std::size_t>(e_hat.size()); }
};

struct PropensityFit {
  Vector fitted;  // clipped
  Predictor predictor;
  int iterations = 0;
  bool converged = true;
  double gradient_norm = 0.0;
  std::size_t clipped_low = 0;
  std::size_t clipped_high = 0;
  std::size_t fallbacks = 0;
  std::vector<double> bandwidths;
};

struct OutcomeFit {
  Vector mu0_hat;
  Vector mu1_hat;
  Predictor mu0;
  Predictor mu1;
  std::vector<int> cycles;
  std::size_t fallbacks = 0;
};

PropensityFit fit_propensity(const Dataset& data, const EstimatorSpec& spec);
OutcomeFit fit_outcome_means(const Dataset& data, const EstimatorSpec& spec);
NuisanceFit oracle_nuisance(const Dataset& data, const TrueNuisance& truth,
                            const EstimatorSpec& spec = {});

// Dispatches on spec.method; `truth` is required for the oracle method.
// With spec.cross_fit_folds >= 2 the fitted values of each fold come from
// models trained on the remaining folds.
NuisanceFit fit_nuisance(const Dataset& data, const EstimatorSpec& spec,
                         const std::optional<TrueNuisance>& truth = std::nullopt);

}  // namespace otr
