#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "otr/common.hpp"
#include "otr/dataset.hpp"
#include "otr/nuisance.hpp"
#include "otr/objective.hpp"
#include "otr/policy_search.hpp"

namespace otr {

struct HessianEstimate {
  SquareMatrix matrix;  // symmetrized, eigenvalues floored
  SquareMatrix raw;     // symmetrized stencil output before the floor
  double epsilon = 0.0;
  bool psd_adjusted = false;
  double eigenvalue_floor = 1e-6;

  nlohmann::json to_json() const;
};

using VectorObjective = std::function<double(const Vector&)>;

// Four-point second differences of -objective at beta_hat with step epsilon,
// evaluated at the displaced raw vectors (off the sphere). Eigenvalues below
// `floor` are raised to it.
HessianEstimate hessian_fd(const VectorObjective& objective, const Vector& beta_hat, double epsilon,
                           double floor = 1e-6);

// Estimate for the AIPW value of (data, nf).
HessianEstimate value_hessian(const Dataset& data, const NuisanceFit& nf, const Vector& beta_hat,
                              double epsilon, double floor = 1e-6);

// v_i(beta) - V_n(beta) - 1/2 (beta_hat - beta)^T H (beta_hat - beta), with V_n
// taken over the whole of `data`.
double reshape_objective(std::size_t i, const Dataset& data, const NuisanceFit& nf, const Vector& beta,
                         const Vector& beta_hat, const SquareMatrix& hessian);
Vector reshaped_values(const Dataset& data, const NuisanceFit& nf, const Vector& beta, const Vector& beta_hat,
                       const SquareMatrix& hessian);

// Mean reshaped objective over a resample (indices into `data`), as a
// RegimeObjective over the rows of `data`. `resample_nf` holds nuisance values
// fitted on the resample (one per resample entry); null reuses `nf`.
RegimeObjective bootstrap_objective(const Dataset& data, const NuisanceFit& nf,
                                    std::span<const std::size_t> resample, const NuisanceFit* resample_nf,
                                    const Vector& beta_hat, const SquareMatrix& hessian);

struct BootstrapSettings {
  int draws = 400;
  double level = 0.95;
  double epsilon = 0.5;
  std::vector<double> epsilon_grid{0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9};
  bool refit = false;
  std::uint64_t seed = 0;
  double eigenvalue_floor = 1e-6;
  int max_consecutive_failures = 10;

  void validate() const;
  static BootstrapSettings from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct BootstrapReport {
  Vector beta_hat;
  Matrix draws;     // B x l, unit rows
  Matrix centered;  // n^{1/3} (draw - beta_hat)
  Vector ci_lo;
  Vector ci_hi;
  Vector length;
  double level = 0.95;
  double epsilon = 0.0;
  bool refit = false;
  int draws_requested = 0;
  int redraws = 0;  // resamples rejected and redone
  HessianEstimate hessian;

  double summed_length() const { return length.sum(); }
  // CI excludes 0, per coordinate.
  std::vector<bool> significant() const;
  nlohmann::json to_json() const;
};

// Linear interpolation between order statistics (R type 7). `sorted` must be
// ascending and non-empty.
double quantile(std::span<const double> sorted, double p);
std::pair<double, double> percentile_interval(std::vector<double> values, double level);

// Resampling loop with a given Hessian. Each draw maximizes the reshaped
// objective with `search_cfg` (seeded per draw; beta_hat joins the initial
// population). With settings.refit the nuisance is refitted per resample with
// `estimator` (and `truth` for the oracle method).
BootstrapReport bootstrap_draws(const Dataset& data, const NuisanceFit& nf, const Vector& beta_hat,
                                const HessianEstimate& hessian, const BootstrapSettings& settings,
                                const SearchConfig& search_cfg, const EstimatorSpec& estimator,
                                const std::optional<TrueNuisance>& truth = std::nullopt);

// value_hessian at settings.epsilon followed by bootstrap_draws.
BootstrapReport bootstrap_ci(const Dataset& data, const NuisanceFit& nf, const Vector& beta_hat,
                             const BootstrapSettings& settings, const SearchConfig& search_cfg,
                             const EstimatorSpec& estimator,
                             const std::optional<TrueNuisance>& truth = std::nullopt);

// Index of the recommended step: the local minimum of the summed lengths with
// the smallest total (the smaller step on ties). Endpoints count as local
// minima when smaller than their single neighbour.
std::size_t recommend_epsilon(std::span<const double> summed_lengths);

struct SweepResult {
  std::vector<BootstrapReport> reports;
  std::size_t recommended = 0;
  double recommended_epsilon() const { return reports.at(recommended).epsilon; }
  nlohmann::json to_json() const;
};

// bootstrap_ci for every step in settings.epsilon_grid (same seed for each).
SweepResult epsilon_sweep(const Dataset& data, const NuisanceFit& nf, const Vector& beta_hat,
                          const BootstrapSettings& settings, const SearchConfig& search_cfg,
                          const EstimatorSpec& estimator,
                          const std::optional<TrueNuisance>& truth = std::nullopt);

}  // namespace otr
