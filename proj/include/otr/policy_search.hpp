#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "otr/common.hpp"
#include "otr/dataset.hpp"
#include "otr/nuisance.hpp"
#include "otr/objective.hpp"

namespace otr {

struct SearchConfig {
  int population = 200;
  int generations = 100;
  double mutation_scale = 0.2;      // Gaussian sd per coordinate, before renormalizing
  double refine_resolution = 1e-4;  // radians; golden-section stopping width
  std::uint64_t seed = 0;
  double tolerance = 1e-10;         // minimum value gain that counts as progress
  int stall_generations = 25;       // stop the GA after this many generations without progress (0: never)
  int max_polish_sweeps = 20;

  void validate() const;
  static SearchConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct SearchResult {
  Vector beta_hat;
  double value_at_max = 0.0;
  std::size_t evaluations = 0;
  std::vector<double> trace;  // best value after each generation (index 0: initial population)
  bool flat = false;          // every evaluated candidate had the same value
  int generations_run = 0;
  int polish_sweeps = 0;
  // Width (radians) of the constant piece containing beta_hat along each
  // great circle of the final polish sweep.
  std::vector<double> plateau_extent;

  RegimeParameter regime() const { return RegimeParameter(beta_hat); }
  nlohmann::json to_json() const;
};

// Maximizes the objective over the unit sphere: a genetic algorithm on raw
// vectors (renormalized after every operator) followed by a polish of exact
// line searches along great circles through the incumbent. `starts` seed the
// initial population. Deterministic given cfg.seed.
SearchResult search(const RegimeObjective& objective, const SearchConfig& cfg,
                    std::span<const Vector> starts = {});

// Maximizes the AIPW value; value_at_max is value(data, nf, beta_hat).
SearchResult search(const Dataset& data, const NuisanceFit& nf, const SearchConfig& cfg);

struct LineSearchResult {
  Vector beta;          // best point found on the circle (unit norm)
  double value = 0.0;   // objective(beta), full evaluation
  double angle = 0.0;   // position on the circle, t in [-pi, pi)
  double incumbent_extent = 0.0;  // width of the piece containing t = 0
  std::size_t pieces = 0;
};

// Exact maximization along the great circle cos(t) base + sin(t) direction.
// The step part is constant between the O(n) sign changes, which are found in
// closed form; any quadratic penalty is maximized inside each piece by
// golden-section search to `resolution`. `direction` must be orthogonal to
// `base`; both unit.
LineSearchResult great_circle_search(const RegimeObjective& objective, const Vector& base,
                                     const Vector& direction, double resolution);

// Uniform angular grid with step pi / divisions (l <= 3). Points are visited in
// lexicographic angle order and the first maximum is returned. Doubling
// `divisions` refines the grid and keeps every earlier point.
SearchResult exhaustive_grid(const RegimeObjective& objective, long divisions);
SearchResult exhaustive_grid(const Dataset& data, const NuisanceFit& nf, long divisions);

// Point of the grid above for angle indices (polar, azimuth). Exposed for tests.
Vector grid_point(std::size_t dimension, long divisions, long polar, long azimuth);

}  // namespace otr
