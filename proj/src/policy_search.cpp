#include "otr/policy_search.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "otr/aipw.hpp"
#include "otr/parallel.hpp"
#include "otr/random.hpp"

namespace otr {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kGoldenRatio = 0.61803398874989484820;

Vector random_unit(Rng& rng, std::size_t l) {
  std::normal_distribution<double> normal;
  Vector v(static_cast<Eigen::Index>(l));
  do {
    for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = normal(rng);
  } while (v.norm() < 1e-12);
  return v / v.norm();
}

Vector normalize_or_random(Vector v, Rng& rng) {
  const double norm = v.norm();
  if (!(norm > 1e-12) || !std::isfinite(norm)) return random_unit(rng, static_cast<std::size_t>(v.size()));
  return v / norm;
}

// [-pi, pi)
double wrap_angle(double t) {
  double w = std::remainder(t, 2.0 * kPi);
  if (w >= kPi) w -= 2.0 * kPi;
  if (w < -kPi) w += 2.0 * kPi;
  return w;
}

std::size_t first_argmax(const std::vector<double>& values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

// Maximizes the smooth penalty g(t) over (lo, hi); returns (t, g).
template <typename G>
std::pair<double, double> maximize_on_arc(const G& g, double lo, double hi, double resolution) {
  const double width = hi - lo;
  const int samples = std::max(3, static_cast<int>(std::ceil(width / 0.1)));
  const double cell = width / samples;
  double best_t = lo + 0.5 * cell;
  double best_g = g(best_t);
  for (int s = 1; s < samples; ++s) {
    const double t = lo + (s + 0.5) * cell;
    const double v = g(t);
    if (v > best_g) {
      best_g = v;
      best_t = t;
    }
  }
  double a = std::max(lo, best_t - cell), b = std::min(hi, best_t + cell);
  // Keep the golden-section probes strictly inside the piece.
  const double guard = std::min(1e-12, 0.25 * width);
  a = std::max(a, lo + guard);
  b = std::min(b, hi - guard);
  if (!(b > a)) return {best_t, best_g};
  double c = b - kGoldenRatio * (b - a), d = a + kGoldenRatio * (b - a);
  double gc = g(c), gd = g(d);
  while (b - a > resolution) {
    if (gc >= gd) {
      b = d;
      d = c;
      gd = gc;
      c = b - kGoldenRatio * (b - a);
      gc = g(c);
    } else {
      a = c;
      c = d;
      gc = gd;
      d = a + kGoldenRatio * (b - a);
      gd = g(d);
    }
  }
  const double t = 0.5 * (a + b);
  const double gt = g(t);
  if (gt > best_g) return {t, gt};
  return {best_t, best_g};
}

struct Event {
  double t;
  double delta;
  Eigen::Index row;
};

// Great-circle polish around `start`; updates result fields.
void polish(const RegimeObjective& objective, const SearchConfig& cfg, Vector& current, double& current_value,
            SearchResult& result) {
  const auto l = current.size();
  if (l < 2) return;
  Rng rng = make_rng(cfg.seed, Stream::kPolish);
  for (int sweep = 1; sweep <= cfg.max_polish_sweeps; ++sweep) {
    result.polish_sweeps = sweep;
    bool improved = false;
    std::vector<double> extents;
    // Coordinate axes followed by as many random directions, each projected
    // onto the tangent space at the current incumbent.
    for (Eigen::Index k = 0; k < 2 * l; ++k) {
      Vector seed = k < l ? Vector(Vector::Unit(l, k)) : random_unit(rng, static_cast<std::size_t>(l));
      Vector dir = seed - seed.dot(current) * current;
      if (dir.norm() < 1e-8) continue;
      dir /= dir.norm();
      const auto line = great_circle_search(objective, current, dir, cfg.refine_resolution);
      result.evaluations += line.pieces;
      extents.push_back(line.incumbent_extent);
      if (line.value > current_value + cfg.tolerance) {
        current = line.beta;
        current_value = line.value;
        improved = true;
      }
    }
    result.plateau_extent = std::move(extents);
    if (!improved) break;
  }
}

}  // namespace

void SearchConfig::validate() const {
  if (population < 2) throw DataError("search population must be at least 2");
  if (generations < 1) throw DataError("search generations must be at least 1");
  if (!(refine_resolution > 0.0)) throw DataError("refinement resolution must be positive");
  if (!(mutation_scale > 0.0)) throw DataError("mutation scale must be positive");
  if (!(tolerance >= 0.0)) throw DataError("search tolerance must be non-negative");
  if (stall_generations < 0 || max_polish_sweeps < 0) throw DataError("invalid search iteration limits");
}

SearchConfig SearchConfig::from_json(const nlohmann::json& j) {
  SearchConfig c;
  try {
    c.population = j.value("population", c.population);
    c.generations = j.value("generations", c.generations);
    c.mutation_scale = j.value("mutation_scale", c.mutation_scale);
    c.refine_resolution = j.value("refine_resolution", c.refine_resolution);
    c.seed = j.value("seed", c.seed);
    c.tolerance = j.value("tolerance", c.tolerance);
    c.stall_generations = j.value("stall_generations", c.stall_generations);
    c.max_polish_sweeps = j.value("max_polish_sweeps", c.max_polish_sweeps);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid search config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json SearchConfig::to_json() const {
  return {{"population", population},
          {"generations", generations},
          {"mutation_scale", mutation_scale},
          {"refine_resolution", refine_resolution},
          {"seed", seed},
          {"tolerance", tolerance},
          {"stall_generations", stall_generations},
          {"max_polish_sweeps", max_polish_sweeps}};
}

nlohmann::json SearchResult::to_json() const {
  return {{"beta_hat", std::vector<double>(beta_hat.begin(), beta_hat.end())},
          {"value_at_max", value_at_max},
          {"evaluations", evaluations},
          {"flat_objective", flat},
          {"generations_run", generations_run},
          {"polish_sweeps", polish_sweeps},
          {"plateau_extent", plateau_extent}};
}

LineSearchResult great_circle_search(const RegimeObjective& objective, const Vector& base,
                                     const Vector& direction, double resolution) {
  const Vector a = objective.rows() * base;
  const Vector b = objective.rows() * direction;
  const Vector& w = objective.weights();

  // x_i^T beta(t) = r_i cos(t - phi_i): positive on the open arc (enter, exit).
  std::vector<Event> events;
  events.reserve(2 * static_cast<std::size_t>(a.size()));
  double level = objective.offset();
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) == 0.0 && b(i) == 0.0) continue;
    const double phi = std::atan2(b(i), a(i));
    const double enter = wrap_angle(phi - 0.5 * kPi);
    const double exit = wrap_angle(phi + 0.5 * kPi);
    if (exit < enter && exit > -kPi) level += w(i);
    events.push_back({enter, w(i), i});
    events.push_back({exit, -w(i), i});
  }
  std::sort(events.begin(), events.end(), [](const Event& x, const Event& y) {
    return x.t < y.t || (x.t == y.t && x.row < y.row);
  });

  struct Piece {
    double lo, hi, level;
  };
  std::vector<Piece> pieces;
  pieces.reserve(events.size() + 1);
  double prev = -kPi;
  for (std::size_t k = 0; k < events.size();) {
    const double t = events[k].t;
    if (t > prev) pieces.push_back({prev, t, level});
    for (; k < events.size() && events[k].t == t; ++k) level += events[k].delta;
    prev = std::max(prev, t);
  }
  if (kPi > prev) pieces.push_back({prev, kPi, level});

  auto point = [&](double t) -> Vector { return std::cos(t) * base + std::sin(t) * direction; };

  LineSearchResult out;
  out.pieces = pieces.size();
  for (const auto& p : pieces) {
    if (p.lo <= 0.0 && 0.0 < p.hi) out.incumbent_extent = p.hi - p.lo;
  }
  // The piece straddling the -pi/pi seam is one arc split in two.
  if (pieces.size() > 1 && (pieces.front().lo == -kPi && pieces.back().hi == kPi) &&
      (out.incumbent_extent == pieces.front().hi - pieces.front().lo ||
       out.incumbent_extent == pieces.back().hi - pieces.back().lo) &&
      (pieces.front().lo <= 0.0 && 0.0 < pieces.front().hi)) {
    out.incumbent_extent += pieces.back().hi - pieces.back().lo;
  }

  double best_total = -std::numeric_limits<double>::infinity();
  double best_t = 0.0;
  if (!objective.has_penalty()) {
    for (const auto& p : pieces) {
      if (p.level > best_total) {
        best_total = p.level;
        best_t = 0.5 * (p.lo + p.hi);
      }
    }
  } else {
    std::vector<std::size_t> order(pieces.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return pieces[x].level > pieces[y].level; });
    // On the circle the penalty is a trigonometric quadratic in t; expand it
    // once so each probe is O(1).
    const Vector& c = objective.penalty_center();
    const SquareMatrix& h = objective.penalty_hessian();
    const Vector hc = h * c, hb = h * base, hd = h * direction;
    const double kc = c.dot(hc), kbb = base.dot(hb), kdd = direction.dot(hd);
    const double kbd = 0.5 * (base.dot(hd) + direction.dot(hb));
    const double kcb = 0.5 * (c.dot(hb) + base.dot(hc)), kcd = 0.5 * (c.dot(hd) + direction.dot(hc));
    auto g = [&](double t) {
      const double co = std::cos(t), si = std::sin(t);
      return -0.5 * (kc + co * co * kbb + si * si * kdd + 2.0 * si * co * kbd - 2.0 * co * kcb - 2.0 * si * kcd);
    };
    // Max of the penalty over this circle, padded for the golden-section error.
    const double circle_max = maximize_on_arc(g, -kPi, kPi, resolution).second;
    const double bound = std::min(objective.penalty_upper_bound(), circle_max + 1e-9 * (1.0 + std::abs(circle_max)));
    for (auto idx : order) {
      const auto& p = pieces[idx];
      if (p.level + bound <= best_total) break;
      const auto [t, gt] = maximize_on_arc(g, p.lo, p.hi, resolution);
      if (p.level + gt > best_total) {
        best_total = p.level + gt;
        best_t = t;
      }
    }
  }
  out.angle = best_t;
  out.beta = point(best_t);
  out.beta /= out.beta.norm();
  out.value = objective(out.beta);
  return out;
}

SearchResult search(const RegimeObjective& objective, const SearchConfig& cfg, std::span<const Vector> starts) {
  cfg.validate();
  const std::size_t l = objective.dimension();
  if (l == 0) throw DataError("search needs at least one covariate column");
  for (const auto& s : starts) {
    if (static_cast<std::size_t>(s.size()) != l) throw DataError("search start has the wrong dimension");
  }

  SearchResult result;
  if (l == 1) {
    const Vector plus = Vector::Constant(1, 1.0), minus = Vector::Constant(1, -1.0);
    const double vp = objective(plus), vm = objective(minus);
    result.beta_hat = vm > vp ? minus : plus;
    result.value_at_max = std::max(vp, vm);
    result.evaluations = 2;
    result.flat = vp == vm;
    result.trace = {result.value_at_max};
    return result;
  }

  const auto pop_size = static_cast<std::size_t>(cfg.population);
  std::vector<Vector> population(pop_size);
  std::vector<double> fitness(pop_size);
  {
    Rng rng = make_rng(cfg.seed, Stream::kGeneration, 0);
    for (std::size_t i = 0; i < pop_size; ++i)
      population[i] = i < starts.size() ? normalize_or_random(starts[i], rng) : random_unit(rng, l);
  }
  auto evaluate = [&](std::size_t from) {
    parallel_for(pop_size - from, [&](std::size_t k) { fitness[from + k] = objective(population[from + k]); });
    result.evaluations += pop_size - from;
  };
  evaluate(0);

  std::size_t best_index = first_argmax(fitness);
  Vector best = population[best_index];
  double best_value = fitness[best_index];
  double lowest = *std::min_element(fitness.begin(), fitness.end());
  double highest = best_value;
  result.trace.push_back(best_value);

  const std::size_t elite = std::max<std::size_t>(1, pop_size / 10);
  std::vector<std::size_t> order(pop_size);
  std::vector<Vector> next(pop_size);
  int stall = 0;
  for (int gen = 1; gen <= cfg.generations; ++gen) {
    Rng rng = make_rng(cfg.seed, Stream::kGeneration, static_cast<std::uint64_t>(gen));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, pop_size - 1);
    std::uniform_int_distribution<std::size_t> pick_elite(0, elite - 1);
    std::normal_distribution<double> normal;

    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return fitness[x] > fitness[y]; });
    std::vector<double> next_fitness(pop_size);
    for (std::size_t k = 0; k < elite; ++k) {
      next[k] = population[order[k]];
      next_fitness[k] = fitness[order[k]];
    }
    auto tournament = [&]() -> const Vector& {
      const std::size_t x = pick(rng), y = pick(rng);
      return fitness[y] > fitness[x] ? population[y] : population[x];
    };
    for (std::size_t k = elite; k < pop_size; ++k) {
      const double u = unif(rng);
      Vector child;
      if (u < 0.05) {
        child = random_unit(rng, l);
      } else if (u < 0.30) {
        child = population[order[pick_elite(rng)]];
        for (Eigen::Index c = 0; c < child.size(); ++c) child(c) += 0.1 * cfg.mutation_scale * normal(rng);
      } else {
        const Vector& p1 = tournament();
        const Vector& p2 = tournament();
        const double mix = unif(rng);
        child = mix * p1 + (1.0 - mix) * p2;
        for (Eigen::Index c = 0; c < child.size(); ++c) child(c) += cfg.mutation_scale * normal(rng);
      }
      next[k] = normalize_or_random(std::move(child), rng);
    }
    std::swap(population, next);
    fitness = std::move(next_fitness);
    evaluate(elite);

    const double previous = best_value;
    for (std::size_t k = elite; k < pop_size; ++k) {
      lowest = std::min(lowest, fitness[k]);
      highest = std::max(highest, fitness[k]);
      if (fitness[k] > best_value) {
        best_value = fitness[k];
        best = population[k];
      }
    }
    result.trace.push_back(best_value);
    result.generations_run = gen;
    stall = best_value > previous + cfg.tolerance ? 0 : stall + 1;
    if (cfg.stall_generations > 0 && stall >= cfg.stall_generations) break;
  }

  polish(objective, cfg, best, best_value, result);
  result.flat = lowest == highest && best_value == highest;
  result.beta_hat = best;
  result.value_at_max = best_value;
  return result;
}

SearchResult search(const Dataset& data, const NuisanceFit& nf, const SearchConfig& cfg) {
  auto result = search(value_objective(data, nf), cfg);
  result.value_at_max = value_at(data, nf, result.beta_hat);
  return result;
}

Vector grid_point(std::size_t dimension, long divisions, long polar, long azimuth) {
  const double step = kPi / static_cast<double>(divisions);
  switch (dimension) {
    case 1:
      return Vector::Constant(1, polar == 0 ? 1.0 : -1.0);
    case 2: {
      const double t = -kPi + static_cast<double>(azimuth) * step;
      return Vector{{std::cos(t), std::sin(t)}};
    }
    case 3: {
      const double theta = static_cast<double>(polar) * step;
      const double phi = -kPi + static_cast<double>(azimuth) * step;
      return Vector{{std::cos(theta), std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi)}};
    }
    default:
      throw DataError("exhaustive grid supports dimension 1, 2 or 3");
  }
}

SearchResult exhaustive_grid(const RegimeObjective& objective, long divisions) {
  const std::size_t l = objective.dimension();
  if (l < 1 || l > 3) throw DataError("exhaustive grid supports dimension 1, 2 or 3");
  if (divisions < 1) throw DataError("grid divisions must be positive");
  const long polar_count = l == 1 ? 2 : (l == 2 ? 1 : divisions + 1);
  const long azimuth_count = l == 1 ? 1 : 2 * divisions;
  if (static_cast<double>(polar_count) * static_cast<double>(azimuth_count) > 1e7) {
    throw DataError("exhaustive grid would exceed 1e7 points");
  }
  std::vector<double> values(static_cast<std::size_t>(polar_count * azimuth_count));
  parallel_for(values.size(), [&](std::size_t idx) {
    const long j = static_cast<long>(idx) / azimuth_count, k = static_cast<long>(idx) % azimuth_count;
    values[idx] = objective(grid_point(l, divisions, j, k));
  });
  const std::size_t best = first_argmax(values);
  SearchResult result;
  result.beta_hat = grid_point(l, divisions, static_cast<long>(best) / azimuth_count,
                               static_cast<long>(best) % azimuth_count);
  result.beta_hat /= result.beta_hat.norm();
  result.value_at_max = values[best];
  result.evaluations = values.size();
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  result.flat = *mn == *mx;
  return result;
}

SearchResult exhaustive_grid(const Dataset& data, const NuisanceFit& nf, long divisions) {
  auto result = exhaustive_grid(value_objective(data, nf), divisions);
  result.value_at_max = value_at(data, nf, result.beta_hat);
  return result;
}

}  // namespace otr
