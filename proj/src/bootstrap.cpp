#include "otr/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "otr/aipw.hpp"
#include "otr/parallel.hpp"
#include "otr/random.hpp"

namespace otr {

namespace {

std::vector<double> to_std(const Vector& v) { return {v.begin(), v.end()}; }

nlohmann::json matrix_json(const SquareMatrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(to_std(m.row(r).transpose()));
  return rows;
}

void check_penalty_dims(const Vector& beta_hat, const SquareMatrix& h, std::size_t l) {
  const auto d = static_cast<Eigen::Index>(l);
  if (beta_hat.size() != d || h.rows() != d || h.cols() != d)
    throw DataError("bootstrap: beta_hat / Hessian dimensions do not match the covariates");
}

}  // namespace

nlohmann::json HessianEstimate::to_json() const {
  return {{"matrix", matrix_json(matrix)},
          {"raw", matrix_json(raw)},
          {"epsilon", epsilon},
          {"psd_adjusted", psd_adjusted},
          {"eigenvalue_floor", eigenvalue_floor}};
}

HessianEstimate hessian_fd(const VectorObjective& objective, const Vector& beta_hat, double epsilon,
                           double floor) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw DataError("Hessian step must be positive");
  if (!(floor > 0.0)) throw DataError("eigenvalue floor must be positive");
  const auto l = beta_hat.size();
  auto eval = [&](const Vector& b) {
    const double v = objective(b);
    if (!std::isfinite(v)) throw NumericalError("non-finite objective at a Hessian stencil point");
    return v;
  };
  SquareMatrix h(l, l);
  for (Eigen::Index k = 0; k < l; ++k) {
    for (Eigen::Index j = k; j < l; ++j) {
      const Vector ek = epsilon * Vector::Unit(l, k), ej = epsilon * Vector::Unit(l, j);
      const double s = eval(beta_hat + ek + ej) - eval(beta_hat + ek - ej) - eval(beta_hat - ek + ej) +
                       eval(beta_hat - ek - ej);
      h(k, j) = h(j, k) = -s / (4.0 * epsilon * epsilon);
    }
  }
  HessianEstimate est;
  est.raw = h;
  est.epsilon = epsilon;
  est.eigenvalue_floor = floor;
  Eigen::SelfAdjointEigenSolver<SquareMatrix> eig(h);
  Vector values = eig.eigenvalues();
  if (values.minCoeff() < floor) {
    est.psd_adjusted = true;
    values = values.cwiseMax(floor);
    SquareMatrix adjusted = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
    est.matrix = 0.5 * (adjusted + adjusted.transpose());
  } else {
    est.matrix = h;
  }
  return est;
}

HessianEstimate value_hessian(const Dataset& data, const NuisanceFit& nf, const Vector& beta_hat,
                              double epsilon, double floor) {
  const RegimeObjective objective = value_objective(data, nf);
  return hessian_fd([&](const Vector& b) { return objective(b); }, beta_hat, epsilon, floor);
}

Vector reshaped_values(const Dataset& data, const NuisanceFit& nf, const Vector& beta, const Vector& beta_hat,
                       const SquareMatrix& hessian) {
  check_penalty_dims(beta_hat, hessian, data.dimension());
  Vector v = pseudo_outcomes(data, nf, beta);
  const double mean = v.mean();
  const Vector diff = beta_hat - beta;
  const double quad = 0.5 * diff.dot(hessian * diff);
  v.array() -= mean + quad;
  return v;
}

double reshape_objective(std::size_t i, const Dataset& data, const NuisanceFit& nf, const Vector& beta,
                         const Vector& beta_hat, const SquareMatrix& hessian) {
  if (i >= data.size()) throw DataError("observation index out of range");
  return reshaped_values(data, nf, beta, beta_hat, hessian)(static_cast<Eigen::Index>(i));
}

RegimeObjective bootstrap_objective(const Dataset& data, const NuisanceFit& nf,
                                    std::span<const std::size_t> resample, const NuisanceFit* resample_nf,
                                    const Vector& beta_hat, const SquareMatrix& hessian) {
  check_penalty_dims(beta_hat, hessian, data.dimension());
  const auto n = static_cast<Eigen::Index>(data.size());
  const ArmPseudoOutcomes base = arm_pseudo_outcomes(data, nf);
  std::optional<ArmPseudoOutcomes> refit;
  if (resample_nf) {
    if (resample_nf->size() != resample.size())
      throw DataError("bootstrap: refitted nuisance does not match the resample size");
    refit = arm_pseudo_outcomes(data.subset(resample), *resample_nf);
  }
  // Every pseudo-outcome is control + contrast * d(x; beta); the decision only
  // depends on the row, so resampled contrasts pile onto their source rows.
  Vector weights = -(base.treated - base.control);
  double offset = -base.control.sum();
  for (std::size_t m = 0; m < resample.size(); ++m) {
    const auto i = static_cast<Eigen::Index>(resample[m]);
    if (i >= n) throw DataError("bootstrap: resample index out of range");
    const auto& arms = refit ? *refit : base;
    const auto r = refit ? static_cast<Eigen::Index>(m) : i;
    weights(i) += arms.treated(r) - arms.control(r);
    offset += arms.control(r);
  }
  const double scale = 1.0 / static_cast<double>(n);
  RegimeObjective objective(data.covariates(), weights * scale, offset * scale);
  objective.set_penalty(beta_hat, hessian);
  return objective;
}

void BootstrapSettings::validate() const {
  if (draws < 0) throw DataError("bootstrap draw count must be non-negative");
  if (!(level > 0.0 && level < 1.0)) throw DataError("confidence level must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw DataError("epsilon must be positive");
  if (epsilon_grid.empty()) throw DataError("epsilon grid must not be empty");
  for (double e : epsilon_grid)
    if (!(e > 0.0)) throw DataError("epsilon grid values must be positive");
  if (!(eigenvalue_floor > 0.0)) throw DataError("eigenvalue floor must be positive");
  if (max_consecutive_failures < 1) throw DataError("max_consecutive_failures must be at least 1");
}

BootstrapSettings BootstrapSettings::from_json(const nlohmann::json& j) {
  BootstrapSettings s;
  try {
    s.draws = j.value("draws", s.draws);
    s.level = j.value("level", s.level);
    s.epsilon = j.value("epsilon", s.epsilon);
    s.epsilon_grid = j.value("epsilon_grid", s.epsilon_grid);
    s.refit = j.value("refit", s.refit);
    s.seed = j.value("seed", s.seed);
    s.eigenvalue_floor = j.value("eigenvalue_floor", s.eigenvalue_floor);
    s.max_consecutive_failures = j.value("max_consecutive_failures", s.max_consecutive_failures);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid bootstrap settings: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json BootstrapSettings::to_json() const {
  return {{"draws", draws},
          {"level", level},
          {"epsilon", epsilon},
          {"epsilon_grid", epsilon_grid},
          {"refit", refit},
          {"seed", seed},
          {"eigenvalue_floor", eigenvalue_floor},
          {"max_consecutive_failures", max_consecutive_failures}};
}

std::vector<bool> BootstrapReport::significant() const {
  std::vector<bool> out(static_cast<std::size_t>(ci_lo.size()));
  for (Eigen::Index k = 0; k < ci_lo.size(); ++k) out[static_cast<std::size_t>(k)] = ci_lo(k) > 0.0 || ci_hi(k) < 0.0;
  return out;
}

nlohmann::json BootstrapReport::to_json() const {
  return {{"beta_hat", to_std(beta_hat)},
          {"ci_lo", to_std(ci_lo)},
          {"ci_hi", to_std(ci_hi)},
          {"length", to_std(length)},
          {"summed_length", summed_length()},
          {"significant", significant()},
          {"level", level},
          {"epsilon", epsilon},
          {"refit_nuisance", refit},
          {"draws", draws_requested},
          {"redraws", redraws},
          {"hessian", hessian.to_json()}};
}

double quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw DataError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw DataError("quantile probability must lie in [0, 1]");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::pair<double, double> percentile_interval(std::vector<double> values, double level) {
  if (!(level > 0.0 && level < 1.0)) throw DataError("confidence level must lie in (0, 1)");
  std::sort(values.begin(), values.end());
  const double alpha = 1.0 - level;
  return {quantile(values, alpha / 2.0), quantile(values, 1.0 - alpha / 2.0)};
}

BootstrapReport bootstrap_draws(const Dataset& data, const NuisanceFit& nf, const Vector& beta_hat,
                                const HessianEstimate& hessian, const BootstrapSettings& settings,
                                const SearchConfig& search_cfg, const EstimatorSpec& estimator,
                                const std::optional<TrueNuisance>& truth) {
  settings.validate();
  search_cfg.validate();
  if (settings.draws < 1) throw DataError("bootstrap needs at least one draw");
  check_penalty_dims(beta_hat, hessian.matrix, data.dimension());
  const std::size_t n = data.size();
  const auto l = static_cast<Eigen::Index>(data.dimension());
  const auto draws = static_cast<std::size_t>(settings.draws);

  BootstrapReport report;
  report.beta_hat = beta_hat;
  report.draws.resize(static_cast<Eigen::Index>(draws), l);
  report.level = settings.level;
  report.epsilon = hessian.epsilon;
  report.refit = settings.refit;
  report.draws_requested = settings.draws;
  report.hessian = hessian;

  std::vector<int> redraws(draws, 0);
  const std::vector<Vector> starts{beta_hat};
  parallel_for(draws, [&](std::size_t b) {
    std::vector<std::size_t> rows(n);
    std::optional<NuisanceFit> refit;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= settings.max_consecutive_failures) {
        throw NumericalError("bootstrap draw " + std::to_string(b + 1) + ": " +
                             std::to_string(attempt) + " consecutive unusable resamples");
      }
      Rng rng = make_rng(settings.seed, Stream::kBootstrapResample, b * 1024 + static_cast<std::size_t>(attempt));
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      std::size_t treated = 0;
      for (auto& r : rows) {
        r = pick(rng);
        treated += static_cast<std::size_t>(data.treatments()(static_cast<Eigen::Index>(r)));
      }
      if (!settings.refit) break;
      if (treated < 2 || n - treated < 2) {
        ++redraws[b];
        continue;
      }
      try {
        refit = fit_nuisance(data.subset(rows), estimator, truth);
        break;
      } catch (const NumericalError&) {
        ++redraws[b];
      }
    }
    const RegimeObjective objective =
        bootstrap_objective(data, nf, rows, refit ? &*refit : nullptr, beta_hat, hessian.matrix);
    SearchConfig cfg = search_cfg;
    cfg.seed = derive_seed(settings.seed, Stream::kBootstrapSearch, b);
    const SearchResult found = search(objective, cfg, starts);
    report.draws.row(static_cast<Eigen::Index>(b)) = found.beta_hat.transpose();
  });
  for (int r : redraws) report.redraws += r;

  const double scale = std::cbrt(static_cast<double>(n));
  report.centered = (report.draws.rowwise() - beta_hat.transpose()) * scale;
  report.ci_lo.resize(l);
  report.ci_hi.resize(l);
  for (Eigen::Index k = 0; k < l; ++k) {
    const Vector col = report.draws.col(k);
    const auto [lo, hi] = percentile_interval(to_std(col), settings.level);
    report.ci_lo(k) = lo;
    report.ci_hi(k) = hi;
  }
  report.length = report.ci_hi - report.ci_lo;
  return report;
}

BootstrapReport bootstrap_ci(const Dataset& data, const NuisanceFit& nf, const Vector& beta_hat,
                             const BootstrapSettings& settings, const SearchConfig& search_cfg,
                             const EstimatorSpec& estimator, const std::optional<TrueNuisance>& truth) {
  settings.validate();
  const HessianEstimate h = value_hessian(data, nf, beta_hat, settings.epsilon, settings.eigenvalue_floor);
  return bootstrap_draws(data, nf, beta_hat, h, settings, search_cfg, estimator, truth);
}

std::size_t recommend_epsilon(std::span<const double> summed_lengths) {
  const std::size_t k = summed_lengths.size();
  if (k == 0) throw DataError("epsilon grid must not be empty");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < k; ++i) {
    const double v = summed_lengths[i];
    const bool left = i == 0 || v <= summed_lengths[i - 1];
    const bool right = i + 1 == k || v <= summed_lengths[i + 1];
    if (left && right && (!best || v < summed_lengths[*best])) best = i;
  }
  // A strictly monotone sequence still has its smaller endpoint as a local minimum.
  return *best;
}

nlohmann::json SweepResult::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  return {{"reports", arr}, {"recommended_epsilon", recommended_epsilon()}};
}

SweepResult epsilon_sweep(const Dataset& data, const NuisanceFit& nf, const Vector& beta_hat,
                          const BootstrapSettings& settings, const SearchConfig& search_cfg,
                          const EstimatorSpec& estimator, const std::optional<TrueNuisance>& truth) {
  settings.validate();
  SweepResult sweep;
  std::vector<double> sums;
  for (double eps : settings.epsilon_grid) {
    BootstrapSettings s = settings;
    s.epsilon = eps;
    sweep.reports.push_back(bootstrap_ci(data, nf, beta_hat, s, search_cfg, estimator, truth));
    sums.push_back(sweep.reports.back().summed_length());
  }
  sweep.recommended = recommend_epsilon(sums);
  return sweep;
}

}  // namespace otr
