#include "otr/nuisance.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "otr/logistic.hpp"
#include "otr/random.hpp"
#include "otr/smoother.hpp"

namespace otr {

namespace {

double clip(double p, double lo, double hi) { return std::min(hi, std::max(lo, p)); }

// Rows of `data` in arm `arm`.
std::vector<std::size_t> arm_rows(const Dataset& data, int arm) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.treatments()(static_cast<Eigen::Index>(i)) == arm) rows.push_back(i);
  return rows;
}

void require_both_arms(const Dataset& data, std::size_t minimum) {
  const std::size_t treated = data.treated_count();
  const std::size_t control = data.size() - treated;
  if (treated < minimum || control < minimum) {
    throw DataError("nuisance fitting needs at least " + std::to_string(minimum) +
                    " observations in each arm (treated " + std::to_string(treated) + ", control " +
                    std::to_string(control) + ")");
  }
}

AdditiveModel::Options additive_options(const EstimatorSpec& spec) {
  return {spec.backfit_max_cycles, spec.backfit_tolerance, spec.bandwidth};
}

// Fits one arm's outcome mean and returns a predictor for arbitrary rows.
Predictor fit_arm(const Dataset& data, int arm, const EstimatorSpec& spec, int* cycles,
                  std::size_t* fallbacks) {
  const auto rows = arm_rows(data, arm);
  const auto m = static_cast<Eigen::Index>(rows.size());
  Matrix x(m, data.covariates().cols());
  Vector y(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    x.row(r) = data.row(rows[r]);
    y(r) = data.outcomes()(static_cast<Eigen::Index>(rows[r]));
  }
  if (spec.method == NuisanceMethod::kLogistic) {
    *cycles = 0;
    Vector coef = fit_least_squares(x, y, spec.ridge);
    return [coef = std::move(coef)](const Eigen::Ref<const Vector>& row) { return row.dot(coef); };
  }
  AdditiveModel::Diagnostics diag;
  auto model = std::make_shared<const AdditiveModel>(
      AdditiveModel::fit(x, y, Vector::Ones(m), additive_options(spec), &diag));
  *cycles = diag.cycles;
  *fallbacks += diag.fallbacks;
  return [model](const Eigen::Ref<const Vector>& row) { return model->predict(row); };
}

NuisanceFit assemble(const Dataset& data, PropensityFit prop, OutcomeFit out, NuisanceMethod method) {
  NuisanceFit nf;
  nf.e_hat = std::move(prop.fitted);
  nf.mu0_hat = std::move(out.mu0_hat);
  nf.mu1_hat = std::move(out.mu1_hat);
  nf.propensity = std::move(prop.predictor);
  nf.mu0 = std::move(out.mu0);
  nf.mu1 = std::move(out.mu1);
  auto& d = nf.diagnostics;
  d.method = to_string(method);
  d.propensity_iterations = prop.iterations;
  d.propensity_converged = prop.converged;
  d.propensity_gradient_norm = prop.gradient_norm;
  d.outcome_cycles = std::move(out.cycles);
  d.clipped_low = prop.clipped_low;
  d.clipped_high = prop.clipped_high;
  d.smoother_fallbacks = prop.fallbacks + out.fallbacks;
  d.propensity_bandwidths = std::move(prop.bandwidths);
  if (!nf.mu0_hat.allFinite() || !nf.mu1_hat.allFinite() || !nf.e_hat.allFinite()) {
    throw NumericalError("nuisance fit produced non-finite values");
  }
  (void)data;
  return nf;
}

NuisanceFit fit_full_sample(const Dataset& data, const EstimatorSpec& spec,
                            const std::optional<TrueNuisance>& truth) {
  if (spec.method == NuisanceMethod::kOracle) {
    if (!truth) throw DataError("oracle nuisance requested but no generating functions are available");
    return oracle_nuisance(data, *truth, spec);
  }
  return assemble(data, fit_propensity(data, spec), fit_outcome_means(data, spec), spec.method);
}

}  // namespace

std::string to_string(NuisanceMethod method) {
  switch (method) {
    case NuisanceMethod::kLogistic: return "logistic";
    case NuisanceMethod::kKernel: return "kernel";
    case NuisanceMethod::kOracle: return "oracle";
  }
  return "unknown";
}

NuisanceMethod parse_nuisance_method(const std::string& name) {
  if (name == "logistic" || name == "parametric") return NuisanceMethod::kLogistic;
  if (name == "kernel" || name == "local-linear-kernel") return NuisanceMethod::kKernel;
  if (name == "oracle") return NuisanceMethod::kOracle;
  throw DataError("unknown nuisance method '" + name + "' (expected logistic, kernel or oracle)");
}

void EstimatorSpec::validate() const {
  if (!(clip_lo > 0.0 && clip_lo < clip_hi && clip_hi < 1.0)) {
    throw DataError("propensity clipping bounds must satisfy 0 < clip_lo < clip_hi < 1");
  }
  if (bandwidth < 0.0 || !std::isfinite(bandwidth)) {
    throw DataError("bandwidth must be positive (or 0 for the rule of thumb)");
  }
  if (irls_max_iterations < 1 || !(irls_tolerance > 0.0)) throw DataError("invalid IRLS settings");
  if (backfit_max_cycles < 1 || local_scoring_max_iterations < 1) {
    throw DataError("backfitting and local scoring need at least one iteration");
  }
  if (cross_fit_folds < 0) throw DataError("cross_fit_folds must be non-negative");
}

EstimatorSpec EstimatorSpec::from_json(const nlohmann::json& j) {
  EstimatorSpec s;
  try {
    if (j.contains("method")) s.method = parse_nuisance_method(j.at("method").get<std::string>());
    s.bandwidth = j.value("bandwidth", s.bandwidth);
    s.irls_tolerance = j.value("irls_tolerance", s.irls_tolerance);
    s.irls_max_iterations = j.value("irls_max_iterations", s.irls_max_iterations);
    s.ridge = j.value("ridge", s.ridge);
    if (j.contains("clip")) {
      const auto c = j.at("clip").get<std::vector<double>>();
      if (c.size() != 2) throw DataError("clip must be a pair [lo, hi]");
      s.clip_lo = c[0];
      s.clip_hi = c[1];
    }
    s.backfit_max_cycles = j.value("backfit_max_cycles", s.backfit_max_cycles);
    s.backfit_tolerance = j.value("backfit_tolerance", s.backfit_tolerance);
    s.local_scoring_max_iterations = j.value("local_scoring_max_iterations", s.local_scoring_max_iterations);
    s.cross_fit_folds = j.value("cross_fit_folds", s.cross_fit_folds);
    s.cross_fit_seed = j.value("cross_fit_seed", s.cross_fit_seed);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid nuisance config: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json EstimatorSpec::to_json() const {
  return {{"method", to_string(method)},
          {"bandwidth", bandwidth},
          {"irls_tolerance", irls_tolerance},
          {"irls_max_iterations", irls_max_iterations},
          {"ridge", ridge},
          {"clip", {clip_lo, clip_hi}},
          {"backfit_max_cycles", backfit_max_cycles},
          {"backfit_tolerance", backfit_tolerance},
          {"local_scoring_max_iterations", local_scoring_max_iterations},
          {"cross_fit_folds", cross_fit_folds},
          {"cross_fit_seed", cross_fit_seed}};
}

nlohmann::json NuisanceDiagnostics::to_json() const {
  return {{"method", method},
          {"propensity_iterations", propensity_iterations},
          {"propensity_converged", propensity_converged},
          {"propensity_gradient_norm", propensity_gradient_norm},
          {"outcome_cycles", outcome_cycles},
          {"clipped_low", clipped_low},
          {"clipped_high", clipped_high},
          {"smoother_fallbacks", smoother_fallbacks},
          {"propensity_bandwidths", propensity_bandwidths},
          {"cross_fit_folds", cross_fit_folds}};
}

PropensityFit fit_propensity(const Dataset& data, const EstimatorSpec& spec) {
  spec.validate();
  require_both_arms(data, 1);
  const auto n = static_cast<Eigen::Index>(data.size());
  const Vector a = data.treatments().cast<double>();
  const double lo = spec.clip_lo, hi = spec.clip_hi;

  PropensityFit fit;
  Vector raw(n);
  if (spec.method == NuisanceMethod::kLogistic) {
    const auto lf = fit_logistic(data.covariates(), a,
                                 {spec.irls_tolerance, spec.irls_max_iterations, spec.ridge});
    fit.iterations = lf.iterations;
    fit.gradient_norm = lf.gradient_norm;
    raw = (data.covariates() * lf.coefficients).unaryExpr([](double e) { return expit(e); });
    fit.predictor = [coef = lf.coefficients, lo, hi](const Eigen::Ref<const Vector>& row) {
      return clip(expit(row.dot(coef)), lo, hi);
    };
  } else if (spec.method == NuisanceMethod::kKernel) {
    // Local scoring: IRLS outer loop around a weighted additive backfit.
    const double abar = a.mean();
    Vector eta = Vector::Constant(n, logit(abar));
    Vector p(n), w(n), z(n);
    auto model = std::make_shared<AdditiveModel>();
    fit.converged = false;
    for (int it = 1; it <= spec.local_scoring_max_iterations; ++it) {
      for (Eigen::Index i = 0; i < n; ++i) {
        p(i) = expit(std::clamp(eta(i), -30.0, 30.0));
        w(i) = std::max(p(i) * (1.0 - p(i)), 1e-10);
        z(i) = eta(i) + (a(i) - p(i)) / w(i);
      }
      AdditiveModel::Diagnostics diag;
      *model = AdditiveModel::fit(data.covariates(), z, w, additive_options(spec), &diag);
      fit.fallbacks = diag.fallbacks;
      fit.bandwidths = diag.bandwidths;
      const double change = (model->fitted() - eta).cwiseAbs().maxCoeff();
      eta = model->fitted();
      fit.iterations = it;
      if (change < spec.backfit_tolerance) {
        fit.converged = true;
        break;
      }
    }
    for (Eigen::Index i = 0; i < n; ++i) raw(i) = expit(eta(i));
    fit.gradient_norm = (data.covariates().transpose() * (a - raw)).cwiseAbs().maxCoeff();
    std::shared_ptr<const AdditiveModel> frozen = model;
    fit.predictor = [frozen, lo, hi](const Eigen::Ref<const Vector>& row) {
      return clip(expit(frozen->predict(row)), lo, hi);
    };
  } else {
    throw DataError("fit_propensity: the oracle method has no fitting step; use oracle_nuisance");
  }

  fit.fitted.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (raw(i) < lo) ++fit.clipped_low;
    if (raw(i) > hi) ++fit.clipped_high;
    fit.fitted(i) = clip(raw(i), lo, hi);
  }
  return fit;
}

OutcomeFit fit_outcome_means(const Dataset& data, const EstimatorSpec& spec) {
  spec.validate();
  if (spec.method == NuisanceMethod::kOracle) {
    throw DataError("fit_outcome_means: the oracle method has no fitting step; use oracle_nuisance");
  }
  require_both_arms(data, 2);
  OutcomeFit fit;
  fit.cycles.assign(2, 0);
  fit.mu0 = fit_arm(data, 0, spec, &fit.cycles[0], &fit.fallbacks);
  fit.mu1 = fit_arm(data, 1, spec, &fit.cycles[1], &fit.fallbacks);
  const auto n = static_cast<Eigen::Index>(data.size());
  fit.mu0_hat.resize(n);
  fit.mu1_hat.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    fit.mu0_hat(i) = fit.mu0(data.covariates().row(i).transpose());
    fit.mu1_hat(i) = fit.mu1(data.covariates().row(i).transpose());
  }
  return fit;
}

NuisanceFit oracle_nuisance(const Dataset& data, const TrueNuisance& truth, const EstimatorSpec& spec) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(data.size());
  const double lo = spec.clip_lo, hi = spec.clip_hi;
  PropensityFit prop;
  OutcomeFit out;
  prop.fitted.resize(n);
  out.mu0_hat.resize(n);
  out.mu1_hat.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector x = data.covariates().row(i).transpose();
    const double e = truth.e(x);
    if (e < lo) ++prop.clipped_low;
    if (e > hi) ++prop.clipped_high;
    prop.fitted(i) = clip(e, lo, hi);
    out.mu0_hat(i) = truth.mu0(x);
    out.mu1_hat(i) = truth.mu1(x);
  }
  prop.predictor = [e = truth.e, lo, hi](const Eigen::Ref<const Vector>& row) { return clip(e(row), lo, hi); };
  out.mu0 = truth.mu0;
  out.mu1 = truth.mu1;
  return assemble(data, std::move(prop), std::move(out), NuisanceMethod::kOracle);
}

NuisanceFit fit_nuisance(const Dataset& data, const EstimatorSpec& spec,
                         const std::optional<TrueNuisance>& truth) {
  spec.validate();
  NuisanceFit full = fit_full_sample(data, spec, truth);
  const int folds = spec.cross_fit_folds;
  if (folds < 2 || spec.method == NuisanceMethod::kOracle) return full;
  if (static_cast<std::size_t>(folds) > data.size()) throw DataError("more cross-fitting folds than observations");

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = make_rng(spec.cross_fit_seed, Stream::kCrossFit);
  std::shuffle(order.begin(), order.end(), rng);

  EstimatorSpec inner = spec;
  inner.cross_fit_folds = 0;
  for (int k = 0; k < folds; ++k) {
    std::vector<std::size_t> train, held_out;
    for (std::size_t pos = 0; pos < order.size(); ++pos)
      (static_cast<int>(pos % folds) == k ? held_out : train).push_back(order[pos]);
    const NuisanceFit part = fit_full_sample(data.subset(train), inner, truth);
    for (auto i : held_out) {
      const auto r = static_cast<Eigen::Index>(i);
      const Vector x = data.covariates().row(r).transpose();
      full.e_hat(r) = part.propensity(x);
      full.mu0_hat(r) = part.mu0(x);
      full.mu1_hat(r) = part.mu1(x);
    }
  }
  full.diagnostics.cross_fit_folds = folds;
  return full;
}

}  // namespace otr
