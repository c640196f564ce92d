#include "otr/aipw.hpp"

#include <cmath>

#include <boost/math/distributions/normal.hpp>

namespace otr {

namespace {

void check_sizes(const Dataset& data, const NuisanceFit& nf) {
  if (nf.size() != data.size() || static_cast<std::size_t>(nf.mu0_hat.size()) != data.size() ||
      static_cast<std::size_t>(nf.mu1_hat.size()) != data.size()) {
    throw DataError("nuisance fit does not match the dataset size");
  }
}

// Pseudo-outcome of row i when the rule assigns `d`.
double arm_term(std::size_t i, const Dataset& data, const NuisanceFit& nf, int d) {
  const auto r = static_cast<Eigen::Index>(i);
  const double e = nf.e_hat(r);
  if (!(e > 0.0 && e < 1.0)) {
    throw NumericalError("propensity estimate outside (0, 1) at row " + std::to_string(i + 1));
  }
  const int a = data.treatments()(r);
  const double mu_d = d == 1 ? nf.mu1_hat(r) : nf.mu0_hat(r);
  double v = mu_d;
  if (a == d) {
    const double rho = a == 1 ? e : 1.0 - e;
    v += (data.outcomes()(r) - mu_d) / rho;
  }
  if (!std::isfinite(v)) {
    throw NumericalError("non-finite pseudo-outcome at row " + std::to_string(i + 1));
  }
  return v;
}

}  // namespace

double pseudo_outcome(std::size_t i, const Dataset& data, const NuisanceFit& nf,
                      const Eigen::Ref<const Vector>& beta) {
  check_sizes(data, nf);
  if (i >= data.size()) throw DataError("observation index out of range");
  return arm_term(i, data, nf, decide(data.row(i).transpose(), beta));
}

double pseudo_outcome(std::size_t i, const Dataset& data, const NuisanceFit& nf,
                      const RegimeParameter& beta) {
  return pseudo_outcome(i, data, nf, Eigen::Ref<const Vector>(beta.beta()));
}

Vector pseudo_outcomes(const Dataset& data, const NuisanceFit& nf, const Eigen::Ref<const Vector>& beta) {
  check_sizes(data, nf);
  if (static_cast<std::size_t>(beta.size()) != data.dimension()) {
    throw DataError("coefficient dimension does not match the covariates");
  }
  const Vector proj = data.covariates() * beta;
  Vector v(proj.size());
  for (Eigen::Index i = 0; i < proj.size(); ++i)
    v(i) = arm_term(static_cast<std::size_t>(i), data, nf, proj(i) > 0.0 ? 1 : 0);
  return v;
}

double value_at(const Dataset& data, const NuisanceFit& nf, const Eigen::Ref<const Vector>& beta) {
  const Vector v = pseudo_outcomes(data, nf, beta);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) sum += v(i);
  return sum / static_cast<double>(v.size());
}

double value(const Dataset& data, const NuisanceFit& nf, const RegimeParameter& beta) {
  return value_at(data, nf, beta.beta());
}

double sigma2(const Dataset& data, const NuisanceFit& nf, const RegimeParameter& beta) {
  if (data.size() < 2) throw DataError("variance estimate needs n >= 2");
  const Vector v = pseudo_outcomes(data, nf, beta.beta());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) sum += v(i);
  const double mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) ss += (v(i) - mean) * (v(i) - mean);
  return ss / static_cast<double>(v.size());
}

ArmPseudoOutcomes arm_pseudo_outcomes(const Dataset& data, const NuisanceFit& nf) {
  check_sizes(data, nf);
  const auto n = static_cast<Eigen::Index>(data.size());
  ArmPseudoOutcomes arms{Vector(n), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    arms.control(i) = arm_term(static_cast<std::size_t>(i), data, nf, 0);
    arms.treated(i) = arm_term(static_cast<std::size_t>(i), data, nf, 1);
  }
  return arms;
}

RegimeObjective value_objective(const Dataset& data, const NuisanceFit& nf) {
  const auto arms = arm_pseudo_outcomes(data, nf);
  const double n = static_cast<double>(data.size());
  return RegimeObjective(data.covariates(), (arms.treated - arms.control) / n, arms.control.sum() / n);
}

double normal_critical_value(double level) {
  if (!(level > 0.0 && level < 1.0)) throw DataError("confidence level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal(), 1.0 - (1.0 - level) / 2.0);
}

ValueReport value_ci(const Dataset& data, const NuisanceFit& nf, const RegimeParameter& beta_hat,
                     double level) {
  const double z = normal_critical_value(level);
  ValueReport r;
  r.beta_hat = beta_hat.beta();
  r.value = value(data, nf, beta_hat);
  r.sigma2 = sigma2(data, nf, beta_hat);
  r.level = level;
  r.n = data.size();
  const double half = z * std::sqrt(r.sigma2 / static_cast<double>(r.n));
  r.ci_lo = r.value - half;
  r.ci_hi = r.value + half;
  return r;
}

nlohmann::json ValueReport::to_json() const {
  return {{"beta_hat", std::vector<double>(beta_hat.begin(), beta_hat.end())},
          {"value", value},
          {"sigma2", sigma2},
          {"ci_lo", ci_lo},
          {"ci_hi", ci_hi},
          {"level", level},
          {"n", n}};
}

}  // namespace otr
