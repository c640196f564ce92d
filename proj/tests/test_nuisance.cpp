#include "doctest.h"

#include <numeric>
#include <random>

#include "otr/logistic.hpp"
#include "otr/nuisance.hpp"
#include "otr/simulation.hpp"
#include "otr/smoother.hpp"

using namespace otr;

namespace {

Dataset intercept_only(const std::vector<int>& a, const std::vector<double>& y) {
  const auto n = static_cast<Eigen::Index>(a.size());
  Matrix x = Matrix::Ones(n, 1);
  return Dataset(x, Eigen::Map<const Eigen::VectorXi>(a.data(), n), Eigen::Map<const Vector>(y.data(), n),
                 {"(intercept)"}, true);
}

EstimatorSpec with_method(NuisanceMethod m) {
  EstimatorSpec s;
  s.method = m;
  return s;
}

DgpSpec design_dgp(std::size_t n, std::uint64_t seed) {
  DgpSpec s;
  s.n = n;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("balanced intercept-only propensity is one half") {
  const Dataset d = intercept_only({0, 1, 0, 1}, {1, 2, 3, 4});
  const auto fit = fit_propensity(d, with_method(NuisanceMethod::kLogistic));
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(fit.fitted(i) == doctest::Approx(0.5).epsilon(1e-12));
  const auto kfit = fit_propensity(d, with_method(NuisanceMethod::kKernel));
  for (Eigen::Index i = 0; i < 4; ++i) CHECK(kfit.fitted(i) == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("logistic propensity recovers the generating coefficients") {
  const Dataset d = generate(design_dgp(20000, 3));
  const LogisticFit fit = fit_logistic(d.covariates(), d.treatments().cast<double>());
  CHECK(std::abs(fit.coefficients(0) + 1.0) < 0.1);
  CHECK(std::abs(fit.coefficients(1) - 0.8) < 0.1);
  CHECK(std::abs(fit.coefficients(2) - 0.8) < 0.1);
  // Score equations at the solution.
  Vector p(d.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = expit(d.covariates().row(i).dot(fit.coefficients));
  const Vector score = d.covariates().transpose() * (d.treatments().cast<double>() - p);
  CHECK(score.cwiseAbs().maxCoeff() < 1e-6);
  CHECK(fit.gradient_norm < 1e-6);
}

TEST_CASE("logistic separation is reported") {
  Matrix x(6, 2);
  x << 1, -3, 1, -2, 1, -1, 1, 1, 1, 2, 1, 3;
  const Vector y{{0, 0, 0, 1, 1, 1}};
  CHECK_THROWS_AS(fit_logistic(x, y), NumericalError);
}

TEST_CASE("propensity clipping") {
  TrueNuisance truth{[](const Eigen::Ref<const Vector>&) { return 0.999; },
                     [](const Eigen::Ref<const Vector>&) { return 0.0; },
                     [](const Eigen::Ref<const Vector>&) { return 0.0; }};
  const Dataset d = intercept_only({0, 1}, {0, 0});
  const NuisanceFit nf = oracle_nuisance(d, truth);
  CHECK(nf.e_hat(0) == 0.99);
  CHECK(nf.propensity(Vector{{1.0}}) == 0.99);
}

TEST_CASE("constant outcome gives constant means") {
  const Dataset d = intercept_only({0, 1, 0, 1, 1, 0}, {3, 3, 3, 3, 3, 3});
  for (auto m : {NuisanceMethod::kLogistic, NuisanceMethod::kKernel}) {
    const auto out = fit_outcome_means(d, with_method(m));
    for (Eigen::Index i = 0; i < 6; ++i) {
      CHECK(out.mu0_hat(i) == doctest::Approx(3.0));
      CHECK(out.mu1_hat(i) == doctest::Approx(3.0));
    }
  }
}

TEST_CASE("local-linear smoother reproduces affine functions") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> x(200), r(200), w(200, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = u(rng);
    r[i] = 2.0 * x[i];
  }
  for (double h : {0.05, 0.3, 2.0}) {
    LocalLinearSmoother s(x, r, w, h);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto est = s(x[i]);
      if (!est.fallback) CHECK(est.value == doctest::Approx(2.0 * x[i]).epsilon(1e-8));
    }
  }
}

TEST_CASE("kernel outcome fit reproduces an exactly linear arm") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 300;
  Matrix x(n, 2);
  Eigen::VectorXi a(n);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = u(rng);
    a(i) = i % 2;
    y(i) = 2.0 * x(i, 1);
  }
  const Dataset d(x, a, y, {}, true);
  const auto out = fit_outcome_means(d, with_method(NuisanceMethod::kKernel));
  for (int i = 0; i < n; ++i) CHECK(out.mu1_hat(i) == doctest::Approx(2.0 * x(i, 1)).epsilon(1e-8));
}

TEST_CASE("kernel outcome means on the simulation design") {
  const Dataset d = generate(design_dgp(20000, 21));
  const auto out = fit_outcome_means(d, with_method(NuisanceMethod::kKernel));
  double mse = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double x1 = d.covariates()(i, 1), x2 = d.covariates()(i, 2);
    const double truth = 2.0 + 0.5 * x1 - 0.5 * x2;
    mse += std::pow(out.mu1_hat(i) - truth, 2);
  }
  mse /= static_cast<double>(d.size());
  CHECK(mse < 0.05);
}

TEST_CASE("kernel propensity stays in the clip range and tracks the truth") {
  const Dataset d = generate(design_dgp(5000, 4));
  const auto fit = fit_propensity(d, with_method(NuisanceMethod::kKernel));
  double mae = 0.0;
  for (Eigen::Index i = 0; i < fit.fitted.size(); ++i) {
    CHECK(fit.fitted(i) >= 0.01);
    CHECK(fit.fitted(i) <= 0.99);
    mae += std::abs(fit.fitted(i) - expit(-1.0 + 0.8 * d.covariates()(i, 1) + 0.8 * d.covariates()(i, 2)));
  }
  CHECK(mae / fit.fitted.size() < 0.05);
}

TEST_CASE("oracle nuisance evaluates the generating functions") {
  const DgpSpec spec;
  const Dataset d = generate(design_dgp(10, 1));
  const NuisanceFit nf = oracle_nuisance(d, spec.truth());
  CHECK(spec.propensity_at(Vector{{1.0, 1.0, 1.0}}) == doctest::Approx(0.6456563062257954).epsilon(1e-12));
  for (Eigen::Index i = 0; i < 10; ++i) {
    const double x1 = d.covariates()(i, 1), x2 = d.covariates()(i, 2);
    CHECK(nf.mu0_hat(i) == doctest::Approx(2 - 1.5 * x1 - 1.5 * x2));
    CHECK(nf.mu1_hat(i) == doctest::Approx(2 + 0.5 * x1 - 0.5 * x2));
  }
  TrueNuisance half{[](const Eigen::Ref<const Vector>&) { return 0.5; }, spec.truth().mu0, spec.truth().mu1};
  const NuisanceFit nh = oracle_nuisance(d, half);
  CHECK((nh.e_hat.array() == 0.5).all());
}

TEST_CASE("fits do not depend on row order") {
  const Dataset d = generate(design_dgp(400, 9));
  std::vector<std::size_t> perm(d.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(2));
  const Dataset shuffled = d.subset(perm);
  for (auto m : {NuisanceMethod::kLogistic, NuisanceMethod::kKernel}) {
    const NuisanceFit a = fit_nuisance(d, with_method(m));
    const NuisanceFit b = fit_nuisance(shuffled, with_method(m));
    for (std::size_t k = 0; k < perm.size(); ++k) {
      const auto i = static_cast<Eigen::Index>(perm[k]);
      const auto j = static_cast<Eigen::Index>(k);
      CHECK(b.e_hat(j) == doctest::Approx(a.e_hat(i)).epsilon(1e-8));
      CHECK(b.mu0_hat(j) == doctest::Approx(a.mu0_hat(i)).epsilon(1e-8));
      CHECK(b.mu1_hat(j) == doctest::Approx(a.mu1_hat(i)).epsilon(1e-8));
    }
  }
}

TEST_CASE("nuisance fitting needs both arms") {
  const Dataset d = intercept_only({1, 1, 1}, {1, 2, 3});
  CHECK_THROWS_AS(fit_nuisance(d, with_method(NuisanceMethod::kLogistic)), DataError);
  CHECK_THROWS_AS(fit_nuisance(d, with_method(NuisanceMethod::kOracle)), DataError);
}

TEST_CASE("cross-fitting produces held-out values") {
  const Dataset d = generate(design_dgp(600, 10));
  EstimatorSpec s = with_method(NuisanceMethod::kLogistic);
  s.cross_fit_folds = 3;
  const NuisanceFit cf = fit_nuisance(d, s);
  const NuisanceFit full = fit_nuisance(d, with_method(NuisanceMethod::kLogistic));
  CHECK(cf.diagnostics.cross_fit_folds == 3);
  CHECK((cf.e_hat - full.e_hat).cwiseAbs().maxCoeff() > 0.0);
  CHECK((cf.e_hat - full.e_hat).cwiseAbs().maxCoeff() < 0.2);
}

TEST_CASE("EstimatorSpec validation and json") {
  EstimatorSpec s;
  s.clip_lo = 0.5;
  s.clip_hi = 0.4;
  CHECK_THROWS_AS(s.validate(), DataError);
  EstimatorSpec t;
  t.method = NuisanceMethod::kLogistic;
  t.bandwidth = 0.3;
  const auto back = EstimatorSpec::from_json(t.to_json());
  CHECK(back.method == NuisanceMethod::kLogistic);
  CHECK(back.bandwidth == 0.3);
  CHECK(parse_nuisance_method("local-linear-kernel") == NuisanceMethod::kKernel);
  CHECK_THROWS_AS(parse_nuisance_method("forest"), DataError);
}
