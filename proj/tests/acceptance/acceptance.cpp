// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Pass criterion numbers as arguments to run a subset.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "otr/aipw.hpp"
#include "otr/bootstrap.hpp"
#include "otr/cli.hpp"
#include "otr/policy_search.hpp"
#include "otr/simulation.hpp"

using namespace otr;

namespace {

// Tolerances and sizes, pinned.
constexpr double kOracleTol = 1e-12;
constexpr double kHessianTol = 1e-10;
constexpr double kReshapeTol = 1e-10;
constexpr double kValueCoverageLo = 0.90, kValueCoverageHi = 0.99;
constexpr double kSlopeLo = -0.55, kSlopeHi = -0.15;
constexpr double kDoubleRobustTol = 0.05;
constexpr double kGridTol = 1e-6;
constexpr double kDeskCoverage = 0.80;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

Vector normal_vector(std::mt19937_64& rng, Eigen::Index l) {
  std::normal_distribution<double> z;
  Vector v(l);
  for (auto& x : v) x = z(rng);
  return v;
}

struct Sample {
  Dataset data;
  NuisanceFit nf;
};

// Random covariates, both arms, arbitrary nuisance values.
Sample random_sample(std::mt19937_64& rng, int n, int l, bool intercept) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::bernoulli_distribution coin(0.5);
  Matrix x(n, l);
  Eigen::VectorXi a(n);
  Vector y(n);
  NuisanceFit nf;
  nf.e_hat.resize(n);
  nf.mu0_hat.resize(n);
  nf.mu1_hat.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < l; ++k) x(i, k) = (intercept && k == 0) ? 1.0 : z(rng);
    a(i) = coin(rng);
    y(i) = z(rng);
    nf.e_hat(i) = u(rng);
    nf.mu0_hat(i) = z(rng);
    nf.mu1_hat(i) = z(rng);
  }
  return {Dataset(x, a, y, {}, intercept), nf};
}

// 1. Value against the formula written out by hand.
Outcome oracle_equivalence() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> size(1, 5), dim(1, 4);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const Sample s = random_sample(rng, size(rng), dim(rng), false);
    const auto beta = RegimeParameter::normalized(normal_vector(rng, s.data.dimension()));
    const Vector& b = beta.beta();
    double total = 0.0;
    for (std::size_t i = 0; i < s.data.size(); ++i) {
      double xb = 0.0;
      for (std::size_t k = 0; k < s.data.dimension(); ++k) xb += s.data.covariates()(i, k) * b(k);
      const int d = xb > 0.0;
      const int a = s.data.treatments()(i);
      const double e = s.nf.e_hat(i);
      const double mu = d ? s.nf.mu1_hat(i) : s.nf.mu0_hat(i);
      const double rho = a ? e : 1.0 - e;
      total += (a == d) / rho * (s.data.outcomes()(i) - mu) + mu;
    }
    const double brute = total / static_cast<double>(s.data.size());
    worst = std::max(worst, std::abs(value(s.data, s.nf, beta) - brute));
  }
  return {worst <= kOracleTol, fmt("max |diff| = %.3g over 100 datasets", worst)};
}

// 2. Second differences on random quadratics.
Outcome hessian_exactness() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> dim(1, 5);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const int l = dim(rng);
    SquareMatrix m(l, l);
    for (int k = 0; k < l; ++k) m.col(k) = normal_vector(rng, l);
    const SquareMatrix q = (0.5 * (m + m.transpose())).eval();
    const Vector g = normal_vector(rng, l);
    const double c = normal_vector(rng, 1)(0);
    const VectorObjective f = [&](const Vector& v) { return c + g.dot(v) + v.dot(q * v); };
    const Vector at = normal_vector(rng, l);
    for (double eps : {0.05, 0.5}) {
      const HessianEstimate h = hessian_fd(f, at, eps);
      worst = std::max(worst, (h.raw + 2.0 * q).cwiseAbs().maxCoeff());
    }
  }
  return {worst <= kHessianTol, fmt("max |H - (-d2V)| = %.3g over 50 quadratics", worst)};
}

// 3. Mean reshaped objective over the original sample.
Outcome reshape_identity() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> dim(1, 4), size(2, 40);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const int l = dim(rng);
    const Sample s = random_sample(rng, size(rng), l, true);
    const Vector beta = normal_vector(rng, l).normalized();
    const Vector beta_hat = normal_vector(rng, l).normalized();
    SquareMatrix m(l, l);
    for (int k = 0; k < l; ++k) m.col(k) = normal_vector(rng, l);
    const SquareMatrix h = m * m.transpose();
    const Vector diff = beta_hat - beta;
    const double expect = -0.5 * diff.dot(h * diff);
    double mean = 0.0;
    for (std::size_t i = 0; i < s.data.size(); ++i) mean += reshape_objective(i, s.data, s.nf, beta, beta_hat, h);
    mean /= static_cast<double>(s.data.size());
    worst = std::max(worst, std::abs(mean - expect));
  }
  return {worst <= kReshapeTol, fmt("max |mean - quadratic| = %.3g over 100 triples", worst)};
}

SearchConfig desk_search() {
  SearchConfig c;
  c.population = 60;
  c.generations = 30;
  c.stall_generations = 10;
  c.max_polish_sweeps = 5;
  return c;
}

EstimatorSpec oracle_estimator() {
  EstimatorSpec e;
  e.method = NuisanceMethod::kOracle;
  return e;
}

// 4. Normal value interval at beta_hat covers V(beta_0). The oracle error is
// folded in by also scoring at truth -/+ 2 oracle standard errors; all three
// rates must fall in range.
Outcome value_coverage() {
  StudyConfig c;
  c.dgp.n = 2000;
  c.dgp.seed = 404;
  c.replications = 200;
  c.search = desk_search();
  c.search.seed = 404;
  c.estimator = oracle_estimator();
  c.bootstrap.draws = 0;
  c.oracle_draws = 10'000'000;
  const McSummary s = run_coverage_study(c);
  const double rates[] = {s.value_coverage, s.value_coverage_low, s.value_coverage_high};
  bool ok = s.failures == 0;
  for (double r : rates) ok = ok && r >= kValueCoverageLo && r <= kValueCoverageHi;
  return {ok, fmt("coverage %.3f (truth -2se: %.3f, +2se: %.3f)", rates[0], rates[1], rates[2]) +
                  ", failures " + std::to_string(s.failures)};
}

// 5. Error slope on log n.
Outcome rate() {
  DgpSpec base;
  base.seed = 505;
  SearchConfig cfg = desk_search();
  cfg.seed = 505;
  const RateReport r = rate_diagnostic(base, {1000, 8000}, 30, cfg, oracle_estimator());
  return {r.slope >= kSlopeLo && r.slope <= kSlopeHi,
          fmt("median error %.4f -> %.4f, slope %.3f", r.median_error[0], r.median_error[1], r.slope)};
}

// 6. Either nuisance piece may be wrong.
Outcome double_robustness() {
  DgpSpec spec;
  spec.n = 20000;
  spec.seed = 606;
  const Dataset d = generate(spec);
  const TrueNuisance truth = spec.truth();
  const Vector beta0 = spec.true_regime();
  DgpSpec oracle = spec;
  oracle.seed = 6060;
  const double v0 = true_value_oracle(oracle, beta0, 10'000'000).value;
  const Predictor zero = [](const Eigen::Ref<const Vector>&) { return 0.0; };
  const Predictor half = [](const Eigen::Ref<const Vector>&) { return 0.5; };
  const double err_mu = std::abs(value_at(d, oracle_nuisance(d, {truth.e, zero, zero}), beta0) - v0);
  const double err_e = std::abs(value_at(d, oracle_nuisance(d, {half, truth.mu0, truth.mu1}), beta0) - v0);
  return {err_mu < kDoubleRobustTol && err_e < kDoubleRobustTol,
          fmt("|err| wrong mu: %.4f, wrong e: %.4f", err_mu, err_e)};
}

// 7. GA plus polish reaches the grid maximum.
Outcome search_vs_grid() {
  std::mt19937_64 rng(707);
  double worst = -1e300;
  for (int rep = 0; rep < 20; ++rep) {
    const Sample s = random_sample(rng, 200, 2, true);
    SearchConfig cfg;
    cfg.seed = 700 + rep;
    const SearchResult found = search(s.data, s.nf, cfg);
    const SearchResult grid = exhaustive_grid(s.data, s.nf, 50000);
    worst = std::max(worst, grid.value_at_max - found.value_at_max);
  }
  return {worst <= kGridTol, fmt("max (grid - search) = %.3g over 20 datasets", worst)};
}

// 8. Scaled-down coverage study of the percentile intervals.
Outcome desk_table() {
  StudyConfig c;
  c.dgp.n = 4000;
  c.dgp.seed = 808;
  c.replications = 50;
  c.search = desk_search();
  c.search.seed = 808;
  c.estimator = oracle_estimator();
  c.bootstrap.draws = 200;
  c.bootstrap.refit = false;
  c.bootstrap.seed = 808;
  c.epsilons = {0.5};
  c.oracle_draws = 1'000'000;
  const McSummary s = run_coverage_study(c);
  const auto& col = s.columns.at(0);
  const bool ok = s.failures == 0 && col.coverage[0] >= kDeskCoverage && col.coverage[1] >= kDeskCoverage;
  return {ok, fmt("coverage %.3f / %.3f, mean length %.3f", col.coverage[0], col.coverage[1], col.mean_length[0]) +
                  fmt(" / %.3f", col.mean_length[1])};
}

std::string run_tool(std::vector<std::string> args, int& code) {
  args.insert(args.begin(), "otr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return out.str();
}

// 9. Byte-identical reports.
Outcome determinism() {
  const std::vector<std::vector<std::string>> commands{
      {"fit", "--n", "1000", "--seed", "909", "--nuisance", "kernel", "--deterministic"},
      {"bootstrap-ci", "--n", "500", "--seed", "909", "--nuisance", "logistic", "--bootstrap", "20",
       "--population", "40", "--generations", "20", "--deterministic"}};
  bool ok = true;
  std::string detail;
  for (const auto& cmd : commands) {
    int c1 = 0, c2 = 0;
    const std::string a = run_tool(cmd, c1), b = run_tool(cmd, c2);
    const bool same = c1 == 0 && c2 == 0 && !a.empty() && a == b;
    ok = ok && same;
    detail += cmd[0] + (same ? " identical; " : " DIFFERS; ");
  }
  return {ok, detail};
}

// 10. Local-minimum rule on synthetic reports.
Outcome sweep_rule() {
  SweepResult sweep;
  const double grid[] = {0.1, 0.5, 0.9};
  const double sums[] = {5.0, 2.0, 4.0};
  std::vector<double> lengths;
  for (int k = 0; k < 3; ++k) {
    BootstrapReport r;
    r.epsilon = grid[k];
    r.length = Vector{{sums[k] / 2, sums[k] / 2}};
    lengths.push_back(r.summed_length());
    sweep.reports.push_back(r);
  }
  sweep.recommended = recommend_epsilon(lengths);
  return {sweep.recommended_epsilon() == 0.5, fmt("recommended %.2f", sweep.recommended_epsilon())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle_equivalence},
      {"hessian exactness", hessian_exactness},
      {"reshaped-objective identity", reshape_identity},
      {"value-CI coverage", value_coverage},
      {"cube-root rate", rate},
      {"double robustness", double_robustness},
      {"search vs grid", search_vs_grid},
      {"desk-scale percentile coverage", desk_table},
      {"determinism", determinism},
      {"epsilon-sweep rule", sweep_rule},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));

  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2d %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
