#include "otr/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <set>
#include <sstream>

#include "otr/aipw.hpp"
#include "otr/logistic.hpp"
#include "otr/parallel.hpp"
#include "otr/random.hpp"

namespace otr {

namespace {

double dot(const std::vector<double>& coef, const Eigen::Ref<const Vector>& x) {
  double s = 0.0;
  for (std::size_t k = 0; k < coef.size(); ++k) s += coef[k] * x(static_cast<Eigen::Index>(k));
  return s;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

constexpr std::size_t kOracleChunk = 1 << 16;

}  // namespace

void DgpSpec::validate() const {
  if (n < 1) throw DataError("generator needs n >= 1");
  if (!(upper > lower)) throw DataError("generator covariate range is empty");
  if (propensity.size() < 1) throw DataError("generator needs propensity coefficients");
  if (baseline.size() != propensity.size() || contrast.size() != propensity.size())
    throw DataError("generator coefficient vectors must have equal length");
  if (!(noise_sd > 0.0)) throw DataError("generator noise sd must be positive");
}

double DgpSpec::propensity_at(const Eigen::Ref<const Vector>& x) const { return expit(dot(propensity, x)); }
double DgpSpec::mu0_at(const Eigen::Ref<const Vector>& x) const { return dot(baseline, x); }
double DgpSpec::mu1_at(const Eigen::Ref<const Vector>& x) const { return dot(baseline, x) + dot(contrast, x); }

TrueNuisance DgpSpec::truth() const {
  const DgpSpec self = *this;
  return {[self](const Eigen::Ref<const Vector>& x) { return self.propensity_at(x); },
          [self](const Eigen::Ref<const Vector>& x) { return self.mu0_at(x); },
          [self](const Eigen::Ref<const Vector>& x) { return self.mu1_at(x); }};
}

Vector DgpSpec::true_regime() const {
  const Vector c = Eigen::Map<const Vector>(contrast.data(), static_cast<Eigen::Index>(contrast.size()));
  if (c.norm() == 0.0) throw DataError("generator contrast is zero; no unique optimal rule");
  return c / c.norm();
}

DgpSpec DgpSpec::from_json(const nlohmann::json& j) {
  DgpSpec s;
  try {
    s.n = j.value("n", s.n);
    s.lower = j.value("lower", s.lower);
    s.upper = j.value("upper", s.upper);
    s.propensity = j.value("propensity", s.propensity);
    s.baseline = j.value("baseline", s.baseline);
    s.contrast = j.value("contrast", s.contrast);
    s.noise_sd = j.value("noise_sd", s.noise_sd);
    s.zero_noise = j.value("zero_noise", s.zero_noise);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid generator config: ") + e.what());
  }
  s.validate();
  return s;
}

nlohmann::json DgpSpec::to_json() const {
  return {{"n", n},           {"lower", lower},         {"upper", upper},
          {"propensity", propensity}, {"baseline", baseline}, {"contrast", contrast},
          {"noise_sd", noise_sd},     {"zero_noise", zero_noise}, {"seed", seed}};
}

Dataset generate(const DgpSpec& spec) {
  spec.validate();
  const std::size_t p = spec.covariates();
  const auto n = static_cast<Eigen::Index>(spec.n);
  Matrix x(n, static_cast<Eigen::Index>(p + 1));
  Eigen::VectorXi a(n);
  Vector y(n);
  Rng rng = make_rng(spec.seed, Stream::kData);
  std::uniform_real_distribution<double> unif(spec.lower, spec.upper);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, spec.noise_sd);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (std::size_t k = 1; k <= p; ++k) x(i, static_cast<Eigen::Index>(k)) = unif(rng);
    const Vector row = x.row(i).transpose();
    a(i) = coin(rng) < spec.propensity_at(row) ? 1 : 0;
    const double eps = noise(rng);
    y(i) = (a(i) ? spec.mu1_at(row) : spec.mu0_at(row)) + (spec.zero_noise ? 0.0 : eps);
  }
  std::vector<std::string> names{"(intercept)"};
  for (std::size_t k = 1; k <= p; ++k) names.push_back("x" + std::to_string(k));
  return Dataset(std::move(x), std::move(a), std::move(y), std::move(names), true);
}

OracleValue true_value_oracle(const DgpSpec& spec, const Vector& beta, std::size_t draws) {
  spec.validate();
  if (draws < 1) throw DataError("oracle needs at least one draw");
  const std::size_t p = spec.covariates();
  if (static_cast<std::size_t>(beta.size()) != p + 1) throw DataError("oracle: rule dimension mismatch");
  const std::size_t chunks = (draws + kOracleChunk - 1) / kOracleChunk;
  std::vector<double> sums(chunks), squares(chunks);
  parallel_for(chunks, [&](std::size_t c) {
    Rng rng = make_rng(spec.seed, Stream::kTruthOracle, c);
    std::uniform_real_distribution<double> unif(spec.lower, spec.upper);
    std::normal_distribution<double> noise(0.0, spec.noise_sd);
    Vector x(static_cast<Eigen::Index>(p + 1));
    x(0) = 1.0;
    const std::size_t count = std::min(kOracleChunk, draws - c * kOracleChunk);
    double s = 0.0, ss = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      for (std::size_t j = 1; j <= p; ++j) x(static_cast<Eigen::Index>(j)) = unif(rng);
      const double eps = spec.zero_noise ? 0.0 : noise(rng);
      const double y = (decide(x, beta) ? spec.mu1_at(x) : spec.mu0_at(x)) + eps;
      s += y;
      ss += y * y;
    }
    sums[c] = s;
    squares[c] = ss;
  });
  double s = 0.0, ss = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    s += sums[c];
    ss += squares[c];
  }
  const double m = static_cast<double>(draws);
  OracleValue out;
  out.value = s / m;
  out.draws = draws;
  const double var = draws > 1 ? std::max(0.0, (ss - m * out.value * out.value) / (m - 1.0)) : 0.0;
  out.standard_error = std::sqrt(var / m);
  return out;
}

void StudyConfig::validate() const {
  dgp.validate();
  if (replications < 1) throw DataError("study needs at least one replication");
  search.validate();
  estimator.validate();
  if (bootstrap.draws > 0) {
    bootstrap.validate();
    if (epsilons.empty()) throw DataError("study needs at least one epsilon");
    for (double e : epsilons)
      if (!(e > 0.0)) throw DataError("study epsilons must be positive");
  }
  if (oracle_draws < 1) throw DataError("oracle_draws must be positive");
  if (!(value_level > 0.0 && value_level < 1.0)) throw DataError("value_level must lie in (0, 1)");
}

StudyConfig StudyConfig::from_json(const nlohmann::json& j) {
  StudyConfig c;
  try {
    if (j.contains("dgp")) c.dgp = DgpSpec::from_json(j.at("dgp"));
    c.replications = j.value("replications", c.replications);
    if (j.contains("search")) c.search = SearchConfig::from_json(j.at("search"));
    if (j.contains("estimator")) c.estimator = EstimatorSpec::from_json(j.at("estimator"));
    if (j.contains("bootstrap")) c.bootstrap = BootstrapSettings::from_json(j.at("bootstrap"));
    c.epsilons = j.value("epsilons", c.epsilons);
    c.oracle_draws = j.value("oracle_draws", c.oracle_draws);
    c.value_level = j.value("value_level", c.value_level);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid study config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json StudyConfig::to_json() const {
  return {{"dgp", dgp.to_json()},
          {"replications", replications},
          {"search", search.to_json()},
          {"estimator", estimator.to_json()},
          {"bootstrap", bootstrap.to_json()},
          {"epsilons", epsilons},
          {"oracle_draws", oracle_draws},
          {"value_level", value_level}};
}

nlohmann::json McSummary::to_json() const {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : columns) {
    cols.push_back({{"epsilon", c.epsilon},
                    {"coverage", c.coverage},
                    {"mean_length", c.mean_length},
                    {"replications", c.replications}});
  }
  return {{"coordinates", coordinates},
          {"true_beta", true_beta},
          {"mean_beta_hat", mean_beta_hat},
          {"columns", cols},
          {"value_coverage", value_coverage},
          {"value_coverage_low", value_coverage_low},
          {"value_coverage_high", value_coverage_high},
          {"true_value", true_value},
          {"true_value_se", true_value_se},
          {"replications", replications},
          {"completed", completed},
          {"failures", failures},
          {"failure_messages", failure_messages},
          {"settings", settings}};
}

std::string McSummary::table() const {
  std::ostringstream os;
  char buf[64];
  os << "                       ";
  for (const auto& c : columns) {
    std::snprintf(buf, sizeof buf, "  eps=%-6g", c.epsilon);
    os << buf;
  }
  os << "     Est\n";
  for (std::size_t k = 0; k < coordinates.size(); ++k) {
    for (int row = 0; row < 2; ++row) {
      std::snprintf(buf, sizeof buf, "%-12s %-10s", row == 0 ? coordinates[k].c_str() : "",
                    row == 0 ? "Coverage" : "Length");
      os << buf;
      for (const auto& c : columns) {
        std::snprintf(buf, sizeof buf, "  %10.3f", row == 0 ? c.coverage[k] : c.mean_length[k]);
        os << buf;
      }
      if (row == 0 && k < mean_beta_hat.size()) {
        std::snprintf(buf, sizeof buf, "  %6.3f", mean_beta_hat[k]);
        os << buf;
      }
      os << "\n";
    }
  }
  std::snprintf(buf, sizeof buf, "value CI coverage %.3f (T = %d, failed %d)\n", value_coverage, completed,
                failures);
  os << buf;
  return os.str();
}

McSummary run_coverage_study(const StudyConfig& config) {
  config.validate();
  const TrueNuisance truth = config.dgp.truth();
  const Vector beta0 = config.dgp.true_regime();
  const auto l = beta0.size();
  const bool bootstrap = config.bootstrap.draws > 0;
  const std::size_t columns = bootstrap ? config.epsilons.size() : 0;

  McSummary summary;
  summary.replications = config.replications;
  summary.settings = config.to_json();
  // The generated design always carries an intercept; the rule's intercept is
  // not scored.
  for (Eigen::Index k = 1; k < l; ++k) {
    summary.coordinates.push_back("beta0" + std::to_string(k));
    summary.true_beta.push_back(beta0(k));
  }
  DgpSpec oracle_spec = config.dgp;
  oracle_spec.seed = derive_seed(config.dgp.seed, Stream::kTruthOracle);
  const OracleValue truth_value = true_value_oracle(oracle_spec, beta0, config.oracle_draws);
  summary.true_value = truth_value.value;
  summary.true_value_se = truth_value.standard_error;

  struct Outcome {
    Vector beta_hat;
    double ci_lo = 0.0, ci_hi = 0.0;
    std::vector<BootstrapReport> reports;
  };
  const auto reps = static_cast<std::size_t>(config.replications);
  std::vector<std::optional<Outcome>> outcomes(reps);
  std::vector<std::string> errors(reps);
  parallel_for(reps, [&](std::size_t r) {
    try {
      DgpSpec spec = config.dgp;
      spec.seed = derive_seed(config.dgp.seed, Stream::kReplication, r);
      const Dataset data = generate(spec);
      const NuisanceFit nf = fit_nuisance(data, config.estimator, truth);
      SearchConfig cfg = config.search;
      cfg.seed = derive_seed(config.search.seed, Stream::kReplication, r);
      const SearchResult found = search(data, nf, cfg);
      const ValueReport v = value_ci(data, nf, found.regime(), config.value_level);
      Outcome out{found.beta_hat, v.ci_lo, v.ci_hi, {}};
      for (std::size_t c = 0; c < columns; ++c) {
        BootstrapSettings bs = config.bootstrap;
        bs.epsilon = config.epsilons[c];
        bs.seed = derive_seed(config.bootstrap.seed, Stream::kReplication, r);
        out.reports.push_back(bootstrap_ci(data, nf, found.beta_hat, bs, config.search, config.estimator, truth));
      }
      outcomes[r] = std::move(out);
    } catch (const Error& e) {
      errors[r] = std::string(e.kind()) + ": " + e.what();
    }
  });

  summary.mean_beta_hat.assign(summary.coordinates.size(), 0.0);
  summary.columns.resize(columns);
  for (std::size_t c = 0; c < columns; ++c) {
    summary.columns[c].epsilon = config.epsilons[c];
    summary.columns[c].coverage.assign(summary.coordinates.size(), 0.0);
    summary.columns[c].mean_length.assign(summary.coordinates.size(), 0.0);
  }
  const double shift = 2.0 * truth_value.standard_error;
  int hit = 0, hit_low = 0, hit_high = 0;
  for (std::size_t r = 0; r < reps; ++r) {
    if (!outcomes[r]) {
      ++summary.failures;
      summary.failure_messages.push_back("replication " + std::to_string(r) + ": " + errors[r]);
      continue;
    }
    const Outcome& o = *outcomes[r];
    ++summary.completed;
    auto covers = [&](double t) { return o.ci_lo <= t && t <= o.ci_hi; };
    hit += covers(truth_value.value);
    hit_low += covers(truth_value.value - shift);
    hit_high += covers(truth_value.value + shift);
    for (std::size_t k = 0; k < summary.coordinates.size(); ++k)
      summary.mean_beta_hat[k] += o.beta_hat(static_cast<Eigen::Index>(k + 1));
    for (std::size_t c = 0; c < columns; ++c) {
      const BootstrapReport& rep = o.reports[c];
      auto& col = summary.columns[c];
      ++col.replications;
      for (std::size_t k = 0; k < summary.coordinates.size(); ++k) {
        const auto j = static_cast<Eigen::Index>(k + 1);
        col.coverage[k] += rep.ci_lo(j) <= beta0(j) && beta0(j) <= rep.ci_hi(j);
        col.mean_length[k] += rep.length(j);
      }
    }
  }
  if (summary.completed > 0) {
    const double t = summary.completed;
    for (auto& b : summary.mean_beta_hat) b /= t;
    summary.value_coverage = hit / t;
    summary.value_coverage_low = hit_low / t;
    summary.value_coverage_high = hit_high / t;
    for (auto& col : summary.columns) {
      for (auto& v : col.coverage) v /= t;
      for (auto& v : col.mean_length) v /= t;
    }
  }
  return summary;
}

nlohmann::json RateReport::to_json() const {
  return {{"sizes", sizes}, {"median_error", median_error}, {"errors", errors}, {"slope", slope}};
}

RateReport rate_diagnostic(const DgpSpec& base, const std::vector<std::size_t>& sizes, int reps,
                           const SearchConfig& search_cfg, const EstimatorSpec& estimator) {
  if (std::set<std::size_t>(sizes.begin(), sizes.end()).size() < 2)
    throw DataError("rate diagnostic: need >= 2 sizes");
  if (reps < 1) throw DataError("rate diagnostic: reps must be at least 1");
  base.validate();
  search_cfg.validate();
  const TrueNuisance truth = base.truth();
  const Vector beta0 = base.true_regime();
  RateReport report;
  report.sizes = sizes;
  const auto r_count = static_cast<std::size_t>(reps);
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    std::vector<double> errs(r_count);
    parallel_for(r_count, [&](std::size_t r) {
      DgpSpec spec = base;
      spec.n = sizes[s];
      const std::uint64_t index = s * 1'000'000 + r;
      spec.seed = derive_seed(base.seed, Stream::kReplication, index);
      const Dataset data = generate(spec);
      const NuisanceFit nf = fit_nuisance(data, estimator, truth);
      SearchConfig cfg = search_cfg;
      cfg.seed = derive_seed(search_cfg.seed, Stream::kReplication, index);
      errs[r] = (search(data, nf, cfg).beta_hat - beta0).norm();
    });
    report.median_error.push_back(median(errs));
    report.errors.push_back(std::move(errs));
  }
  double mx = 0.0, my = 0.0;
  const double k = static_cast<double>(sizes.size());
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    mx += std::log(static_cast<double>(sizes[s])) / k;
    my += std::log(report.median_error[s]) / k;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const double dx = std::log(static_cast<double>(sizes[s])) - mx;
    sxy += dx * (std::log(report.median_error[s]) - my);
    sxx += dx * dx;
  }
  report.slope = sxy / sxx;
  return report;
}

}  // namespace otr
