#include "otr/cli.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "otr/aipw.hpp"
#include "otr/bootstrap.hpp"
#include "otr/dataset.hpp"
#include "otr/nuisance.hpp"
#include "otr/parallel.hpp"
#include "otr/policy_search.hpp"
#include "otr/simulation.hpp"

namespace otr {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Flags {
  std::string config_path;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string out;
  bool deterministic = false;

  std::string csv;
  std::string outcome = "y";
  std::string treatment = "a";
  std::vector<std::string> covariates;
  bool standardize = false;
  bool no_intercept = false;
  std::size_t n = 2000;

  std::string nuisance;
  double bandwidth = 0.0;
  int population = 0;
  int generations = 0;

  int draws = 0;
  double epsilon = 0.0;
  std::vector<double> epsilon_grid;
  bool refit = false;
  double level = 0.95;
  std::string draws_csv;
  std::string trace_csv;

  int replications = 0;
  bool full_scale = false;
  std::string write_data;
  std::size_t oracle_draws = 0;

  std::vector<std::size_t> sizes;
  int reps = 0;
};

// Everything a run needs, after merging the config file and flags.
struct RunConfig {
  std::string command;
  std::uint64_t seed = 0;
  std::optional<CsvConfig> csv;
  std::string csv_path;
  DgpSpec dgp;
  EstimatorSpec estimator;
  SearchConfig search;
  BootstrapSettings bootstrap;
  double level = 0.95;
  int replications = 50;
  std::vector<double> study_epsilons{0.5};
  std::size_t oracle_draws = 10'000'000;
  std::vector<std::size_t> rate_sizes{1000, 8000};
  int rate_reps = 30;

  json to_json() const {
    json data;
    if (csv) {
      data = {{"source", "csv"}, {"path", csv_path}, {"columns", csv->to_json()}};
    } else {
      data = {{"source", "generated"}, {"dgp", dgp.to_json()}};
    }
    return {{"command", command},
            {"seed", seed},
            {"data", data},
            {"estimator", estimator.to_json()},
            {"search", search.to_json()},
            {"bootstrap", bootstrap.to_json()},
            {"level", level},
            {"study", {{"replications", replications}, {"epsilons", study_epsilons}, {"oracle_draws", oracle_draws}}},
            {"rate", {{"sizes", rate_sizes}, {"reps", rate_reps}}}};
  }
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

bool given(const CLI::App& app, const std::string& name) {
  // Options live on the root app; subcommands fall through to it.
  const CLI::App* root = &app;
  while (root->get_parent()) root = root->get_parent();
  const auto* opt = root->get_option_no_throw(name);
  return opt && opt->count() > 0;
}

RunConfig resolve(const CLI::App& app, const std::string& command, const Flags& f) {
  const json file = f.config_path.empty() ? json::object() : read_json_file(f.config_path);
  if (!file.is_object()) throw DataError("config file must hold a JSON object");
  RunConfig rc;
  rc.command = command;
  try {
    rc.seed = file.value("seed", std::uint64_t{0});
    rc.level = file.value("level", rc.level);
    if (file.contains("data") && file.contains("dgp")) {
      throw DataError("config names both a CSV data source and a generator; give exactly one");
    }
    if (file.contains("data")) {
      rc.csv = CsvConfig::from_json(file.at("data"));
      rc.csv_path = file.at("data").value("path", std::string{});
    }
    if (file.contains("dgp")) rc.dgp = DgpSpec::from_json(file.at("dgp"));
    if (file.contains("estimator")) rc.estimator = EstimatorSpec::from_json(file.at("estimator"));
    if (file.contains("search")) rc.search = SearchConfig::from_json(file.at("search"));
    if (file.contains("bootstrap")) rc.bootstrap = BootstrapSettings::from_json(file.at("bootstrap"));
    if (file.contains("study")) {
      const auto& s = file.at("study");
      rc.replications = s.value("replications", rc.replications);
      rc.study_epsilons = s.value("epsilons", rc.study_epsilons);
      rc.oracle_draws = s.value("oracle_draws", rc.oracle_draws);
    }
    if (file.contains("rate")) {
      rc.rate_sizes = file.at("rate").value("sizes", rc.rate_sizes);
      rc.rate_reps = file.at("rate").value("reps", rc.rate_reps);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid config file: ") + e.what());
  }

  // The simulate defaults are the desk-scale study; --full-scale switches to
  // the large design (hours of CPU).
  if (command == "simulate") {
    if (!file.contains("dgp") || !file.at("dgp").contains("n")) rc.dgp.n = 4000;
    if (!file.contains("estimator")) rc.estimator.method = NuisanceMethod::kOracle;
    if (!file.contains("bootstrap")) rc.bootstrap.draws = 200;
    if (f.full_scale) {
      rc.dgp.n = 20000;
      rc.replications = 100;
      rc.bootstrap.draws = 400;
      rc.bootstrap.refit = true;
      rc.estimator.method = NuisanceMethod::kKernel;
      rc.study_epsilons = {0.05, 0.1, 0.2, 0.5, 0.7, 0.9};
    }
  }

  if (given(app, "--seed")) rc.seed = f.seed;
  if (given(app, "--csv")) {
    if (file.contains("dgp")) throw DataError("--csv conflicts with the generator in the config file");
    rc.csv_path = f.csv;
    if (!rc.csv) rc.csv = CsvConfig{};
  }
  if (rc.csv) {
    if (given(app, "--outcome") || rc.csv->outcome.empty()) rc.csv->outcome = f.outcome;
    if (given(app, "--treatment") || rc.csv->treatment.empty()) rc.csv->treatment = f.treatment;
    if (given(app, "--covariates")) rc.csv->covariates = f.covariates;
    if (given(app, "--standardize")) rc.csv->standardize = true;
    if (given(app, "--no-intercept")) rc.csv->intercept = false;
    if (rc.csv_path.empty()) throw DataError("CSV data source needs a path (--csv or data.path)");
    if (rc.csv->covariates.empty()) throw DataError("CSV data source needs --covariates");
  } else if (given(app, "--covariates") || given(app, "--standardize")) {
    throw DataError("--covariates/--standardize apply to CSV input only");
  }
  if (given(app, "--n")) rc.dgp.n = f.n;
  if (given(app, "--nuisance")) rc.estimator.method = parse_nuisance_method(f.nuisance);
  if (given(app, "--bandwidth")) rc.estimator.bandwidth = f.bandwidth;
  if (given(app, "--population")) rc.search.population = f.population;
  if (given(app, "--generations")) rc.search.generations = f.generations;
  if (given(app, "--bootstrap")) rc.bootstrap.draws = f.draws;
  if (given(app, "--epsilon")) {
    rc.bootstrap.epsilon = f.epsilon;
    rc.study_epsilons = {f.epsilon};
  }
  if (given(app, "--epsilon-grid")) {
    rc.bootstrap.epsilon_grid = f.epsilon_grid;
    if (command == "simulate") rc.study_epsilons = f.epsilon_grid;
  }
  if (given(app, "--refit-nuisance")) rc.bootstrap.refit = true;
  if (given(app, "--level")) {
    rc.level = f.level;
    rc.bootstrap.level = f.level;
  }
  if (given(app, "--replications")) rc.replications = f.replications;
  if (given(app, "--oracle-draws")) rc.oracle_draws = f.oracle_draws;
  if (given(app, "--sizes")) rc.rate_sizes = f.sizes;
  if (given(app, "--reps")) rc.rate_reps = f.reps;

  // One master seed drives every stage unless the config pinned a stage seed.
  const bool pinned_dgp = file.contains("dgp") && file.at("dgp").contains("seed");
  const bool pinned_search = file.contains("search") && file.at("search").contains("seed");
  const bool pinned_boot = file.contains("bootstrap") && file.at("bootstrap").contains("seed");
  const bool pinned_cf = file.contains("estimator") && file.at("estimator").contains("cross_fit_seed");
  if (!pinned_dgp || given(app, "--seed")) rc.dgp.seed = rc.seed;
  if (!pinned_search || given(app, "--seed")) rc.search.seed = rc.seed;
  if (!pinned_boot || given(app, "--seed")) rc.bootstrap.seed = rc.seed;
  if (!pinned_cf || given(app, "--seed")) rc.estimator.cross_fit_seed = rc.seed;

  rc.dgp.validate();
  rc.estimator.validate();
  rc.search.validate();
  rc.bootstrap.validate();
  if (!(rc.level > 0.0 && rc.level < 1.0)) throw DataError("--level must lie in (0, 1)");
  if (rc.csv && rc.estimator.method == NuisanceMethod::kOracle) {
    throw DataError("the oracle nuisance method needs generated data (no CSV)");
  }
  return rc;
}

struct Prepared {
  Dataset data;
  NuisanceFit nf;
  std::optional<TrueNuisance> truth;
};

Prepared prepare(const RunConfig& rc) {
  if (rc.csv) {
    Dataset data = load_csv(rc.csv_path, *rc.csv);
    NuisanceFit nf = fit_nuisance(data, rc.estimator);
    return {std::move(data), std::move(nf), std::nullopt};
  }
  Dataset data = generate(rc.dgp);
  const TrueNuisance truth = rc.dgp.truth();
  NuisanceFit nf = fit_nuisance(data, rc.estimator, truth);
  return {std::move(data), std::move(nf), truth};
}

json coordinate_table(const Dataset& data, const Vector& values) {
  json out = json::object();
  for (std::size_t k = 0; k < data.dimension(); ++k) out[data.column_names()[k]] = values(static_cast<Eigen::Index>(k));
  return out;
}

json fit_result(const RunConfig& rc, const Prepared& p, SearchResult& found, const std::string& trace_csv) {
  found = search(p.data, p.nf, rc.search);
  const ValueReport value = value_ci(p.data, p.nf, found.regime(), rc.level);
  const std::vector<double> e(p.nf.e_hat.begin(), p.nf.e_hat.end());
  const OverlapReport overlap = validate_overlap(e);
  json result = {
      {"data",
       {{"n", p.data.size()},
        {"columns", p.data.column_names()},
        {"treated", p.data.treated_count()},
        {"intercept", p.data.has_intercept()}}},
      {"search", found.to_json()},
      {"beta_hat", coordinate_table(p.data, found.beta_hat)},
      {"value", value.to_json()},
      {"nuisance", p.nf.diagnostics.to_json()},
      {"overlap", {{"lower", overlap.lower}, {"upper", overlap.upper}, {"violations", overlap.count()}}},
  };
  if (!p.data.scaling().empty()) {
    result["beta_hat_raw_scale"] = coordinate_table(p.data, raw_scale_coefficients(p.data, found.regime()));
  }
  if (!trace_csv.empty()) {
    std::ofstream t(trace_csv);
    if (!t) throw DataError("cannot write trace CSV '" + trace_csv + "'");
    t << "generation,best_value\n" << std::setprecision(17);
    for (std::size_t g = 0; g < found.trace.size(); ++g) t << g << "," << found.trace[g] << "\n";
  }
  return result;
}

json bootstrap_json(const Dataset& data, const BootstrapReport& r) {
  json j = r.to_json();
  const auto sig = r.significant();
  json by_name = json::object();
  for (std::size_t k = 0; k < data.dimension(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    by_name[data.column_names()[k]] = {
        {"beta_hat", r.beta_hat(i)}, {"ci_lo", r.ci_lo(i)}, {"ci_hi", r.ci_hi(i)},
        {"length", r.length(i)},     {"significant", static_cast<bool>(sig[k])}};
  }
  j["coordinates"] = by_name;
  return j;
}

void write_draws(const std::string& path, const std::vector<const BootstrapReport*>& reports) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write draws CSV '" + path + "'");
  const bool several = reports.size() > 1;
  out << (several ? "epsilon,b,coordinate,value\n" : "b,coordinate,value\n") << std::setprecision(17);
  for (const auto* r : reports) {
    for (Eigen::Index b = 0; b < r->draws.rows(); ++b) {
      for (Eigen::Index k = 0; k < r->draws.cols(); ++k) {
        if (several) out << r->epsilon << ",";
        out << b << "," << k << "," << r->draws(b, k) << "\n";
      }
    }
  }
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void emit(const json& report, const std::string& path, std::ostream& out) {
  const auto problems = validate_report(report);
  if (!problems.empty()) throw std::logic_error("report failed validation: " + problems.front());
  const std::string text = report.dump(2) + "\n";
  if (path.empty()) {
    out << text;
    out.flush();
    return;
  }
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::ios_base::failure("cannot open '" + tmp.string() + "' for writing");
    f << text;
    f.flush();
    if (!f) throw std::ios_base::failure("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, target);
}

void print_error(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", {{"type", kind}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

std::vector<std::string> validate_report(const json& report) {
  std::vector<std::string> problems;
  if (!report.is_object()) return {"report is not an object"};
  auto need = [&](const json& obj, const char* key, json::value_t type, const std::string& where) {
    if (!obj.contains(key)) {
      problems.push_back(where + "missing '" + key + "'");
      return false;
    }
    const auto t = obj.at(key).type();
    const bool number_ok = type == json::value_t::number_float && obj.at(key).is_number();
    const bool unsigned_ok = type == json::value_t::number_integer && obj.at(key).is_number_integer();
    if (t != type && !number_ok && !unsigned_ok) {
      problems.push_back(where + "'" + key + "' has the wrong type");
      return false;
    }
    return true;
  };
  need(report, "schema_version", json::value_t::number_integer, "");
  if (report.contains("schema_version") && report["schema_version"] != kReportSchemaVersion)
    problems.push_back("unsupported schema_version");
  need(report, "command", json::value_t::string, "");
  need(report, "seed", json::value_t::number_integer, "");
  need(report, "config", json::value_t::object, "");
  if (!need(report, "result", json::value_t::object, "")) return problems;
  const json& r = report["result"];
  const std::string command = report.value("command", "");
  auto check_value = [&] {
    if (!need(r, "value", json::value_t::object, "result: ")) return;
    for (const char* k : {"value", "sigma2", "ci_lo", "ci_hi", "level"})
      need(r["value"], k, json::value_t::number_float, "result.value: ");
    need(r["value"], "n", json::value_t::number_integer, "result.value: ");
    if (need(r, "search", json::value_t::object, "result: ")) {
      need(r["search"], "beta_hat", json::value_t::array, "result.search: ");
      need(r["search"], "value_at_max", json::value_t::number_float, "result.search: ");
    }
  };
  auto check_boot = [&](const json& b, const std::string& where) {
    for (const char* k : {"ci_lo", "ci_hi", "length", "significant"}) need(b, k, json::value_t::array, where);
    need(b, "epsilon", json::value_t::number_float, where);
    need(b, "refit_nuisance", json::value_t::boolean, where);
    need(b, "draws", json::value_t::number_integer, where);
  };
  if (command == "fit") {
    check_value();
  } else if (command == "bootstrap-ci") {
    check_value();
    if (need(r, "bootstrap", json::value_t::object, "result: ")) check_boot(r["bootstrap"], "result.bootstrap: ");
  } else if (command == "sweep") {
    check_value();
    if (need(r, "sweep", json::value_t::object, "result: ")) {
      need(r["sweep"], "recommended_epsilon", json::value_t::number_float, "result.sweep: ");
      if (need(r["sweep"], "reports", json::value_t::array, "result.sweep: "))
        for (const auto& b : r["sweep"]["reports"]) check_boot(b, "result.sweep.reports[]: ");
    }
  } else if (command == "simulate") {
    if (!r.contains("data_csv")) {
      if (need(r, "summary", json::value_t::object, "result: ")) {
        need(r["summary"], "columns", json::value_t::array, "result.summary: ");
        need(r["summary"], "value_coverage", json::value_t::number_float, "result.summary: ");
      }
      need(r, "table", json::value_t::string, "result: ");
    }
  } else if (command == "rate") {
    if (need(r, "rate", json::value_t::object, "result: ")) {
      need(r["rate"], "slope", json::value_t::number_float, "result.rate: ");
      need(r["rate"], "median_error", json::value_t::array, "result.rate: ");
    }
  } else {
    problems.push_back("unknown command '" + command + "'");
  }
  return problems;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Optimal linear treatment regimes: AIPW value search and reshaped-bootstrap inference", "otr"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config_path, "JSON run config");
  app.add_option("--seed", f.seed, "Master seed");
  app.add_option("--threads", f.threads, "Worker threads (default: machine parallelism)");
  app.add_option("--out", f.out, "Report path (default: stdout)");
  app.add_flag("--deterministic", f.deterministic, "Omit timestamps so reruns are byte-identical");
  app.add_option("--csv", f.csv, "Input CSV");
  app.add_option("--outcome", f.outcome, "Outcome column");
  app.add_option("--treatment", f.treatment, "Treatment column");
  app.add_option("--covariates", f.covariates, "Covariate columns")->delimiter(',');
  app.add_flag("--standardize", f.standardize, "Standardize covariates");
  app.add_flag("--no-intercept", f.no_intercept, "Do not prepend the constant column");
  app.add_option("--n", f.n, "Generated sample size");
  app.add_option("--nuisance", f.nuisance, "logistic | kernel | oracle");
  app.add_option("--bandwidth", f.bandwidth, "Kernel bandwidth (0: rule of thumb)");
  app.add_option("--population", f.population, "GA population");
  app.add_option("--generations", f.generations, "GA generations");
  app.add_option("--bootstrap", f.draws, "Bootstrap draws B");
  app.add_option("--epsilon", f.epsilon, "Hessian step");
  app.add_option("--epsilon-grid", f.epsilon_grid, "Hessian steps for the sweep")->delimiter(',');
  app.add_flag("--refit-nuisance", f.refit, "Refit nuisance models on each resample");
  app.add_option("--level", f.level, "Confidence level");
  app.add_option("--draws-csv", f.draws_csv, "Write bootstrap draws to CSV");
  app.add_option("--trace-csv", f.trace_csv, "Write the search trace to CSV");
  app.add_option("--replications", f.replications, "Monte Carlo replications");
  app.add_flag("--full-scale", f.full_scale, "Large study design (hours)");
  app.add_option("--write-data", f.write_data, "simulate: write one generated dataset to CSV and stop");
  app.add_option("--oracle-draws", f.oracle_draws, "Draws for the true-value oracle");
  app.add_option("--sizes", f.sizes, "rate: sample sizes")->delimiter(',');
  app.add_option("--reps", f.reps, "rate: replications per size");

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo coverage study on the built-in generator");
  auto* fit = app.add_subcommand("fit", "Fit nuisance models, search the regime, value CI");
  auto* boot = app.add_subcommand("bootstrap-ci", "fit + reshaped-objective bootstrap CIs for beta");
  auto* sweep = app.add_subcommand("sweep", "bootstrap-ci over a grid of Hessian steps");
  auto* rate = app.add_subcommand("rate", "Convergence-rate diagnostic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    print_error(err, "usage_error", e.what());
    return kExitDataError;
  }

  const CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  const auto start = std::chrono::steady_clock::now();
  try {
    if (given(app, "--threads")) {
      if (f.threads < 1) throw DataError("--threads must be at least 1");
      set_thread_count(f.threads);
    }
    const RunConfig rc = resolve(app, command, f);
    json result;
    if (sub == simulate) {
      if (!f.write_data.empty()) {
        write_csv(generate(rc.dgp), f.write_data);
        result = {{"data_csv", f.write_data}, {"n", rc.dgp.n}};
      } else {
        StudyConfig sc;
        sc.dgp = rc.dgp;
        sc.replications = rc.replications;
        sc.search = rc.search;
        sc.estimator = rc.estimator;
        sc.bootstrap = rc.bootstrap;
        sc.epsilons = rc.study_epsilons;
        sc.oracle_draws = rc.oracle_draws;
        sc.value_level = rc.level;
        const McSummary s = run_coverage_study(sc);
        result = {{"summary", s.to_json()}, {"table", s.table()}};
        if (!f.out.empty()) out << s.table();
      }
    } else if (sub == rate) {
      const RateReport r = rate_diagnostic(rc.dgp, rc.rate_sizes, rc.rate_reps, rc.search, rc.estimator);
      result = {{"rate", r.to_json()}};
    } else {
      const Prepared p = prepare(rc);
      SearchResult found;
      result = fit_result(rc, p, found, f.trace_csv);
      if (sub == boot) {
        if (rc.bootstrap.draws < 1) throw DataError("--bootstrap must be at least 1");
        const BootstrapReport r =
            bootstrap_ci(p.data, p.nf, found.beta_hat, rc.bootstrap, rc.search, rc.estimator, p.truth);
        result["bootstrap"] = bootstrap_json(p.data, r);
        if (!f.draws_csv.empty()) write_draws(f.draws_csv, {&r});
      } else if (sub == sweep) {
        if (rc.bootstrap.draws < 1) throw DataError("--bootstrap must be at least 1");
        const SweepResult s =
            epsilon_sweep(p.data, p.nf, found.beta_hat, rc.bootstrap, rc.search, rc.estimator, p.truth);
        json reports = json::array();
        for (const auto& r : s.reports) reports.push_back(bootstrap_json(p.data, r));
        result["sweep"] = {{"reports", reports}, {"recommended_epsilon", s.recommended_epsilon()}};
        if (!f.draws_csv.empty()) {
          std::vector<const BootstrapReport*> ptrs;
          for (const auto& r : s.reports) ptrs.push_back(&r);
          write_draws(f.draws_csv, ptrs);
        }
      }
      (void)fit;
    }
    json report = {{"schema_version", kReportSchemaVersion},
                   {"command", command},
                   {"seed", rc.seed},
                   {"config", rc.to_json()},
                   {"result", result}};
    if (!f.deterministic) {
      report["generated_at"] = timestamp();
      report["elapsed_seconds"] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      report["threads"] = thread_count();
    }
    try {
      emit(report, f.out, out);
    } catch (const std::exception& e) {
      print_error(err, "report_error", e.what());
      return kExitReportError;
    }
    return kExitOk;
  } catch (const DataError& e) {
    print_error(err, e.kind(), e.what());
    return kExitDataError;
  } catch (const NumericalError& e) {
    print_error(err, e.kind(), e.what());
    return kExitNumericalError;
  } catch (const std::exception& e) {
    print_error(err, "internal_error", e.what());
    return kExitInternal;
  }
}

}  // namespace otr
