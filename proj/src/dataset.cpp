#include "otr/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace otr {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  s = s.substr(first, last - first + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::optional<double> parse_number(const std::string& cell) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  if (begin != end && *begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || begin == end) return std::nullopt;
  return value;
}

}  // namespace

Dataset::Dataset(Matrix covariates, Eigen::VectorXi treatments, Vector outcomes,
                 std::vector<std::string> column_names, bool has_intercept,
                 std::vector<ColumnScaling> scaling)
    : covariates_(std::move(covariates)),
      treatments_(std::move(treatments)),
      outcomes_(std::move(outcomes)),
      column_names_(std::move(column_names)),
      has_intercept_(has_intercept),
      scaling_(std::move(scaling)) {
  const auto n = outcomes_.size();
  if (n < 1) throw DataError("dataset is empty");
  if (covariates_.rows() != n || treatments_.size() != n) {
    throw DataError("covariates, treatments and outcomes must have the same number of rows");
  }
  if (covariates_.cols() < 1) throw DataError("dataset has no covariate columns");
  if (column_names_.empty()) {
    for (Eigen::Index k = 0; k < covariates_.cols(); ++k) column_names_.push_back("x" + std::to_string(k));
  }
  if (static_cast<Eigen::Index>(column_names_.size()) != covariates_.cols()) {
    throw DataError("column_names must have one label per covariate column");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (treatments_(i) != 0 && treatments_(i) != 1) {
      throw DataError("non-binary treatment at row " + std::to_string(i + 1));
    }
    if (!std::isfinite(outcomes_(i))) {
      throw DataError("non-finite outcome at row " + std::to_string(i + 1));
    }
    for (Eigen::Index k = 0; k < covariates_.cols(); ++k) {
      if (!std::isfinite(covariates_(i, k))) {
        throw DataError("non-finite covariate at row " + std::to_string(i + 1) + ", column '" +
                        column_names_[k] + "'");
      }
    }
    if (has_intercept_ && covariates_(i, 0) != 1.0) {
      throw DataError("intercept column is not 1 at row " + std::to_string(i + 1));
    }
  }
}

std::size_t Dataset::treated_count() const {
  return static_cast<std::size_t>(treatments_.sum());
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  const auto m = static_cast<Eigen::Index>(rows.size());
  Matrix x(m, covariates_.cols());
  Eigen::VectorXi a(m);
  Vector y(m);
  for (Eigen::Index r = 0; r < m; ++r) {
    const auto i = static_cast<Eigen::Index>(rows[r]);
    x.row(r) = covariates_.row(i);
    a(r) = treatments_(i);
    y(r) = outcomes_(i);
  }
  return Dataset(std::move(x), std::move(a), std::move(y), column_names_, has_intercept_, scaling_);
}

RegimeParameter::RegimeParameter(Vector beta) : beta_(std::move(beta)) {
  if (beta_.size() < 1) throw DataError("regime parameter must have at least one coordinate");
  if (!beta_.allFinite() || std::abs(beta_.norm() - 1.0) > kNormTolerance) {
    throw DataError("regime parameter must have unit Euclidean norm");
  }
}

RegimeParameter RegimeParameter::normalized(const Vector& direction) {
  const double norm = direction.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw DataError("cannot normalize a zero or non-finite direction");
  }
  Vector unit = direction / norm;
  // One more pass absorbs the rounding of the first division.
  unit /= unit.norm();
  return RegimeParameter(std::move(unit));
}

int decide(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& beta) {
  if (x.size() != beta.size()) {
    throw DataError("decide: covariate dimension " + std::to_string(x.size()) +
                    " does not match coefficient dimension " + std::to_string(beta.size()));
  }
  return x.dot(beta) > 0.0 ? 1 : 0;
}

int decide(const Eigen::Ref<const Vector>& x, const RegimeParameter& beta) {
  return decide(x, Eigen::Ref<const Vector>(beta.beta()));
}

CsvConfig CsvConfig::from_json(const nlohmann::json& j) {
  CsvConfig c;
  try {
    c.outcome = j.at("outcome").get<std::string>();
    c.treatment = j.at("treatment").get<std::string>();
    c.covariates = j.at("covariates").get<std::vector<std::string>>();
    c.intercept = j.value("intercept", true);
    c.standardize = j.value("standardize", false);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("invalid data config: ") + e.what());
  }
  return c;
}

nlohmann::json CsvConfig::to_json() const {
  return {{"outcome", outcome},
          {"treatment", treatment},
          {"covariates", covariates},
          {"intercept", intercept},
          {"standardize", standardize}};
}

Dataset load_csv(const std::filesystem::path& path, const CsvConfig& config) {
  if (config.covariates.empty()) throw DataError("data config names no covariate columns");
  if (config.outcome.empty() || config.treatment.empty()) {
    throw DataError("data config must name one outcome and one treatment column");
  }
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw DataError("CSV file '" + path.string() + "' is empty");
  }
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_fields(line);
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t k = 0; k < header.size(); ++k) position.emplace(header[k], k);

  auto locate = [&](const std::string& name, const char* role) {
    const auto it = position.find(name);
    if (it == position.end()) {
      throw DataError(std::string("missing ") + role + " column '" + name + "' in '" +
                      path.string() + "'");
    }
    return it->second;
  };
  const std::size_t y_col = locate(config.outcome, "outcome");
  const std::size_t a_col = locate(config.treatment, "treatment");
  std::vector<std::size_t> x_cols;
  for (const auto& name : config.covariates) x_cols.push_back(locate(name, "covariate"));

  std::vector<double> y, x;
  std::vector<int> a;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    auto number = [&](std::size_t col) {
      const auto v = parse_number(fields[col]);
      if (!v) {
        throw DataError("non-numeric value '" + fields[col] + "' at row " + std::to_string(row) +
                        ", column '" + header[col] + "'");
      }
      if (!std::isfinite(*v)) {
        throw DataError("non-finite value at row " + std::to_string(row) + ", column '" +
                        header[col] + "'");
      }
      return *v;
    };
    y.push_back(number(y_col));
    const double treat = number(a_col);
    if (treat != 0.0 && treat != 1.0) {
      throw DataError("non-binary treatment at row " + std::to_string(row) + ", column '" +
                      header[a_col] + "'");
    }
    a.push_back(static_cast<int>(treat));
    for (const auto col : x_cols) x.push_back(number(col));
  }
  if (row == 0) throw DataError("CSV file '" + path.string() + "' has a header but no rows");

  const auto n = static_cast<Eigen::Index>(row);
  const auto p = static_cast<Eigen::Index>(x_cols.size());
  const Eigen::Index offset = config.intercept ? 1 : 0;
  Matrix covariates(n, p + offset);
  if (config.intercept) covariates.col(0).setOnes();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = 0; k < p; ++k) covariates(i, k + offset) = x[i * p + k];

  std::vector<std::string> names;
  if (config.intercept) names.emplace_back("(intercept)");
  names.insert(names.end(), config.covariates.begin(), config.covariates.end());

  std::vector<ColumnScaling> scaling;
  if (config.standardize) {
    if (n < 2) throw DataError("standardization needs at least two rows");
    for (Eigen::Index k = 0; k < p; ++k) {
      auto column = covariates.col(k + offset);
      const double mean = column.mean();
      const double sd = std::sqrt((column.array() - mean).square().sum() / static_cast<double>(n - 1));
      if (!(sd > 0.0)) {
        throw DataError("covariate column '" + config.covariates[k] +
                        "' is constant and cannot be standardized");
      }
      column = (column.array() - mean) / sd;
      scaling.push_back({config.covariates[k], mean, sd});
    }
  }

  return Dataset(std::move(covariates), Eigen::Map<const Eigen::VectorXi>(a.data(), n),
                 Eigen::Map<const Vector>(y.data(), n), std::move(names), config.intercept,
                 std::move(scaling));
}

void write_csv(const Dataset& data, const std::filesystem::path& path, int precision) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write CSV file '" + path.string() + "'");
  out.precision(precision);
  out << "y,a";
  for (const auto& name : data.column_names()) out << ',' << name;
  out << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out << data.outcomes()(r) << ',' << data.treatments()(r);
    for (Eigen::Index k = 0; k < data.covariates().cols(); ++k) out << ',' << data.covariates()(r, k);
    out << '\n';
  }
}

Vector raw_scale_coefficients(const Dataset& data, const RegimeParameter& beta) {
  if (data.scaling().empty()) return beta.beta();
  if (!data.has_intercept()) {
    throw DataError("raw-scale coefficients need an intercept column to absorb the centering");
  }
  Vector raw = beta.beta();
  for (std::size_t k = 0; k < data.scaling().size(); ++k) {
    const auto& s = data.scaling()[k];
    const auto col = static_cast<Eigen::Index>(k + 1);
    raw(col) = beta.beta()(col) / s.sd;
    raw(0) -= raw(col) * s.mean;
  }
  return raw / raw.norm();
}

OverlapReport validate_overlap(std::span<const double> e_hat, std::pair<double, double> bounds) {
  if (!(bounds.first > 0.0 && bounds.first < bounds.second && bounds.second < 1.0)) {
    throw DataError("overlap bounds must satisfy 0 < lower < upper < 1");
  }
  OverlapReport report;
  report.lower = bounds.first;
  report.upper = bounds.second;
  for (std::size_t i = 0; i < e_hat.size(); ++i) {
    if (!(e_hat[i] >= bounds.first && e_hat[i] <= bounds.second)) report.violations.push_back(i);
  }
  return report;
}

}  // namespace otr
