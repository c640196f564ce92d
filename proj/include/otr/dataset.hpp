#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "otr/common.hpp"

namespace otr {

// Affine map applied to one covariate column: stored = (raw - mean) / sd.
struct ColumnScaling {
  std::string name;
  double mean = 0.0;
  double sd = 1.0;
};

// Observational sample (X, A, Y). Immutable once constructed; the constructor
// enforces matching sizes, binary treatments and finite values.
class Dataset {
 public:
  Dataset(Matrix covariates, Eigen::VectorXi treatments, Vector outcomes,
          std::vector<std::string> column_names, bool has_intercept,
          std::vector<ColumnScaling> scaling = {});

  std::size_t size() const { return static_cast<std::size_t>(outcomes_.size()); }
  std::size_t dimension() const { return static_cast<std::size_t>(covariates_.cols()); }

  const Matrix& covariates() const { return covariates_; }
  const Eigen::VectorXi& treatments() const { return treatments_; }
  const Vector& outcomes() const { return outcomes_; }
  const std::vector<std::string>& column_names() const { return column_names_; }
  bool has_intercept() const { return has_intercept_; }

  // Non-empty when covariates were standardized on load, one entry per
  // standardized column (intercept excluded).
  const std::vector<ColumnScaling>& scaling() const { return scaling_; }

  auto row(std::size_t i) const { return covariates_.row(static_cast<Eigen::Index>(i)); }

  std::size_t treated_count() const;

  // Rows selected by index, duplicates allowed (bootstrap resamples).
  Dataset subset(std::span<const std::size_t> rows) const;

 private:
  Matrix covariates_;
  Eigen::VectorXi treatments_;
  Vector outcomes_;
  std::vector<std::string> column_names_;
  bool has_intercept_;
  std::vector<ColumnScaling> scaling_;
};

// Unit-norm coefficient vector of a linear rule d(x) = I(x^T beta > 0).
class RegimeParameter {
 public:
  static constexpr double kNormTolerance = 1e-10;

  // Throws DataError unless |beta| == 1 within kNormTolerance.
  explicit RegimeParameter(Vector beta);

  // Scales a nonzero vector onto the sphere.
  static RegimeParameter normalized(const Vector& direction);

  const Vector& beta() const { return beta_; }
  std::size_t dimension() const { return static_cast<std::size_t>(beta_.size()); }
  double operator[](std::size_t k) const { return beta_(static_cast<Eigen::Index>(k)); }

 private:
  Vector beta_;
};

// 1 iff x^T beta > 0. The boundary x^T beta == 0 assigns control.
int decide(const Eigen::Ref<const Vector>& x, const RegimeParameter& beta);

// Raw-vector overload used where the direction is not normalized (the
// Hessian stencil). The rule is scale-free so the result is the same.
int decide(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& beta);

struct CsvConfig {
  std::string outcome;
  std::string treatment;
  std::vector<std::string> covariates;
  bool intercept = true;
  bool standardize = false;

  static CsvConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

Dataset load_csv(const std::filesystem::path& path, const CsvConfig& config);

// Writes outcome, treatment and every covariate column (intercept included)
// with the given number of significant digits.
void write_csv(const Dataset& data, const std::filesystem::path& path, int precision = 17);

// Maps coefficients fitted on standardized covariates back to the raw scale
// and renormalizes. Requires an intercept column when any column was scaled.
Vector raw_scale_coefficients(const Dataset& data, const RegimeParameter& beta);

struct OverlapReport {
  double lower = 0.01;
  double upper = 0.99;
  std::vector<std::size_t> violations;

  std::size_t count() const { return violations.size(); }
};

// Flags propensities outside [lower, upper]. Diagnostic only.
OverlapReport validate_overlap(std::span<const double> e_hat,
                               std::pair<double, double> bounds = {0.01, 0.99});

}  // namespace otr
