#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "otr/dataset.hpp"

using namespace otr;
namespace fs = std::filesystem;

namespace {

fs::path write_temp(const std::string& name, const std::string& body) {
  const fs::path p = fs::temp_directory_path() / ("otr_core_" + name);
  std::ofstream(p) << body;
  return p;
}

CsvConfig basic_config() {
  CsvConfig c;
  c.outcome = "y";
  c.treatment = "a";
  c.covariates = {"x1"};
  return c;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("load_csv parses a small file and prepends the intercept") {
  const auto p = write_temp("basic.csv", "y,a,x1\n1.5,0,2\n-1,1,3.25\n0,1,-4\n");
  const Dataset d = load_csv(p, basic_config());
  REQUIRE(d.size() == 3);
  REQUIRE(d.dimension() == 2);
  CHECK(d.covariates()(0, 0) == 1.0);
  CHECK(d.covariates()(1, 1) == 3.25);
  CHECK(d.covariates()(2, 1) == -4.0);
  CHECK(d.treatments()(1) == 1);
  CHECK(d.outcomes()(0) == 1.5);
  CHECK(d.column_names()[0] == "(intercept)");
  CHECK(d.treated_count() == 2);
}

TEST_CASE("load_csv rejects non-binary treatments with the row") {
  const auto p = write_temp("nonbinary.csv", "y,a,x1\n1,0,1\n2,2,1\n");
  const auto msg = message_of([&] { load_csv(p, basic_config()); });
  CHECK(msg.find("non-binary treatment at row 2") != std::string::npos);
}

TEST_CASE("load_csv error cases name the location") {
  SUBCASE("missing column") {
    const auto p = write_temp("missing.csv", "y,treat,x1\n1,0,1\n");
    CHECK(message_of([&] { load_csv(p, basic_config()); }).find("missing treatment column 'a'") !=
          std::string::npos);
  }
  SUBCASE("non-numeric cell") {
    const auto p = write_temp("text.csv", "y,a,x1\n1,0,1\n2,1,abc\n");
    const auto msg = message_of([&] { load_csv(p, basic_config()); });
    CHECK(msg.find("row 2") != std::string::npos);
    CHECK(msg.find("'x1'") != std::string::npos);
  }
  SUBCASE("empty file") {
    const auto p = write_temp("empty.csv", "");
    CHECK(message_of([&] { load_csv(p, basic_config()); }).find("empty") != std::string::npos);
  }
  SUBCASE("header only") {
    const auto p = write_temp("header.csv", "y,a,x1\n");
    CHECK_THROWS_AS(load_csv(p, basic_config()), DataError);
  }
}

TEST_CASE("standardization uses the sample sd") {
  const auto p = write_temp("std.csv", "y,a,x1\n0,0,1\n0,1,2\n0,0,3\n0,1,4\n0,0,5\n");
  CsvConfig c = basic_config();
  c.standardize = true;
  const Dataset d = load_csv(p, c);
  const double expect[] = {-1.2649110640673518, -0.6324555320336759, 0.0, 0.6324555320336759,
                           1.2649110640673518};
  for (int i = 0; i < 5; ++i) CHECK(d.covariates()(i, 1) == doctest::Approx(expect[i]).epsilon(1e-12));
  CHECK(d.covariates().col(1).mean() == doctest::Approx(0.0));
  REQUIRE(d.scaling().size() == 1);
  CHECK(d.scaling()[0].sd == doctest::Approx(std::sqrt(2.5)));
}

TEST_CASE("write_csv round-trips") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z;
  Matrix x(20, 3);
  Eigen::VectorXi a(20);
  Vector y(20);
  for (int i = 0; i < 20; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = z(rng) * 1e3;
    x(i, 2) = z(rng) * 1e-7;
    a(i) = i % 2;
    y(i) = z(rng);
  }
  const Dataset d(x, a, y, {"(intercept)", "u", "v"}, true);
  const auto p = fs::temp_directory_path() / "otr_core_roundtrip.csv";
  write_csv(d, p);
  CsvConfig c;
  c.outcome = "y";
  c.treatment = "a";
  c.covariates = {"u", "v"};
  const Dataset back = load_csv(p, c);
  CHECK(back.covariates() == d.covariates());
  CHECK(back.outcomes() == d.outcomes());
  CHECK(back.treatments() == d.treatments());
}

TEST_CASE("Dataset invariants") {
  Matrix x(2, 1);
  x << 1, 1;
  CHECK_THROWS_AS(Dataset(x, Eigen::VectorXi{{0, 3}}, Vector{{1, 2}}, {}, true), DataError);
  CHECK_THROWS_AS(Dataset(x, Eigen::VectorXi{{0, 1}}, Vector{{1, NAN}}, {}, true), DataError);
  CHECK_THROWS_AS(Dataset(x, Eigen::VectorXi{{0, 1}}, Vector{{1}}, {}, true), DataError);
  Matrix bad(2, 1);
  bad << 1, 2;
  CHECK_THROWS_AS(Dataset(bad, Eigen::VectorXi{{0, 1}}, Vector{{1, 2}}, {}, true), DataError);
}

TEST_CASE("RegimeParameter requires unit norm") {
  CHECK_NOTHROW(RegimeParameter(Vector{{0.6, 0.8}}));
  CHECK_THROWS_AS(RegimeParameter(Vector{{0.6, 0.81}}), DataError);
  CHECK(RegimeParameter::normalized(Vector{{3, 4}})[1] == doctest::Approx(0.8));
  CHECK_THROWS_AS(RegimeParameter::normalized(Vector{{0, 0}}), DataError);
}

TEST_CASE("decide examples") {
  CHECK(decide(Vector{{0.1}}, RegimeParameter(Vector{{1.0}})) == 1);
  CHECK(decide(Vector{{0.0, 0.0}}, RegimeParameter::normalized(Vector{{0.3, -2.0}})) == 0);
  CHECK(decide(Vector{{1.0, 0.5, -2.0}}, RegimeParameter::normalized(Vector{{0.0, 2.0, 1.0}})) == 0);
  CHECK_THROWS_AS(decide(Vector{{1.0, 2.0}}, RegimeParameter(Vector{{1.0}})), DataError);
}

TEST_CASE("decide is scale invariant and sign-distinguishing") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> s(0.01, 100.0);
  for (int rep = 0; rep < 500; ++rep) {
    Vector b(3), x(3);
    for (int k = 0; k < 3; ++k) {
      b(k) = z(rng);
      x(k) = z(rng);
    }
    const auto beta = RegimeParameter::normalized(b);
    CHECK(decide(x, RegimeParameter::normalized(s(rng) * b)) == decide(x, beta));
    CHECK(decide(x, Vector(s(rng) * b)) == decide(x, beta));
    if (x.dot(b) != 0.0) CHECK(decide(x, RegimeParameter::normalized(-b)) != decide(x, beta));
  }
}

TEST_CASE("validate_overlap examples") {
  const std::vector<double> ok{0.5, 0.5};
  CHECK(validate_overlap(ok).count() == 0);
  const std::vector<double> one{0.005, 0.5};
  const auto r = validate_overlap(one);
  REQUIRE(r.count() == 1);
  CHECK(r.violations[0] == 0);
  std::vector<double> grid(100);
  for (int i = 0; i < 100; ++i) grid[i] = i / 99.0;
  CHECK(validate_overlap(grid, {0.05, 0.95}).count() == 10);
  CHECK_THROWS_AS(validate_overlap(ok, {0.6, 0.4}), DataError);
}

TEST_CASE("raw_scale_coefficients undoes standardization") {
  const auto p = write_temp("raw.csv", "y,a,x1\n0,0,1\n0,1,2\n0,0,3\n0,1,4\n0,0,5\n");
  CsvConfig c = basic_config();
  c.standardize = true;
  const Dataset d = load_csv(p, c);
  const auto beta = RegimeParameter::normalized(Vector{{0.3, -0.7}});
  const Vector raw = raw_scale_coefficients(d, beta);
  CHECK(raw.norm() == doctest::Approx(1.0));
  // Same decisions on the raw covariates.
  for (double x1 = 1; x1 <= 5; x1 += 0.5) {
    const double z = (x1 - 3.0) / std::sqrt(2.5);
    CHECK(decide(Vector{{1.0, z}}, beta) == decide(Vector{{1.0, x1}}, raw));
  }
}

TEST_CASE("CsvConfig json round trip") {
  CsvConfig c = basic_config();
  c.standardize = true;
  const auto back = CsvConfig::from_json(c.to_json());
  CHECK(back.outcome == "y");
  CHECK(back.covariates == c.covariates);
  CHECK(back.standardize);
}
