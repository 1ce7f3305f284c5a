// Tests for the synthetic panel generator and the Monte Carlo benchmark
// harness.  The realized-truth bookkeeping is checked against independent
// row scans of the generated panel, and determinism is checked bit for bit.
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "causalpanel/errors.hpp"
#include "causalpanel/simulate.hpp"
#include "doctest.h"
#include "test_support.hpp"

namespace cp = causalpanel;
using namespace test_support;

namespace {

cp::DgpSpec base_spec() {
  cp::DgpSpec spec;
  spec.seed = 11;
  spec.n_units = 200;
  spec.year_min = 1995;
  spec.year_max = 2004;
  spec.cohort_shares = {{1998, 0.25}, {2001, 0.2}};
  return spec;
}

// Independent scan: treated cells with an observed outcome, keyed by the
// year offset from the unit's adoption year.
std::map<int, std::int64_t> scan_cells(const cp::CohortPanel& panel) {
  std::map<int, std::int64_t> cells;
  for (std::int64_t r = 0; r < panel.n_rows(); ++r) {
    if (!panel.treated(r) || std::isnan(panel.outcome(r))) continue;
    const int g = panel.first_treated(panel.unit(r));
    ++cells[panel.year(r) - g];
  }
  return cells;
}

bool panels_identical(const cp::CohortPanel& a, const cp::CohortPanel& b) {
  if (a.n_rows() != b.n_rows() || a.n_units() != b.n_units()) return false;
  if (a.unit_ids() != b.unit_ids()) return false;
  for (std::int64_t r = 0; r < a.n_rows(); ++r) {
    if (a.unit(r) != b.unit(r) || a.year(r) != b.year(r) ||
        a.treated(r) != b.treated(r) || a.age(r) != b.age(r) ||
        a.gender(r) != b.gender(r)) {
      return false;
    }
    const double ya = a.outcome(r), yb = b.outcome(r);
    if (std::isnan(ya) != std::isnan(yb)) return false;
    if (!std::isnan(ya) && ya != yb) return false;
    for (std::size_t c = 0; c < a.covariate_names().size(); ++c) {
      if (a.covariate(r, c) != b.covariate(r, c)) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("zero planted effect yields exactly zero realized truth") {
  auto spec = base_spec();
  const auto data = cp::generate(spec);
  CHECK(data.truth.att == 0.0);
  REQUIRE(!data.truth.atet_by_event.empty());
  for (const auto& [e, value] : data.truth.atet_by_event) {
    CHECK(e >= 0);
    CHECK(value == 0.0);
  }
}

TEST_CASE("linear effects and cell counts match an independent panel scan") {
  auto spec = base_spec();
  spec.true_effect.constant = 0.4;
  spec.true_effect.slope = 0.1;
  spec.true_effect.overrides = {{2, -1.0}};
  spec.attrition = 0.15;
  spec.waves = {2002, 2004};
  const auto data = cp::generate(spec);

  // With a continuous outcome the per-cell effect depends only on the event
  // time, so every realized per-event mean equals the planted curve (up to
  // the rounding of summing the same constant and dividing back).
  for (const auto& [e, value] : data.truth.atet_by_event) {
    CHECK(value == doctest::Approx(spec.true_effect(e)).epsilon(1e-14));
  }

  const auto cells = scan_cells(data.panel);
  CHECK(cells == data.truth.cells_by_event);

  double weighted = 0.0;
  std::int64_t total = 0;
  for (const auto& [e, count] : cells) {
    weighted += spec.true_effect(e) * static_cast<double>(count);
    total += count;
  }
  REQUIRE(total > 0);
  CHECK(data.truth.att ==
        doctest::Approx(weighted / static_cast<double>(total))
            .epsilon(1e-12));
}

TEST_CASE("generation is a pure function of the spec") {
  auto spec = base_spec();
  spec.factor_rank = 2;
  spec.loading_adoption_correlation = 0.5;
  spec.selection_strength = 0.4;
  spec.trend_strength = 0.3;
  spec.attrition = 0.1;
  spec.covariate_effects = {{"x", 0.5}, {"age", 0.01}};

  const auto first = cp::generate(spec);
  const auto second = cp::generate(spec);
  CHECK(panels_identical(first.panel, second.panel));
  CHECK(cp::ground_truth_to_json(first.truth) ==
        cp::ground_truth_to_json(second.truth));

  auto reseeded = spec;
  reseeded.seed = 12;
  const auto third = cp::generate(reseeded);
  CHECK_FALSE(panels_identical(first.panel, third.panel));
}

TEST_CASE("binary outcomes live on the unit interval") {
  auto spec = base_spec();
  spec.outcome_kind = cp::OutcomeKind::Binary;
  spec.intercept = 0.4;
  spec.unit_sd = 0.1;
  spec.year_sd = 0.05;
  spec.true_effect.constant = 0.3;
  spec.attrition = 0.05;
  const auto data = cp::generate(spec);

  for (std::int64_t r = 0; r < data.panel.n_rows(); ++r) {
    const double y = data.panel.outcome(r);
    if (std::isnan(y)) continue;
    CHECK((y == 0.0 || y == 1.0));
  }
  // The realized truth is a difference of clamped probabilities.
  CHECK(data.truth.att > 0.1);
  CHECK(data.truth.att <= 0.3 + 1e-12);
  for (const auto& [e, value] : data.truth.atet_by_event) {
    (void)e;
    CHECK(value >= -1.0);
    CHECK(value <= 1.0);
  }
}

TEST_CASE("waves truncate unit histories at the assigned survey year") {
  auto spec = base_spec();
  spec.waves = {1999, 2004};
  const auto data = cp::generate(spec);

  std::map<int, int> units_by_last_year;
  std::int64_t expected_rows = 0;
  for (std::int32_t u = 0; u < data.panel.n_units(); ++u) {
    const auto last = data.panel.unit_rows_end(u) - 1;
    const int last_year = data.panel.year(last);
    ++units_by_last_year[last_year];
    // Histories are contiguous from the first panel year.
    const auto first = data.panel.unit_rows_begin(u);
    CHECK(data.panel.year(first) == spec.year_min);
    CHECK(data.panel.unit_rows_end(u) - first == last_year - spec.year_min + 1);
    expected_rows += last_year - spec.year_min + 1;
  }
  REQUIRE(units_by_last_year.size() == 2);
  CHECK(units_by_last_year.count(1999) == 1);
  CHECK(units_by_last_year.count(2004) == 1);
  CHECK(units_by_last_year[1999] > 0);
  CHECK(units_by_last_year[2004] > 0);
  CHECK(data.panel.n_rows() == expected_rows);
}

TEST_CASE("attrition hides roughly its share of outcomes") {
  auto spec = base_spec();
  spec.n_units = 300;
  spec.attrition = 0.3;
  const auto data = cp::generate(spec);
  std::int64_t missing = 0;
  for (std::int64_t r = 0; r < data.panel.n_rows(); ++r) {
    if (std::isnan(data.panel.outcome(r))) ++missing;
  }
  const double share =
      static_cast<double>(missing) / static_cast<double>(data.panel.n_rows());
  CHECK(share > 0.25);
  CHECK(share < 0.35);
}

TEST_CASE("impossible specs are refused") {
  const auto expect_bad = [](auto mutate) {
    auto spec = base_spec();
    mutate(spec);
    CHECK_THROWS_AS(cp::validate_dgp_spec(spec), cp::InfeasibleSpecError);
  };
  expect_bad([](cp::DgpSpec& s) { s.n_units = 0; });
  expect_bad([](cp::DgpSpec& s) { s.year_max = s.year_min; });
  expect_bad([](cp::DgpSpec& s) { s.cohort_shares[1999] = -0.1; });
  expect_bad([](cp::DgpSpec& s) {
    s.cohort_shares = {{1998, 0.7}, {2001, 0.5}};
  });
  expect_bad([](cp::DgpSpec& s) { s.cohort_shares = {{1995, 0.2}}; });
  expect_bad([](cp::DgpSpec& s) { s.cohort_shares = {{2010, 0.2}}; });
  expect_bad([](cp::DgpSpec& s) { s.noise_sd = -1.0; });
  expect_bad([](cp::DgpSpec& s) { s.factor_rank = 3; });
  expect_bad([](cp::DgpSpec& s) { s.loading_adoption_correlation = 1.5; });
  expect_bad([](cp::DgpSpec& s) { s.attrition = 1.0; });
  expect_bad([](cp::DgpSpec& s) { s.waves = {1980}; });
  expect_bad([](cp::DgpSpec& s) { s.covariate_effects["bogus"] = 1.0; });

  // generate() enforces the same contract.
  auto spec = base_spec();
  spec.n_units = -5;
  CHECK_THROWS_AS(cp::generate(spec), cp::InfeasibleSpecError);
}

TEST_CASE("spec JSON round-trips byte for byte and rejects unknown fields") {
  auto spec = base_spec();
  spec.true_effect.constant = -0.2;
  spec.true_effect.slope = 0.05;
  spec.true_effect.overrides = {{-1, 0.0}, {3, 0.7}};
  spec.outcome_kind = cp::OutcomeKind::Binary;
  spec.intercept = 0.3;
  spec.factor_rank = 1;
  spec.factor_scale = 0.8;
  spec.loading_adoption_correlation = -0.4;
  spec.selection_strength = 0.6;
  spec.selection_quadratic = true;
  spec.trend_strength = -0.3;
  spec.trend_quadratic = true;
  spec.covariate_effects = {{"x", 0.2}, {"gender", -0.1}};
  spec.waves = {2000, 2004};
  spec.attrition = 0.12;

  const std::string text = cp::dgp_spec_to_json(spec);
  const auto parsed = cp::parse_dgp_spec_json(text);
  CHECK(cp::dgp_spec_to_json(parsed) == text);
  CHECK(parsed.seed == spec.seed);
  CHECK(parsed.cohort_shares == spec.cohort_shares);
  CHECK(parsed.true_effect.overrides == spec.true_effect.overrides);
  CHECK(parsed.outcome_kind == cp::OutcomeKind::Binary);
  CHECK(parsed.covariate_effects == spec.covariate_effects);
  CHECK(parsed.waves == spec.waves);

  CHECK_THROWS_WITH_AS(cp::parse_dgp_spec_json(R"({"bogus": 1})"),
                       "unknown field 'bogus' in spec", cp::ParseError);
  CHECK_THROWS_AS(cp::parse_dgp_spec_json(R"({"outcome_kind": "weird"})"),
                  cp::ParseError);
  CHECK_THROWS_AS(cp::parse_dgp_spec_json("{nope"), cp::ParseError);
}

TEST_CASE("benchmark recovers a clean design and is thread invariant") {
  cp::BenchmarkRequest request;
  auto spec = base_spec();
  spec.n_units = 150;
  spec.year_min = 1995;
  spec.year_max = 2002;
  spec.cohort_shares = {{1998, 0.35}};
  spec.true_effect.constant = 0.5;
  spec.noise_sd = 0.3;
  request.specs = {{"clean", spec}};
  request.estimators = {cp::EstimatorKind::Did};
  request.replications = 6;
  request.did.window = {-2, 3};

  const auto report = cp::run_benchmark(request, 1);
  REQUIRE(report.runs.size() == 1);
  CHECK(report.runs[0].spec_name == "clean");
  CHECK(report.runs[0].failures == 0);
  CHECK(report.runs[0].replications == 6);
  REQUIRE(!report.rows.empty());
  for (const auto& row : report.rows) {
    CHECK(row.spec_name == "clean");
    CHECK(row.replicates == 6);
    CHECK(std::abs(row.mean_bias) < 0.25);
    CHECK(row.rmse < 0.4);
    CHECK(row.coverage >= 0.0);
    CHECK(row.coverage <= 1.0);
    CHECK(row.event_time >= -2);
    CHECK(row.event_time <= 3);
  }

  const auto threaded = cp::run_benchmark(request, 2);
  TempDir dir;
  const auto a = dir.file("a.csv");
  const auto b = dir.file("b.csv");
  cp::write_benchmark_csv(report, a);
  cp::write_benchmark_csv(threaded, b);
  const std::string text = slurp(a);
  CHECK(text == slurp(b));
  CHECK(text.rfind("spec,estimator,event_time,replicates,mean_bias,rmse,"
                   "coverage\n",
                   0) == 0);
  CHECK(text.find("clean,did,") != std::string::npos);
  CHECK(cp::benchmark_runs_to_json(report) ==
        cp::benchmark_runs_to_json(threaded));
  // Wall-clock time stays out of every written artifact.
  CHECK(text.find("wallclock") == std::string::npos);
  CHECK(cp::benchmark_runs_to_json(report).find("wallclock") ==
        std::string::npos);
}

TEST_CASE("benchmark counts replicates whose estimation throws") {
  cp::BenchmarkRequest request;
  auto spec = base_spec();
  spec.n_units = 10;
  spec.year_min = 1995;
  spec.year_max = 2000;
  spec.cohort_shares = {{1998, 0.3}};
  request.specs = {{"tiny", spec}};
  request.estimators = {cp::EstimatorKind::Ifect};
  request.replications = 4;
  request.ifect.fixed_rank = 8;  // exceeds the untreated grid every time
  request.ifect.bootstrap_reps = 0;

  const auto report = cp::run_benchmark(request, 1);
  REQUIRE(report.runs.size() == 1);
  CHECK(report.runs[0].estimator == cp::EstimatorKind::Ifect);
  CHECK(report.runs[0].failures == 4);
  CHECK(report.runs[0].selected_rank.empty());
  CHECK(report.rows.empty());
}
