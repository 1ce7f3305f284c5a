#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "causalpanel/did.hpp"
#include "causalpanel/factor_model.hpp"
#include "causalpanel/panel.hpp"

namespace causalpanel {

enum class OutcomeKind { Linear, Binary };

// Treatment effect as a function of event time: constant + slope * e,
// with optional exact per-event overrides.
struct TrueEffect {
  double constant = 0.0;
  double slope = 0.0;
  std::map<int, double> overrides;

  double operator()(int event_time) const {
    const auto found = overrides.find(event_time);
    if (found != overrides.end()) return found->second;
    return constant + slope * event_time;
  }
};

// Synthetic panel generator with every identification threat on a dial:
// unit/year effects always, optional interactive factors whose loadings tilt
// with adoption timing, covariate-driven selection into treatment, and
// covariate-dependent trends.  Outcomes are continuous or Bernoulli from a
// clamped linear probability.
struct DgpSpec {
  std::uint64_t seed = 0;
  int n_units = 1000;
  int year_min = 1993;
  int year_max = 2017;
  std::map<int, double> cohort_shares;  // adoption year -> population share
  TrueEffect true_effect;
  OutcomeKind outcome_kind = OutcomeKind::Linear;
  double intercept = 0.0;

  double unit_sd = 0.5;   // spread of unit effects
  double year_sd = 0.3;   // spread of year effects
  double noise_sd = 0.25; // idiosyncratic noise (LINEAR only)

  int factor_rank = 0;  // 0, 1 (linear-trend factor), or 2 (adds a drawn one)
  double factor_scale = 1.0;
  // Correlation between the first factor loading and (standardized)
  // adoption timing; the confounding channel two-way models cannot absorb.
  double loading_adoption_correlation = 0.0;

  // Treatment selection tilts on the unit covariate "x": the log-odds of
  // being a (some-cohort) adopter shift by selection_strength * h(x) with
  // h(x) = x or a standardized x^2, so a logistic propensity on x is exactly
  // right or exactly wrong.
  double selection_strength = 0.0;
  bool selection_quadratic = false;
  // An x-dependent trend in the untreated outcome, same h(x) choices; makes
  // the outcome regression of changes on x exactly right or exactly wrong.
  double trend_strength = 0.0;
  bool trend_quadratic = false;

  // Coefficients for covariates in the untreated outcome; keys among
  // "sales_ban", "smoking_ban", "x", "age", "gender".
  std::map<std::string, double> covariate_effects;

  // Retrospective design: each unit is assigned a survey wave uniformly and
  // contributes rows only up to its wave year.  Empty = balanced panel.
  std::vector<int> waves;
  double attrition = 0.0;  // chance an observed cell's outcome goes missing
};

// Exact effect implied by the realized draw, averaged over treated cells
// with observed outcomes.
struct GroundTruth {
  std::map<int, double> atet_by_event;
  std::map<int, std::int64_t> cells_by_event;
  double att = 0.0;

  double at(int event_time) const {
    const auto found = atet_by_event.find(event_time);
    return found == atet_by_event.end() ? 0.0 : found->second;
  }
};

struct SimulatedData {
  CohortPanel panel;
  GroundTruth truth;
};

void validate_dgp_spec(const DgpSpec& spec);  // throws InfeasibleSpecError

SimulatedData generate(const DgpSpec& spec);

// JSON (de)serialization for spec files and truth outputs; specs
// round-trip losslessly.
DgpSpec parse_dgp_spec_json(const std::string& text);
std::string dgp_spec_to_json(const DgpSpec& spec);
std::string ground_truth_to_json(const GroundTruth& truth);

// Monte Carlo harness: generates replicate panels (replicate r reseeds the
// spec deterministically from (seed, r)), runs the requested estimators, and
// accumulates bias, RMSE, and CI coverage of the realized truth by event
// time.  Wall-clock time is reported in the struct only, never in files, so
// written reports stay byte-identical across machines and thread counts.
enum class EstimatorKind { Did, Ifect };

std::string estimator_kind_name(EstimatorKind kind);

struct BenchmarkRequest {
  std::vector<std::pair<std::string, DgpSpec>> specs;
  std::vector<EstimatorKind> estimators;
  int replications = 200;
  DidConfig did;
  IfectConfig ifect;  // bootstrap_reps = 0 leaves IFEct coverage undefined
};

struct BenchmarkRow {
  std::string spec_name;
  EstimatorKind estimator = EstimatorKind::Did;
  int event_time = 0;
  std::int64_t replicates = 0;  // replicates contributing this event time
  double mean_bias = 0.0;
  double rmse = 0.0;
  double coverage = 0.0;  // NaN when no interval was available
};

struct BenchmarkRun {
  std::string spec_name;
  EstimatorKind estimator = EstimatorKind::Did;
  int replications = 0;
  int failures = 0;                     // replicates where estimation threw
  std::map<int, int> selected_rank;     // IFEct only: rank -> count
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;  // ordered by (spec, estimator, e)
  std::vector<BenchmarkRun> runs;
  double wallclock_seconds = 0.0;  // excluded from file outputs
};

BenchmarkReport run_benchmark(const BenchmarkRequest& request,
                              int threads = 1);

// spec,estimator,event_time,replicates,mean_bias,rmse,coverage
void write_benchmark_csv(const BenchmarkReport& report,
                         const std::string& path);
std::string benchmark_runs_to_json(const BenchmarkReport& report);

}  // namespace causalpanel
