#include "causalpanel/simulate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

#include "causalpanel/csv.hpp"
#include "causalpanel/errors.hpp"
#include "causalpanel/event_study.hpp"
#include "causalpanel/rng.hpp"
#include "causalpanel/threading.hpp"

namespace causalpanel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::string unit_name(int u) {
  char buffer[16];
  std::snprintf(buffer, sizeof buffer, "u%06d", u);
  return buffer;
}

std::string region_name(int u) {
  char buffer[8];
  std::snprintf(buffer, sizeof buffer, "r%02d", u % 50);
  return buffer;
}

// Generation draws from its own stream family so that an estimator seeded
// with the same number never replays the generator's randomness.
std::uint64_t generation_master(std::uint64_t seed) {
  return splitmix64(seed ^ 0x53494D5F47454E31ULL);
}

double shape(double x, bool quadratic) {
  // Both shapes have mean 0 and variance 1 under a standard normal draw.
  return quadratic ? (x * x - 1.0) / std::sqrt(2.0) : x;
}

struct UnitDraw {
  double x = 0.0;
  int gender = 0;
  int age_at_start = 0;
  int sales_year = kNever;
  int smoking_year = kNever;
  double alpha = 0.0;
  std::int32_t cohort = kNever;
  double loading1_residual = 0.0;
  double loading2 = 0.0;
  int wave_year = 0;
};

}  // namespace

void validate_dgp_spec(const DgpSpec& spec) {
  if (spec.n_units <= 0) {
    throw InfeasibleSpecError("n_units must be positive");
  }
  if (spec.year_max <= spec.year_min) {
    throw InfeasibleSpecError("year range must contain at least two years");
  }
  double share_total = 0.0;
  for (const auto& [g, share] : spec.cohort_shares) {
    if (share < 0.0) {
      throw InfeasibleSpecError("cohort share for " + std::to_string(g) +
                                " is negative");
    }
    if (g <= spec.year_min || g > spec.year_max) {
      throw InfeasibleSpecError(
          "cohort year " + std::to_string(g) +
          " must lie after the first panel year and within the range");
    }
    share_total += share;
  }
  if (share_total > 1.0 + 1e-9) {
    throw InfeasibleSpecError("cohort shares sum to more than one");
  }
  if (spec.unit_sd < 0.0 || spec.year_sd < 0.0 || spec.noise_sd < 0.0) {
    throw InfeasibleSpecError("spread parameters must be non-negative");
  }
  if (spec.factor_rank < 0 || spec.factor_rank > 2) {
    throw InfeasibleSpecError("factor rank must be 0, 1, or 2");
  }
  if (std::abs(spec.loading_adoption_correlation) > 1.0) {
    throw InfeasibleSpecError(
        "loading-adoption correlation must lie in [-1, 1]");
  }
  if (spec.attrition < 0.0 || spec.attrition >= 1.0) {
    throw InfeasibleSpecError("attrition must lie in [0, 1)");
  }
  for (int wave : spec.waves) {
    if (wave < spec.year_min || wave > spec.year_max) {
      throw InfeasibleSpecError("wave year " + std::to_string(wave) +
                                " lies outside the panel range");
    }
  }
  for (const auto& [name, value] : spec.covariate_effects) {
    (void)value;
    if (name != "sales_ban" && name != "smoking_ban" && name != "x" &&
        name != "age" && name != "gender") {
      throw InfeasibleSpecError("unknown covariate effect '" + name + "'");
    }
  }
}

SimulatedData generate(const DgpSpec& spec) {
  validate_dgp_spec(spec);
  const std::uint64_t master = generation_master(spec.seed);
  const int n_years = spec.year_max - spec.year_min + 1;

  // Year-level draws: year effects and the optional second factor.  The
  // first factor is a standardized linear trend, the pattern additive year
  // effects cannot absorb once loadings differ across units.
  Rng year_rng = Rng::substream(master, 1);
  std::vector<double> xi(static_cast<std::size_t>(n_years));
  for (double& value : xi) value = year_rng.normal(0.0, spec.year_sd);
  std::vector<double> f1(static_cast<std::size_t>(n_years));
  {
    const double mean = (n_years - 1) / 2.0;
    double ss = 0.0;
    for (int t = 0; t < n_years; ++t) ss += (t - mean) * (t - mean);
    const double sd = std::sqrt(ss / n_years);
    for (int t = 0; t < n_years; ++t) {
      f1[static_cast<std::size_t>(t)] = (t - mean) / sd;
    }
  }
  std::vector<double> f2(static_cast<std::size_t>(n_years), 0.0);
  if (spec.factor_rank >= 2) {
    double mean = 0.0;
    for (double& value : f2) {
      value = year_rng.normal();
      mean += value;
    }
    mean /= n_years;
    double ss = 0.0;
    for (double value : f2) ss += (value - mean) * (value - mean);
    const double sd = std::sqrt(ss / n_years);
    for (double& value : f2) value = sd > 0.0 ? (value - mean) / sd : 0.0;
  }

  std::vector<std::pair<int, double>> cohorts(spec.cohort_shares.begin(),
                                              spec.cohort_shares.end());
  std::vector<double> cohort_weights;
  double treated_share = 0.0;
  for (const auto& [g, share] : cohorts) {
    (void)g;
    cohort_weights.push_back(share);
    treated_share += share;
  }

  // Pass 1: unit-level draws.  Loadings need the cross-unit distribution of
  // adoption timing, so rows are generated in a second pass.
  std::vector<UnitDraw> units(static_cast<std::size_t>(spec.n_units));
  for (int u = 0; u < spec.n_units; ++u) {
    Rng rng = Rng::substream(master, 10 + static_cast<std::uint64_t>(u));
    UnitDraw& draw = units[static_cast<std::size_t>(u)];
    draw.x = rng.normal();
    draw.gender = rng.bernoulli(0.5) ? 1 : 0;
    draw.age_at_start = rng.uniform_int(15, 70);
    draw.sales_year = rng.bernoulli(0.7)
                          ? rng.uniform_int(spec.year_min + 1, spec.year_max)
                          : kNever;
    draw.smoking_year = rng.bernoulli(0.7)
                            ? rng.uniform_int(spec.year_min + 1, spec.year_max)
                            : kNever;
    draw.alpha = rng.normal(0.0, spec.unit_sd);
    double p_treated = treated_share;
    if (spec.selection_strength != 0.0 && treated_share > 0.0 &&
        treated_share < 1.0) {
      const double tilt =
          spec.selection_strength * shape(draw.x, spec.selection_quadratic);
      p_treated =
          sigmoid(std::log(treated_share / (1.0 - treated_share)) + tilt);
    }
    const bool treated = rng.bernoulli(p_treated);
    const std::size_t pick =
        cohorts.empty() ? 0 : rng.categorical(cohort_weights);
    draw.cohort =
        (treated && !cohorts.empty()) ? cohorts[pick].first : kNever;
    draw.loading1_residual = rng.normal();
    draw.loading2 = rng.normal();
    draw.wave_year =
        spec.waves.empty()
            ? spec.year_max
            : spec.waves[rng.below(spec.waves.size())];
  }

  // Standardized adoption score; never-treated units sit past the horizon.
  std::vector<double> loading1(units.size(), 0.0);
  {
    double mean = 0.0;
    for (const UnitDraw& draw : units) {
      const double score =
          draw.cohort == kNever ? spec.year_max + 5.0 : draw.cohort;
      mean += score;
    }
    mean /= static_cast<double>(units.size());
    double ss = 0.0;
    for (const UnitDraw& draw : units) {
      const double score =
          draw.cohort == kNever ? spec.year_max + 5.0 : draw.cohort;
      ss += (score - mean) * (score - mean);
    }
    const double sd = std::sqrt(ss / static_cast<double>(units.size()));
    const double rho = spec.loading_adoption_correlation;
    const double residual_scale = std::sqrt(1.0 - rho * rho);
    for (std::size_t i = 0; i < units.size(); ++i) {
      const UnitDraw& draw = units[i];
      const double score =
          draw.cohort == kNever ? spec.year_max + 5.0 : draw.cohort;
      const double z = sd > 0.0 ? (score - mean) / sd : 0.0;
      loading1[i] = rho * z + residual_scale * draw.loading1_residual;
    }
  }

  const auto effect_of = [&](const std::string& name) {
    const auto found = spec.covariate_effects.find(name);
    return found == spec.covariate_effects.end() ? 0.0 : found->second;
  };
  const double beta_sales = effect_of("sales_ban");
  const double beta_smoking = effect_of("smoking_ban");
  const double beta_x = effect_of("x");
  const double beta_age = effect_of("age");
  const double beta_gender = effect_of("gender");

  PanelBuilder builder;
  builder.set_covariate_names({"sales_ban", "smoking_ban", "x"});
  PanelOptions options;
  options.outcome = spec.outcome_kind == OutcomeKind::Binary
                        ? OutcomeRequirement::Binary
                        : OutcomeRequirement::Any;

  GroundTruth truth;
  std::map<int, double> effect_sum;
  const double half_span = (n_years - 1) / 2.0;

  // Pass 2: rows, from per-unit outcome streams disjoint from pass 1.
  for (int u = 0; u < spec.n_units; ++u) {
    const UnitDraw& draw = units[static_cast<std::size_t>(u)];
    Rng rng = Rng::substream(
        master, 1000000000ULL + static_cast<std::uint64_t>(u));
    const std::string id = unit_name(u);
    const std::string region = region_name(u);
    if (draw.cohort != kNever) {
      options.first_treated_override[id] = draw.cohort;
    }
    for (int year = spec.year_min; year <= draw.wave_year; ++year) {
      const int t = year - spec.year_min;
      const bool treated_cell = draw.cohort != kNever && year >= draw.cohort;
      const double sales = year >= draw.sales_year ? 1.0 : 0.0;
      const double smoking = year >= draw.smoking_year ? 1.0 : 0.0;
      const int age = draw.age_at_start + t;
      const double trend_z = (t - half_span) / half_span;
      double base = spec.intercept + draw.alpha +
                    xi[static_cast<std::size_t>(t)] +
                    beta_sales * sales + beta_smoking * smoking +
                    beta_x * draw.x + beta_age * age +
                    beta_gender * draw.gender;
      if (spec.factor_rank >= 1) {
        base += spec.factor_scale * loading1[static_cast<std::size_t>(u)] *
                f1[static_cast<std::size_t>(t)];
      }
      if (spec.factor_rank >= 2) {
        base += spec.factor_scale * draw.loading2 *
                f2[static_cast<std::size_t>(t)];
      }
      if (spec.trend_strength != 0.0) {
        base += spec.trend_strength * shape(draw.x, spec.trend_quadratic) *
                trend_z;
      }

      double y = 0.0;
      double cell_truth = 0.0;
      if (spec.outcome_kind == OutcomeKind::Linear) {
        const double y0 = base + rng.normal(0.0, spec.noise_sd);
        if (treated_cell) {
          const int e = year - draw.cohort;
          cell_truth = spec.true_effect(e);
          y = y0 + cell_truth;
        } else {
          y = y0;
        }
      } else {
        const double p0 = std::clamp(base, 0.01, 0.99);
        double p = p0;
        if (treated_cell) {
          const int e = year - draw.cohort;
          const double p1 =
              std::clamp(base + spec.true_effect(e), 0.01, 0.99);
          cell_truth = p1 - p0;
          p = p1;
        }
        y = rng.uniform() < p ? 1.0 : 0.0;
      }
      bool missing = false;
      if (spec.attrition > 0.0) {
        missing = rng.uniform() < spec.attrition;
      }
      builder.add_row(id, region, year, missing ? kNaN : y, treated_cell,
                      age, draw.gender, {sales, smoking, draw.x});
      if (treated_cell && !missing) {
        const int e = year - draw.cohort;
        effect_sum[e] += cell_truth;
        ++truth.cells_by_event[e];
      }
    }
  }

  double att_sum = 0.0;
  std::int64_t att_cells = 0;
  for (const auto& [e, sum] : effect_sum) {
    const std::int64_t count = truth.cells_by_event[e];
    truth.atet_by_event[e] = sum / static_cast<double>(count);
    att_sum += sum;
    att_cells += count;
  }
  truth.att = att_cells > 0 ? att_sum / static_cast<double>(att_cells) : 0.0;

  SimulatedData data{builder.build(options), truth};
  return data;
}

namespace {

using nlohmann::json;

json true_effect_to_json(const TrueEffect& effect) {
  json j;
  j["constant"] = effect.constant;
  j["slope"] = effect.slope;
  json overrides = json::object();
  for (const auto& [e, value] : effect.overrides) {
    overrides[std::to_string(e)] = value;
  }
  j["overrides"] = overrides;
  return j;
}

TrueEffect true_effect_from_json(const json& j) {
  TrueEffect effect;
  effect.constant = j.value("constant", 0.0);
  effect.slope = j.value("slope", 0.0);
  if (j.contains("overrides")) {
    for (const auto& [key, value] : j.at("overrides").items()) {
      effect.overrides[std::stoi(key)] = value.get<double>();
    }
  }
  return effect;
}

}  // namespace

DgpSpec parse_dgp_spec_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ParseError(std::string("invalid spec JSON: ") + e.what());
  }
  static const std::set<std::string> known = {
      "seed",          "n_units",
      "year_min",      "year_max",
      "cohort_shares", "true_effect",
      "outcome_kind",  "intercept",
      "unit_sd",       "year_sd",
      "noise_sd",      "factor_rank",
      "factor_scale",  "loading_adoption_correlation",
      "selection_strength", "selection_quadratic",
      "trend_strength",     "trend_quadratic",
      "covariate_effects",  "waves",
      "attrition"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (known.find(key) == known.end()) {
      throw ParseError("unknown field '" + key + "' in spec");
    }
  }
  DgpSpec spec;
  spec.seed = j.value("seed", static_cast<std::uint64_t>(0));
  spec.n_units = j.value("n_units", spec.n_units);
  spec.year_min = j.value("year_min", spec.year_min);
  spec.year_max = j.value("year_max", spec.year_max);
  if (j.contains("cohort_shares")) {
    for (const auto& [key, value] : j.at("cohort_shares").items()) {
      spec.cohort_shares[std::stoi(key)] = value.get<double>();
    }
  }
  if (j.contains("true_effect")) {
    spec.true_effect = true_effect_from_json(j.at("true_effect"));
  }
  if (j.contains("outcome_kind")) {
    const std::string kind = j.at("outcome_kind").get<std::string>();
    if (kind == "linear") {
      spec.outcome_kind = OutcomeKind::Linear;
    } else if (kind == "binary") {
      spec.outcome_kind = OutcomeKind::Binary;
    } else {
      throw ParseError("outcome_kind must be 'linear' or 'binary'");
    }
  }
  spec.intercept = j.value("intercept", spec.intercept);
  spec.unit_sd = j.value("unit_sd", spec.unit_sd);
  spec.year_sd = j.value("year_sd", spec.year_sd);
  spec.noise_sd = j.value("noise_sd", spec.noise_sd);
  spec.factor_rank = j.value("factor_rank", spec.factor_rank);
  spec.factor_scale = j.value("factor_scale", spec.factor_scale);
  spec.loading_adoption_correlation =
      j.value("loading_adoption_correlation",
              spec.loading_adoption_correlation);
  spec.selection_strength =
      j.value("selection_strength", spec.selection_strength);
  spec.selection_quadratic =
      j.value("selection_quadratic", spec.selection_quadratic);
  spec.trend_strength = j.value("trend_strength", spec.trend_strength);
  spec.trend_quadratic = j.value("trend_quadratic", spec.trend_quadratic);
  if (j.contains("covariate_effects")) {
    for (const auto& [key, value] : j.at("covariate_effects").items()) {
      spec.covariate_effects[key] = value.get<double>();
    }
  }
  if (j.contains("waves")) {
    for (const auto& value : j.at("waves")) {
      spec.waves.push_back(value.get<int>());
    }
  }
  spec.attrition = j.value("attrition", spec.attrition);
  return spec;
}

std::string dgp_spec_to_json(const DgpSpec& spec) {
  json j;
  j["seed"] = spec.seed;
  j["n_units"] = spec.n_units;
  j["year_min"] = spec.year_min;
  j["year_max"] = spec.year_max;
  json shares = json::object();
  for (const auto& [g, share] : spec.cohort_shares) {
    shares[std::to_string(g)] = share;
  }
  j["cohort_shares"] = shares;
  j["true_effect"] = true_effect_to_json(spec.true_effect);
  j["outcome_kind"] =
      spec.outcome_kind == OutcomeKind::Binary ? "binary" : "linear";
  j["intercept"] = spec.intercept;
  j["unit_sd"] = spec.unit_sd;
  j["year_sd"] = spec.year_sd;
  j["noise_sd"] = spec.noise_sd;
  j["factor_rank"] = spec.factor_rank;
  j["factor_scale"] = spec.factor_scale;
  j["loading_adoption_correlation"] = spec.loading_adoption_correlation;
  j["selection_strength"] = spec.selection_strength;
  j["selection_quadratic"] = spec.selection_quadratic;
  j["trend_strength"] = spec.trend_strength;
  j["trend_quadratic"] = spec.trend_quadratic;
  json effects = json::object();
  for (const auto& [name, value] : spec.covariate_effects) {
    effects[name] = value;
  }
  j["covariate_effects"] = effects;
  j["waves"] = spec.waves;
  j["attrition"] = spec.attrition;
  return j.dump(2) + "\n";
}

std::string ground_truth_to_json(const GroundTruth& truth) {
  json j;
  j["att"] = truth.att;
  json atet = json::object();
  for (const auto& [e, value] : truth.atet_by_event) {
    atet[std::to_string(e)] = value;
  }
  j["atet_by_event"] = atet;
  json cells = json::object();
  for (const auto& [e, value] : truth.cells_by_event) {
    cells[std::to_string(e)] = value;
  }
  j["cells_by_event"] = cells;
  return j.dump(2) + "\n";
}

std::string estimator_kind_name(EstimatorKind kind) {
  return kind == EstimatorKind::Did ? "did" : "ifect";
}

BenchmarkReport run_benchmark(const BenchmarkRequest& request, int threads) {
  const auto started = std::chrono::steady_clock::now();
  if (request.specs.empty()) throw Error("benchmark needs at least one spec");
  if (request.estimators.empty()) {
    throw Error("benchmark needs at least one estimator");
  }
  if (request.replications <= 0) {
    throw Error("benchmark needs at least one replication");
  }

  BenchmarkReport report;
  for (const auto& [spec_name, spec] : request.specs) {
    for (const EstimatorKind estimator : request.estimators) {
      struct RepOutcome {
        bool failed = false;
        int rank = -1;
        // event time -> (bias, covered: 1/0, -1 = no interval)
        std::map<int, std::pair<double, int>> cells;
      };
      std::vector<RepOutcome> outcomes(
          static_cast<std::size_t>(request.replications));
      parallel_for(
          request.replications, threads, [&](std::int64_t r) {
            RepOutcome& slot = outcomes[static_cast<std::size_t>(r)];
            DgpSpec replicate = spec;
            replicate.seed = splitmix64(
                spec.seed ^ (0x9E3779B97F4A7C15ULL *
                             (static_cast<std::uint64_t>(r) + 1)));
            try {
              const SimulatedData data = generate(replicate);
              if (estimator == EstimatorKind::Did) {
                const CohortIndex index = build_cohort_index(data.panel);
                const DidResult did =
                    estimate_all(data.panel, index, request.did, 1);
                const EventStudyResult es = aggregate_event_study(
                    data.panel, index, did, request.did);
                for (const auto& point : es.points) {
                  const double target = data.truth.at(point.event_time);
                  const int covered =
                      (point.ci_lo <= target && target <= point.ci_hi) ? 1
                                                                       : 0;
                  slot.cells[point.event_time] = {point.estimate - target,
                                                  covered};
                }
              } else {
                const IfectResult res =
                    run_ifect(data.panel, request.ifect, {}, 1);
                slot.rank = res.selection.rank;
                for (const auto& effect : res.effects) {
                  const double target = data.truth.at(effect.event_time);
                  int covered = -1;
                  if (std::isfinite(effect.ci_lo) &&
                      std::isfinite(effect.ci_hi)) {
                    covered = (effect.ci_lo <= target &&
                               target <= effect.ci_hi)
                                  ? 1
                                  : 0;
                  }
                  slot.cells[effect.event_time] = {effect.estimate - target,
                                                   covered};
                }
              }
            } catch (const std::exception&) {
              slot.failed = true;
              slot.cells.clear();
            }
          });

      BenchmarkRun run;
      run.spec_name = spec_name;
      run.estimator = estimator;
      run.replications = request.replications;
      struct Acc {
        std::int64_t reps = 0;
        double bias_sum = 0.0;
        double sq_sum = 0.0;
        std::int64_t cover_known = 0;
        std::int64_t cover_hits = 0;
      };
      std::map<int, Acc> by_event;
      for (const RepOutcome& outcome : outcomes) {
        if (outcome.failed) {
          ++run.failures;
          continue;
        }
        if (estimator == EstimatorKind::Ifect && outcome.rank >= 0) {
          ++run.selected_rank[outcome.rank];
        }
        for (const auto& [e, cell] : outcome.cells) {
          Acc& acc = by_event[e];
          ++acc.reps;
          acc.bias_sum += cell.first;
          acc.sq_sum += cell.first * cell.first;
          if (cell.second >= 0) {
            ++acc.cover_known;
            acc.cover_hits += cell.second;
          }
        }
      }
      for (const auto& [e, acc] : by_event) {
        BenchmarkRow row;
        row.spec_name = spec_name;
        row.estimator = estimator;
        row.event_time = e;
        row.replicates = acc.reps;
        row.mean_bias = acc.bias_sum / static_cast<double>(acc.reps);
        row.rmse = std::sqrt(acc.sq_sum / static_cast<double>(acc.reps));
        row.coverage = acc.cover_known > 0
                           ? static_cast<double>(acc.cover_hits) /
                                 static_cast<double>(acc.cover_known)
                           : kNaN;
        report.rows.push_back(std::move(row));
      }
      report.runs.push_back(std::move(run));
    }
  }
  report.wallclock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    started)
          .count();
  return report;
}

void write_benchmark_csv(const BenchmarkReport& report,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "spec,estimator,event_time,replicates,mean_bias,rmse,coverage\n";
  for (const auto& row : report.rows) {
    out << csv_escape(row.spec_name) << ','
        << estimator_kind_name(row.estimator) << ',' << row.event_time << ','
        << row.replicates << ',' << format_double(row.mean_bias) << ','
        << format_double(row.rmse) << ',' << format_double(row.coverage)
        << '\n';
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

std::string benchmark_runs_to_json(const BenchmarkReport& report) {
  json runs = json::array();
  for (const auto& run : report.runs) {
    json j;
    j["spec"] = run.spec_name;
    j["estimator"] = estimator_kind_name(run.estimator);
    j["replications"] = run.replications;
    j["failures"] = run.failures;
    json ranks = json::object();
    for (const auto& [rank, count] : run.selected_rank) {
      ranks[std::to_string(rank)] = count;
    }
    j["selected_rank"] = ranks;
    runs.push_back(j);
  }
  json j;
  j["runs"] = runs;
  return j.dump(2) + "\n";
}

}  // namespace causalpanel
