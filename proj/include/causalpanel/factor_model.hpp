#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "causalpanel/inference.hpp"
#include "causalpanel/panel.hpp"

namespace causalpanel {

// Additive unit and year effects plus a rank-r interactive component,
// with optional covariates: y ~ x'beta + alpha_i + xi_t + lambda_i'f_t.
// Fit by EM over the untreated observed cells (all rows of never-treated
// units, pre-adoption rows of treated units), so the fitted surface is a
// counterfactual for the treated cells.
struct FactorModel {
  int rank = 0;
  bool converged = false;  // EM hit the tolerance before the iteration cap
  int iterations = 0;
  double ssr = 0.0;  // squared residuals over the fitted cells
  std::vector<std::string> covariates;  // columns kept in the fit
  std::vector<std::string> rejected;    // columns dropped as collinear
  std::vector<std::string> warnings;
  Eigen::VectorXd beta;     // one per kept covariate
  std::vector<double> alpha;  // per panel unit; NaN when not identified
  std::vector<double> xi;     // per panel year, mean zero
  Eigen::MatrixXd lambda;     // n_units x rank; NaN rows when not identified
  Eigen::MatrixXd factors;    // n_years x rank, factors'factors / T = I
  int year_min = 0;           // year of xi[0] / factors row 0

  bool unit_identified(std::int32_t unit) const;
  // Counterfactual level at an observed row (x'beta + alpha + xi + lambda'f).
  double predict(const CohortPanel& panel, std::int64_t row) const;
};

struct FactorFitOptions {
  int rank = 0;
  std::vector<std::string> covariates;
  double em_tolerance = 1e-7;  // relative change in fitted values
  int max_iterations = 2000;
  // Cells excluded from the fit, e.g. a cross-validation holdout.
  std::vector<std::pair<std::int32_t, int>> holdout;  // (unit index, year)
};

// Throws MissingFactorYearError when some panel year has no untreated
// observed cell to pin its year effect (and factor loading) down.  An EM
// that runs out of iterations returns with converged = false.
FactorModel fit_factor_model(const CohortPanel& panel,
                             const FactorFitOptions& options);

struct IfectConfig {
  std::vector<std::string> covariates;
  int max_rank = 5;
  std::optional<int> fixed_rank;  // skip cross-validation when set
  int cv_rounds = 5;
  double cv_holdout_fraction = 0.10;
  double em_tolerance = 1e-7;
  int max_iterations = 2000;
  int bootstrap_reps = 200;  // 0 disables resampled standard errors
  std::uint64_t seed = 0;
  // Event-time ranges averaged into summary rows (with bootstrap inference
  // when enabled); a window covers whichever estimated event times it spans.
  std::vector<std::pair<int, int>> windows;
};

// Rank chosen by holdout prediction error: each round hides a fraction of
// the untreated cells (the same cells for every candidate rank), refits,
// and scores the hidden cells; the smallest rank wins ties.
struct RankSelection {
  int rank = 0;
  std::vector<double> mspe;  // indexed by candidate rank 0..max_rank
  std::int64_t scored_cells = 0;
};

RankSelection select_rank(const CohortPanel& panel, const IfectConfig& config);

// Differences between observed treated outcomes and the counterfactual
// surface, averaged by event time.  Negative event times average in-sample
// residuals over treated units' pre-adoption cells (a fit diagnostic).
struct ImputedCellEffects {
  double att = 0.0;  // average over all post-adoption treated cells
  std::int64_t post_cells = 0;
  struct Row {
    int event_time = 0;
    double estimate = 0.0;
    std::int64_t n_cells = 0;
  };
  std::vector<Row> by_event;  // ordered by event_time
  std::int64_t excluded_units = 0;  // treated units lacking usable pre rows
};

// Throws InsufficientPretreatmentError when no treated unit has the
// max(rank, 1) pre-adoption cells its loading estimate needs.
ImputedCellEffects impute_and_average(const CohortPanel& panel,
                                      const FactorModel& model);

struct IfectEffect {
  int event_time = 0;
  double estimate = 0.0;
  double std_error = 0.0;
  double p_value = 1.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::int64_t n_cells = 0;
};

struct IfectWindow {
  int e_min = 0;
  int e_max = 0;
  double estimate = 0.0;
  double std_error = 0.0;
  double p_value = 1.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  int n_events = 0;  // estimated event times the window covered
};

struct IfectResult {
  FactorModel model;
  RankSelection selection;  // mspe empty when the rank was fixed
  double att = 0.0;
  double att_std_error = 0.0;
  double att_p_value = 1.0;
  double att_ci_lo = 0.0;
  double att_ci_hi = 0.0;
  std::vector<IfectEffect> effects;
  std::vector<IfectWindow> windows;
  std::int64_t excluded_units = 0;
  int bootstrap_failures = 0;
};

// Full pipeline: rank selection (unless fixed), final fit, imputation, and
// a stratified cluster bootstrap for standard errors at the chosen rank.
// `scheme` groups units into resampling clusters (default: each unit its
// own cluster).
IfectResult run_ifect(const CohortPanel& panel, const IfectConfig& config,
                      const ClusterScheme& scheme = {}, int threads = 1);

// event_time,estimate,std_error,p_value,ci_lo,ci_hi,n_cells
void write_ifect_csv(const IfectResult& result, const std::string& path);

}  // namespace causalpanel
