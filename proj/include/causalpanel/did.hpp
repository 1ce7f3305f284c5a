// Group-time average treatment effects under staggered adoption.
//
// For cohort g at year t the estimator contrasts outcome changes of cohort-g
// units against untreated comparison units, combining an inverse-odds
// propensity weight with an outcome regression of the change on base-period
// covariates (doubly robust: consistent when either nuisance model is
// right).  Post-treatment effects difference against the last pre-adoption
// year g-1; pre-treatment placebo coefficients use one-year-apart short
// differences.  Each effect carries per-unit influence contributions so
// event-study aggregates inherit clustered standard errors.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "causalpanel/inference.hpp"
#include "causalpanel/panel.hpp"

namespace causalpanel {

enum class ControlGroup {
  NotYetTreated,  // never-treated plus cohorts adopting after t
  NeverTreated,   // never-treated units only
};

enum class BasePeriodPolicy {
  VaryingPre,         // pre: short differences vs t-1; post: anchored at g-1
  AnchorGMinus1Post,  // all periods differenced against g-1
};

struct EventWindow {
  int e_min = -10;
  int e_max = 5;
};

struct DidConfig {
  ControlGroup control_group = ControlGroup::NotYetTreated;
  std::vector<std::string> covariates;  // "age", "gender", or extra columns
  bool interact_covariates = false;     // add pairwise products
  BasePeriodPolicy base_period = BasePeriodPolicy::VaryingPre;
  double propensity_trim = 0.995;
  EventWindow window;
};

struct GroupTimeEffect {
  int g = 0;
  int t = 0;
  int event_time = 0;
  double estimate = 0.0;
  double std_error = 0.0;
  double p_value = 1.0;
  std::int64_t n_treated = 0;
  std::int64_t n_control = 0;
  // Per-unit influence contributions over the cell's estimation sample
  // (keys are panel unit indices); estimate ~ target + mean of values.
  InfluenceValues influence;
};

// Single (g, t) cell.  Throws NoTreatedUnits / EmptyComparisonSet when an
// arm is empty, PropensityOverflow on a common-support failure, and
// SingularDesign on collinear covariates.
GroupTimeEffect estimate_group_time(const CohortPanel& panel,
                                    const CohortIndex& index, int g, int t,
                                    const DidConfig& config);

struct SkippedCell {
  int g = 0;
  int t = 0;
  std::string reason;
};

struct DidResult {
  std::vector<GroupTimeEffect> effects;  // ordered by (g, t)
  std::vector<SkippedCell> skipped;
};

// All feasible (g, t) cells with event time inside the window.  Cells whose
// estimation is structurally impossible (no units observed in both periods,
// empty comparison arm, support or collinearity failures) are recorded in
// `skipped` with the reason instead of aborting the run.  Throws
// NoTreatedUnits when the panel has no treated cohorts at all.
DidResult estimate_all(const CohortPanel& panel, const CohortIndex& index,
                       const DidConfig& config, int threads = 1);

// CSV: g, t, event_time, estimate, std_error, p_value, n_treated, n_control.
void write_group_time_csv(const std::vector<GroupTimeEffect>& effects,
                          const std::string& path);

}  // namespace causalpanel
