#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "causalpanel/did.hpp"
#include "causalpanel/inference.hpp"
#include "causalpanel/panel.hpp"

namespace causalpanel {

// One event-time coefficient: a cohort-share weighted average of the
// group-time effects at the same relative time.
struct EventStudyPoint {
  int event_time = 0;
  double estimate = 0.0;
  double std_error = 0.0;
  double p_value = 1.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::int64_t n_treated = 0;  // treated-arm sizes summed over cells
  // (cohort year, weight) pairs; weights are cohort population shares among
  // the cohorts contributing at this event time and sum to one.
  std::vector<std::pair<int, double>> cohort_weights;
  // Per-unit influence contributions: estimate ~ target + SUM of values.
  // (Group-time cells use the mean convention; here each cell's values are
  // already divided by its sample size before weighting, so sums apply.)
  InfluenceValues influence;
};

struct SkippedEventTime {
  int event_time = 0;
  std::string reason;
};

struct EventStudyResult {
  std::vector<EventStudyPoint> points;  // ordered by event_time
  std::vector<SkippedEventTime> skipped;
};

// Combines estimated cells into event-time coefficients.  `config` must be
// the configuration the cells were estimated under; it defines which cells
// were attempted, so that a cell absent from both the estimates and the
// skip log raises MissingCellError instead of being silently dropped.
// Event times where every feasible cell was skipped are reported in
// `skipped`.  Throws WeightDegenerateError if contributing cohorts carry no
// members.
EventStudyResult aggregate_event_study(const CohortPanel& panel,
                                       const CohortIndex& index,
                                       const DidResult& did,
                                       const DidConfig& config,
                                       const ClusterScheme& scheme = {});

// Simple average of the event-time coefficients over [e_min, e_max], with
// inference from the averaged influence contributions.  Every event time in
// the window must be present in `result` (WindowOutOfRangeError otherwise).
struct WindowAverage {
  int e_min = 0;
  int e_max = 0;
  double estimate = 0.0;
  double std_error = 0.0;
  double p_value = 1.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  InfluenceValues influence;  // sum convention, as in EventStudyPoint
};

WindowAverage window_average(const EventStudyResult& result,
                             const CohortPanel& panel, int e_min, int e_max,
                             const ClusterScheme& scheme = {});

// event_time,estimate,std_error,p_value,ci_lo,ci_hi,n_treated
void write_event_study_csv(const EventStudyResult& result,
                           const std::string& path);

// e_min,e_max,estimate,std_error,p_value,ci_lo,ci_hi
void write_windows_csv(const std::vector<WindowAverage>& windows,
                       const std::string& path);

}  // namespace causalpanel
