#include "causalpanel/event_study.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "causalpanel/csv.hpp"
#include "causalpanel/errors.hpp"

namespace causalpanel {

namespace {

// Inference for sum-convention influence values: cluster the contributions,
// then treat the estimator error as the sum of independent cluster totals.
// `total_clusters` counts clusters over the whole panel so that centering
// uses the same population the asymptotics refer to; contributions are
// numerically near mean-zero, so the correction is tiny.
InferenceSummary influence_sum_se(double estimate,
                                  const InfluenceValues& values,
                                  const ClusterScheme& scheme,
                                  std::int64_t total_clusters) {
  std::map<std::int64_t, double> sums;
  for (const auto& [unit, value] : values) {
    sums[scheme.cluster(unit)] += value;
  }
  if (total_clusters < 2) {
    throw SingleClusterError("inference needs at least two clusters");
  }
  double total = 0.0;
  double total_sq = 0.0;
  for (const auto& [cluster, value] : sums) {
    (void)cluster;
    total += value;
    total_sq += value * value;
  }
  const double mean = total / static_cast<double>(total_clusters);
  double variance = total_sq - static_cast<double>(total_clusters) * mean * mean;
  if (variance < 0.0) variance = 0.0;
  return normal_inference(estimate, std::sqrt(variance));
}

std::int64_t count_clusters(const CohortPanel& panel,
                            const ClusterScheme& scheme) {
  std::set<std::int64_t> clusters;
  for (std::int32_t u = 0; u < panel.n_units(); ++u) {
    clusters.insert(scheme.cluster(u));
  }
  return static_cast<std::int64_t>(clusters.size());
}

}  // namespace

EventStudyResult aggregate_event_study(const CohortPanel& panel,
                                       const CohortIndex& index,
                                       const DidResult& did,
                                       const DidConfig& config,
                                       const ClusterScheme& scheme) {
  // Look up estimated and skipped cells by (g, t).
  std::map<std::pair<int, int>, const GroupTimeEffect*> by_cell;
  for (const auto& effect : did.effects) {
    by_cell[{effect.g, effect.t}] = &effect;
  }
  std::set<std::pair<int, int>> skipped_cells;
  for (const auto& skip : did.skipped) {
    skipped_cells.insert({skip.g, skip.t});
  }

  const std::int64_t total_clusters = count_clusters(panel, scheme);

  EventStudyResult result;
  for (int e = config.window.e_min; e <= config.window.e_max; ++e) {
    // Cohorts whose cell at this event time was attempted by the estimator.
    std::vector<const GroupTimeEffect*> cells;
    std::int64_t members_total = 0;
    std::vector<std::pair<int, std::int64_t>> member_counts;
    bool any_feasible = false;
    for (int g : index.groups) {
      const int t = g + e;
      if (!panel.years().contains(t)) continue;
      const int base =
          (config.base_period == BasePeriodPolicy::VaryingPre && t < g)
              ? t - 1
              : g - 1;
      if (base == t || !panel.years().contains(base)) continue;
      any_feasible = true;
      if (skipped_cells.count({g, t})) continue;
      const auto found = by_cell.find({g, t});
      if (found == by_cell.end()) {
        throw MissingCellError("cell (" + std::to_string(g) + ", " +
                               std::to_string(t) +
                               ") is neither estimated nor skipped");
      }
      cells.push_back(found->second);
      const auto members = index.members.find(g);
      const std::int64_t count =
          members == index.members.end()
              ? 0
              : static_cast<std::int64_t>(members->second.size());
      member_counts.emplace_back(g, count);
      members_total += count;
    }
    if (!any_feasible) {
      result.skipped.push_back({e, "no cohort observable at this event time"});
      continue;
    }
    if (cells.empty()) {
      result.skipped.push_back({e, "every feasible cell was skipped"});
      continue;
    }
    if (members_total <= 0) {
      throw WeightDegenerateError("contributing cohorts at event time " +
                                  std::to_string(e) + " have no members");
    }

    EventStudyPoint point;
    point.event_time = e;
    std::map<std::int64_t, double> phi;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const GroupTimeEffect& cell = *cells[c];
      const double weight = static_cast<double>(member_counts[c].second) /
                            static_cast<double>(members_total);
      point.cohort_weights.emplace_back(member_counts[c].first, weight);
      point.estimate += weight * cell.estimate;
      point.n_treated += cell.n_treated;
      const double cell_n = static_cast<double>(cell.influence.size());
      for (const auto& [unit, value] : cell.influence) {
        phi[unit] += weight * value / cell_n;
      }
    }
    point.influence.assign(phi.begin(), phi.end());
    const InferenceSummary summary =
        influence_sum_se(point.estimate, point.influence, scheme,
                         total_clusters);
    point.std_error = summary.std_error;
    point.p_value = summary.p_value;
    point.ci_lo = summary.ci_lo;
    point.ci_hi = summary.ci_hi;
    result.points.push_back(std::move(point));
  }
  return result;
}

WindowAverage window_average(const EventStudyResult& result,
                             const CohortPanel& panel, int e_min, int e_max,
                             const ClusterScheme& scheme) {
  if (e_min > e_max) {
    throw WindowOutOfRangeError("window [" + std::to_string(e_min) + ", " +
                                std::to_string(e_max) + "] is empty");
  }
  std::vector<const EventStudyPoint*> points;
  for (int e = e_min; e <= e_max; ++e) {
    const auto found = std::find_if(
        result.points.begin(), result.points.end(),
        [e](const EventStudyPoint& p) { return p.event_time == e; });
    if (found == result.points.end()) {
      throw WindowOutOfRangeError("event time " + std::to_string(e) +
                                  " has no estimate; window [" +
                                  std::to_string(e_min) + ", " +
                                  std::to_string(e_max) + "] is infeasible");
    }
    points.push_back(&*found);
  }

  WindowAverage window;
  window.e_min = e_min;
  window.e_max = e_max;
  const double k = static_cast<double>(points.size());
  std::map<std::int64_t, double> phi;
  for (const EventStudyPoint* point : points) {
    window.estimate += point->estimate / k;
    for (const auto& [unit, value] : point->influence) {
      phi[unit] += value / k;
    }
  }
  window.influence.assign(phi.begin(), phi.end());
  const InferenceSummary summary = influence_sum_se(
      window.estimate, window.influence, scheme, count_clusters(panel, scheme));
  window.std_error = summary.std_error;
  window.p_value = summary.p_value;
  window.ci_lo = summary.ci_lo;
  window.ci_hi = summary.ci_hi;
  return window;
}

void write_event_study_csv(const EventStudyResult& result,
                           const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "event_time,estimate,std_error,p_value,ci_lo,ci_hi,n_treated\n";
  for (const auto& p : result.points) {
    out << p.event_time << ',' << format_double(p.estimate) << ','
        << format_double(p.std_error) << ',' << format_double(p.p_value)
        << ',' << format_double(p.ci_lo) << ',' << format_double(p.ci_hi)
        << ',' << p.n_treated << '\n';
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

void write_windows_csv(const std::vector<WindowAverage>& windows,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "e_min,e_max,estimate,std_error,p_value,ci_lo,ci_hi\n";
  for (const auto& w : windows) {
    out << w.e_min << ',' << w.e_max << ',' << format_double(w.estimate)
        << ',' << format_double(w.std_error) << ','
        << format_double(w.p_value) << ',' << format_double(w.ci_lo) << ','
        << format_double(w.ci_hi) << '\n';
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

}  // namespace causalpanel
