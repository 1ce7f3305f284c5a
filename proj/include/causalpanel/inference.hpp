// Inference utilities shared by the estimators: influence-function standard
// errors with clustering, and a nonparametric cluster bootstrap that
// resamples units (never rows), optionally stratified by treatment status.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "causalpanel/panel.hpp"

namespace causalpanel {

// Influence contributions are (cluster key, value) pairs on the scale where
// the estimator equals its target plus the mean of the values; multiple
// entries with the same key are summed before the variance is formed.
using InfluenceValues = std::vector<std::pair<std::int64_t, double>>;

// Maps units to clusters; empty = every unit is its own cluster.
struct ClusterScheme {
  std::map<std::int64_t, std::int64_t> cluster_of;
  std::int64_t cluster(std::int64_t unit) const {
    const auto found = cluster_of.find(unit);
    return found == cluster_of.end() ? unit : found->second;
  }
};

struct InferenceSummary {
  double estimate = 0.0;
  double std_error = 0.0;
  double p_value = 1.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

// Two-sided normal p-value and 95% confidence interval from an estimate and
// its standard error.
InferenceSummary normal_inference(double estimate, double std_error);

// Clustered influence-function standard error: influence values are summed
// within clusters, and the estimator variance is the variance of the cluster
// sums divided by the number of clusters.  Requires at least two clusters.
InferenceSummary influence_se(double estimate, const InfluenceValues& values,
                              const ClusterScheme& scheme = {});

struct BootstrapSpec {
  int replicates = 200;
  std::uint64_t seed = 0;
  bool stratify_by_treatment = true;  // treated vs never-treated strata
  double max_failure_rate = 0.05;
};

struct BootstrapResult {
  std::vector<double> point;        // statistics on the original panel
  std::vector<double> std_error;    // bootstrap standard deviation
  std::vector<double> p_value;      // normal approximation, two-sided
  std::vector<double> ci_lo;        // percentile 2.5%
  std::vector<double> ci_hi;        // percentile 97.5%
  std::vector<int> replicates_used; // finite replicate values per statistic
  int failed_replicates = 0;
};

// Draws whole clusters of units with replacement (stratified so each
// replicate keeps the original number of treated and never-treated
// clusters), rebuilds the panel, and applies `statistics`.  Replicates where
// the estimator throws are counted; more than max_failure_rate of them
// aborts with TooManyFailedReplicates.  Replicate r uses an RNG substream
// derived from (seed, r), so results do not depend on the thread count.
BootstrapResult cluster_bootstrap(
    const std::function<std::vector<double>(const CohortPanel&)>& statistics,
    const CohortPanel& panel, const ClusterScheme& scheme,
    const BootstrapSpec& spec, int threads = 1);

}  // namespace causalpanel
