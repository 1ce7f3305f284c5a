#include "causalpanel/inference.hpp"

#include <algorithm>
#include <cmath>

#include "causalpanel/errors.hpp"
#include "causalpanel/rng.hpp"
#include "causalpanel/threading.hpp"

namespace causalpanel {

namespace {

constexpr double kZ975 = 1.959963984540054;

double two_sided_p(double z) {
  return std::erfc(std::fabs(z) / std::sqrt(2.0));
}

// Linear-interpolation quantile over sorted values.
double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (sorted.size() == 1) return sorted[0];
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

InferenceSummary normal_inference(double estimate, double std_error) {
  InferenceSummary s;
  s.estimate = estimate;
  s.std_error = std_error;
  if (std_error > 0.0 && std::isfinite(std_error)) {
    s.p_value = two_sided_p(estimate / std_error);
    s.ci_lo = estimate - kZ975 * std_error;
    s.ci_hi = estimate + kZ975 * std_error;
  } else {
    s.p_value = estimate == 0.0 ? 1.0 : 0.0;
    s.ci_lo = estimate;
    s.ci_hi = estimate;
  }
  return s;
}

InferenceSummary influence_se(double estimate, const InfluenceValues& values,
                              const ClusterScheme& scheme) {
  std::map<std::int64_t, double> sums;
  for (const auto& [unit, value] : values) {
    sums[scheme.cluster(unit)] += value;
  }
  const std::size_t n_clusters = sums.size();
  if (n_clusters < 2) {
    throw SingleClusterError(
        "influence-function inference needs at least two clusters, got " +
        std::to_string(n_clusters));
  }
  double mean = 0.0;
  for (const auto& [cluster, sum] : sums) mean += sum;
  mean /= static_cast<double>(n_clusters);
  double variance = 0.0;
  for (const auto& [cluster, sum] : sums) {
    variance += (sum - mean) * (sum - mean);
  }
  variance /= static_cast<double>(n_clusters);
  const double se = std::sqrt(variance / static_cast<double>(n_clusters));
  return normal_inference(estimate, se);
}

BootstrapResult cluster_bootstrap(
    const std::function<std::vector<double>(const CohortPanel&)>& statistics,
    const CohortPanel& panel, const ClusterScheme& scheme,
    const BootstrapSpec& spec, int threads) {
  if (panel.n_units() == 0) {
    throw EmptyStratumError("panel has no units to resample");
  }

  // Group units into clusters; a cluster is "treated" when any member is.
  std::map<std::int64_t, std::vector<std::int32_t>> clusters;
  for (std::int32_t u = 0; u < panel.n_units(); ++u) {
    clusters[scheme.cluster(u)].push_back(u);
  }
  std::vector<std::vector<std::int32_t>> treated_stratum, never_stratum;
  for (const auto& [key, members] : clusters) {
    bool any_treated = false;
    for (std::int32_t u : members) {
      if (panel.first_treated(u) != kNever) {
        any_treated = true;
        break;
      }
    }
    if (any_treated || !spec.stratify_by_treatment) {
      treated_stratum.push_back(members);
    } else {
      never_stratum.push_back(members);
    }
  }
  std::vector<const std::vector<std::vector<std::int32_t>>*> strata;
  if (!treated_stratum.empty()) strata.push_back(&treated_stratum);
  if (!never_stratum.empty()) strata.push_back(&never_stratum);
  if (strata.empty()) throw EmptyStratumError("no resampling strata");

  BootstrapResult result;
  result.point = statistics(panel);
  const std::size_t n_stats = result.point.size();

  std::vector<std::vector<double>> replicate_values(
      static_cast<std::size_t>(spec.replicates));
  std::vector<std::uint8_t> failed(static_cast<std::size_t>(spec.replicates), 0);

  parallel_for(spec.replicates, threads, [&](std::int64_t r) {
    Rng rng = Rng::substream(spec.seed, static_cast<std::uint64_t>(r));
    std::vector<std::int32_t> keep;
    std::vector<std::string> rename;
    keep.reserve(static_cast<std::size_t>(panel.n_units()));
    rename.reserve(static_cast<std::size_t>(panel.n_units()));
    int draw_ordinal = 0;
    for (const auto* stratum : strata) {
      const std::size_t size = stratum->size();
      for (std::size_t k = 0; k < size; ++k) {
        const auto& members =
            (*stratum)[static_cast<std::size_t>(rng.below(size))];
        ++draw_ordinal;
        for (std::int32_t u : members) {
          keep.push_back(u);
          rename.push_back(panel.unit_ids()[u] + "#" +
                           std::to_string(draw_ordinal));
        }
      }
    }
    try {
      const CohortPanel resampled = panel.subset_units(keep, &rename);
      std::vector<double> stats = statistics(resampled);
      if (stats.size() != n_stats) throw Error("statistic length changed");
      replicate_values[static_cast<std::size_t>(r)] = std::move(stats);
    } catch (const std::exception&) {
      failed[static_cast<std::size_t>(r)] = 1;
    }
  });

  for (auto flag : failed) result.failed_replicates += flag;
  if (result.failed_replicates >
      spec.max_failure_rate * static_cast<double>(spec.replicates)) {
    throw TooManyFailedReplicatesError(
        std::to_string(result.failed_replicates) + " of " +
        std::to_string(spec.replicates) + " bootstrap replicates failed");
  }

  result.std_error.assign(n_stats, std::numeric_limits<double>::quiet_NaN());
  result.p_value.assign(n_stats, std::numeric_limits<double>::quiet_NaN());
  result.ci_lo.assign(n_stats, std::numeric_limits<double>::quiet_NaN());
  result.ci_hi.assign(n_stats, std::numeric_limits<double>::quiet_NaN());
  result.replicates_used.assign(n_stats, 0);

  for (std::size_t s = 0; s < n_stats; ++s) {
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(spec.replicates));
    for (int r = 0; r < spec.replicates; ++r) {
      const auto& stats = replicate_values[static_cast<std::size_t>(r)];
      if (stats.size() == n_stats && std::isfinite(stats[s])) {
        values.push_back(stats[s]);
      }
    }
    result.replicates_used[s] = static_cast<int>(values.size());
    if (values.size() >= 2) {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double ss = 0.0;
      for (double v : values) ss += (v - mean) * (v - mean);
      const double sd = std::sqrt(ss / (static_cast<double>(values.size()) - 1.0));
      result.std_error[s] = sd;
      const InferenceSummary normal = normal_inference(result.point[s], sd);
      result.p_value[s] = normal.p_value;
      std::sort(values.begin(), values.end());
      result.ci_lo[s] = quantile_sorted(values, 0.025);
      result.ci_hi[s] = quantile_sorted(values, 0.975);
    }
  }
  return result;
}

}  // namespace causalpanel
