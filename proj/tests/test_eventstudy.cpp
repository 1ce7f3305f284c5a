// Tests for event-study aggregation of group-time effects.  The oracle
// rebuilds every coefficient as an explicitly weighted sum of per-cell
// estimates (weights = cohort population shares among contributing cohorts),
// and the inference identities are checked against the cell layer.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "causalpanel/did.hpp"
#include "causalpanel/errors.hpp"
#include "causalpanel/event_study.hpp"
#include "causalpanel/panel.hpp"
#include "doctest.h"
#include "test_support.hpp"

namespace cp = causalpanel;
using namespace test_support;

namespace {

struct UnitSpec {
  std::string id;
  int cohort = cp::kNever;
  std::function<double(int)> outcome;
};

cp::CohortPanel build_panel(const std::vector<UnitSpec>& units, int year_lo,
                            int year_hi) {
  cp::PanelBuilder builder;
  for (const auto& u : units) {
    add_unit(builder, u.id, "R", year_lo, year_hi, u.cohort, u.outcome);
  }
  cp::PanelOptions options;
  options.check_staggered = false;
  return builder.build(options);
}

struct MiniRng {
  std::uint64_t s;
  explicit MiniRng(std::uint64_t seed) : s(seed * 0x9E3779B97F4A7C15ULL + 1) {}
  double uniform() {
    s ^= s << 13;
    s ^= s >> 7;
    s ^= s << 17;
    return static_cast<double>(s >> 11) * 0x1.0p-53;
  }
  double normal() {
    const double u = std::max(uniform(), 1e-16);
    return std::sqrt(-2.0 * std::log(u)) *
           std::cos(6.283185307179586 * uniform());
  }
};

// A noisy three-cohort fixture with enough never-treated controls.
std::vector<UnitSpec> noisy_units(std::uint64_t seed) {
  MiniRng rng(seed);
  std::vector<UnitSpec> units;
  for (int i = 0; i < 36; ++i) {
    int cohort = cp::kNever;
    if (i % 4 == 0) cohort = 2003;       // 9 members
    else if (i % 6 == 1) cohort = 2005;  // 6 members
    const double a = rng.normal();
    const double b = 0.05 * rng.normal();
    const double effect = 0.3 + 0.1 * rng.normal();
    units.push_back({"u" + std::to_string(i), cohort,
                     [a, b, effect, cohort](int y) {
                       double v = a + b * (y - 2000) +
                                  0.03 * ((y * 31 + 7) % 5);
                       if (cohort != cp::kNever && y >= cohort) {
                         v += effect * (1 + 0.2 * (y - cohort));
                       }
                       return v;
                     }});
  }
  return units;
}

}  // namespace

TEST_CASE("event-time coefficients are cohort-share weighted cell averages") {
  const auto panel = build_panel(noisy_units(11), 2000, 2008);
  const auto index = cp::build_cohort_index(panel);
  cp::DidConfig config;
  config.window = {-4, 3};

  const auto did = cp::estimate_all(panel, index, config, 1);
  REQUIRE(did.skipped.empty());
  const auto study = cp::aggregate_event_study(panel, index, did, config);

  // Oracle: for each event time, find the feasible cohorts, weight their
  // cell estimates by cohort member counts, renormalized over contributors.
  std::map<std::pair<int, int>, double> cell_estimate;
  for (const auto& e : did.effects) cell_estimate[{e.g, e.t}] = e.estimate;

  std::set<int> seen;
  for (const auto& point : study.points) {
    seen.insert(point.event_time);
    double want = 0, weight_total = 0, want_weight_sum = 0;
    std::int64_t members_total = 0;
    for (int g : index.groups) {
      const int t = g + point.event_time;
      if (!panel.years().contains(t)) continue;
      const int base = point.event_time < 0 ? t - 1 : g - 1;
      if (!panel.years().contains(base)) continue;
      members_total += static_cast<std::int64_t>(index.members.at(g).size());
    }
    for (int g : index.groups) {
      const int t = g + point.event_time;
      const auto found = cell_estimate.find({g, t});
      if (found == cell_estimate.end()) continue;
      const double w = static_cast<double>(index.members.at(g).size()) /
                       static_cast<double>(members_total);
      want += w * found->second;
      weight_total += w;
    }
    CHECK(weight_total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(point.estimate == doctest::Approx(want).epsilon(1e-12));

    // Reported weights match and sum to one.
    for (const auto& [g, w] : point.cohort_weights) want_weight_sum += w;
    CHECK(want_weight_sum == doctest::Approx(1.0).epsilon(1e-12));

    // Influence contributions are near mean-zero in sample and produce a
    // positive standard error on this noisy fixture.
    double sum = 0;
    for (const auto& [unit, value] : point.influence) sum += value;
    CHECK(std::abs(sum) < 1e-8);
    CHECK(point.std_error > 0.0);
  }

  // Every event time in the window appears exactly once (none skipped on
  // this fixture: cohorts 2003 and 2005 both fit e in [-4, 3] except where
  // the year range truncates, and even then the other cohort contributes).
  for (int e = -4; e <= 3; ++e) CHECK(seen.count(e) == 1);
  CHECK(study.skipped.empty());
}

TEST_CASE("single-cohort aggregation is the identity") {
  MiniRng rng(5);
  std::vector<UnitSpec> units;
  for (int i = 0; i < 14; ++i) {
    const int cohort = i < 5 ? 2004 : cp::kNever;
    const double a = rng.normal(), jump = 0.4 + 0.2 * rng.normal();
    units.push_back({"u" + std::to_string(i), cohort,
                     [a, jump, cohort](int y) {
                       return a + 0.02 * y +
                              ((cohort != cp::kNever && y >= cohort) ? jump
                                                                     : 0.0);
                     }});
  }
  const auto panel = build_panel(units, 2000, 2007);
  const auto index = cp::build_cohort_index(panel);
  cp::DidConfig config;
  config.window = {-2, 2};
  const auto did = cp::estimate_all(panel, index, config, 1);
  const auto study = cp::aggregate_event_study(panel, index, did, config);

  REQUIRE(study.points.size() == 5);
  for (const auto& point : study.points) {
    const auto cell = std::find_if(
        did.effects.begin(), did.effects.end(),
        [&](const cp::GroupTimeEffect& c) {
          return c.t - c.g == point.event_time;
        });
    REQUIRE(cell != did.effects.end());
    CHECK(point.estimate == doctest::Approx(cell->estimate).epsilon(1e-13));
    // With one cohort the sum-convention SE equals the cell's clustered SE.
    CHECK(point.std_error == doctest::Approx(cell->std_error).epsilon(1e-12));
    CHECK(point.n_treated == cell->n_treated);
    REQUIRE(point.cohort_weights.size() == 1);
    CHECK(point.cohort_weights[0].first == 2004);
    CHECK(point.cohort_weights[0].second == 1.0);
  }
}

TEST_CASE("equal cohorts average their effects exactly") {
  // Cohort 2004 shifts by -0.02, cohort 2006 by -0.04, controls are flat;
  // equal cohort sizes make the e=0 coefficient exactly the midpoint.
  std::vector<UnitSpec> units;
  for (int i = 0; i < 3; ++i) {
    units.push_back({"a" + std::to_string(i), 2004,
                     [](int y) { return y >= 2004 ? -0.02 : 0.0; }});
    units.push_back({"b" + std::to_string(i), 2006,
                     [](int y) { return y >= 2006 ? -0.04 : 0.0; }});
    units.push_back({"n" + std::to_string(i), cp::kNever,
                     [](int) { return 0.0; }});
  }
  const auto panel = build_panel(units, 2000, 2008);
  const auto index = cp::build_cohort_index(panel);
  cp::DidConfig config;
  config.window = {-1, 1};
  const auto did = cp::estimate_all(panel, index, config, 1);
  const auto study = cp::aggregate_event_study(panel, index, did, config);

  const auto at = [&](int e) {
    const auto found = std::find_if(
        study.points.begin(), study.points.end(),
        [e](const cp::EventStudyPoint& p) { return p.event_time == e; });
    REQUIRE(found != study.points.end());
    return *found;
  };
  CHECK(at(0).estimate == doctest::Approx(-0.03).epsilon(1e-14));
  CHECK(at(-1).estimate == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(at(1).estimate == doctest::Approx(-0.03).epsilon(1e-14));
  CHECK(at(0).cohort_weights.size() == 2);
  CHECK(at(0).cohort_weights[0].second == doctest::Approx(0.5));

  // Unequal rosters tilt the weights: drop one 2006 member.
  std::vector<UnitSpec> tilted(units.begin(), units.end());
  tilted.erase(std::remove_if(tilted.begin(), tilted.end(),
                              [](const UnitSpec& u) { return u.id == "b2"; }),
               tilted.end());
  const auto tilted_panel = build_panel(tilted, 2000, 2008);
  const auto tilted_index = cp::build_cohort_index(tilted_panel);
  const auto tilted_did = cp::estimate_all(tilted_panel, tilted_index, config, 1);
  const auto tilted_study =
      cp::aggregate_event_study(tilted_panel, tilted_index, tilted_did, config);
  const auto tilted_at0 = std::find_if(
      tilted_study.points.begin(), tilted_study.points.end(),
      [](const cp::EventStudyPoint& p) { return p.event_time == 0; });
  REQUIRE(tilted_at0 != tilted_study.points.end());
  // Weights 3/5 and 2/5.
  CHECK(tilted_at0->estimate ==
        doctest::Approx(0.6 * -0.02 + 0.4 * -0.04).epsilon(1e-14));
}

TEST_CASE("cells missing without a recorded reason abort the aggregation") {
  const auto panel = build_panel(noisy_units(23), 2000, 2008);
  const auto index = cp::build_cohort_index(panel);
  cp::DidConfig config;
  config.window = {-2, 2};
  auto did = cp::estimate_all(panel, index, config, 1);
  REQUIRE(!did.effects.empty());

  // Silently dropping an estimated cell must be detected.
  auto broken = did;
  broken.effects.erase(broken.effects.begin());
  CHECK_THROWS_AS(cp::aggregate_event_study(panel, index, broken, config),
                  cp::MissingCellError);

  // Moving the cell to the skip log instead is legitimate: the event time
  // re-weights onto the remaining cohort.
  auto skipped = did;
  const auto removed = skipped.effects.front();
  skipped.effects.erase(skipped.effects.begin());
  skipped.skipped.push_back({removed.g, removed.t, "synthetic skip"});
  const auto study = cp::aggregate_event_study(panel, index, skipped, config);
  const int e_removed = removed.t - removed.g;
  const auto point = std::find_if(
      study.points.begin(), study.points.end(),
      [&](const cp::EventStudyPoint& p) { return p.event_time == e_removed; });
  REQUIRE(point != study.points.end());
  REQUIRE(point->cohort_weights.size() == 1);
  CHECK(point->cohort_weights[0].first != removed.g);
  CHECK(point->cohort_weights[0].second == 1.0);

  // If every cohort's cell at an event time is skipped, the event time is
  // reported as skipped rather than silently absent.
  auto all_skipped = did;
  for (auto it = all_skipped.effects.begin(); it != all_skipped.effects.end();) {
    if (it->t - it->g == 0) {
      all_skipped.skipped.push_back({it->g, it->t, "synthetic skip"});
      it = all_skipped.effects.erase(it);
    } else {
      ++it;
    }
  }
  const auto gap_study =
      cp::aggregate_event_study(panel, index, all_skipped, config);
  const bool has_zero =
      std::any_of(gap_study.points.begin(), gap_study.points.end(),
                  [](const cp::EventStudyPoint& p) { return p.event_time == 0; });
  CHECK_FALSE(has_zero);
  CHECK(std::any_of(gap_study.skipped.begin(), gap_study.skipped.end(),
                    [](const cp::SkippedEventTime& s) {
                      return s.event_time == 0;
                    }));
}

TEST_CASE("window averages are simple means with strict coverage") {
  const auto panel = build_panel(noisy_units(31), 2000, 2008);
  const auto index = cp::build_cohort_index(panel);
  cp::DidConfig config;
  config.window = {-3, 3};
  const auto did = cp::estimate_all(panel, index, config, 1);
  const auto study = cp::aggregate_event_study(panel, index, did, config);

  const auto point_at = [&](int e) {
    return *std::find_if(
        study.points.begin(), study.points.end(),
        [e](const cp::EventStudyPoint& p) { return p.event_time == e; });
  };

  SUBCASE("single event time is the identity") {
    const auto w = cp::window_average(study, panel, 0, 0);
    const auto p = point_at(0);
    CHECK(w.estimate == doctest::Approx(p.estimate).epsilon(1e-13));
    CHECK(w.std_error == doctest::Approx(p.std_error).epsilon(1e-12));
  }

  SUBCASE("multi-period windows average the coefficients") {
    const auto w = cp::window_average(study, panel, 0, 3);
    const double want = (point_at(0).estimate + point_at(1).estimate +
                         point_at(2).estimate + point_at(3).estimate) /
                        4.0;
    CHECK(w.estimate == doctest::Approx(want).epsilon(1e-12));
    CHECK(w.e_min == 0);
    CHECK(w.e_max == 3);
    CHECK(w.std_error > 0.0);

    const auto pre = cp::window_average(study, panel, -3, -1);
    const double want_pre =
        (point_at(-3).estimate + point_at(-2).estimate +
         point_at(-1).estimate) /
        3.0;
    CHECK(pre.estimate == doctest::Approx(want_pre).epsilon(1e-12));
  }

  SUBCASE("windows reaching outside the estimated set are refused") {
    CHECK_THROWS_AS(cp::window_average(study, panel, 0, 4),
                    cp::WindowOutOfRangeError);
    CHECK_THROWS_AS(cp::window_average(study, panel, -5, -1),
                    cp::WindowOutOfRangeError);
    CHECK_THROWS_AS(cp::window_average(study, panel, 2, 1),
                    cp::WindowOutOfRangeError);
  }
}

TEST_CASE("cluster schemes coarser than units change the standard errors") {
  const auto panel = build_panel(noisy_units(47), 2000, 2008);
  const auto index = cp::build_cohort_index(panel);
  cp::DidConfig config;
  config.window = {0, 2};
  const auto did = cp::estimate_all(panel, index, config, 1);

  // Pair consecutive units into two-unit clusters.
  cp::ClusterScheme pairs;
  for (std::int32_t u = 0; u < panel.n_units(); ++u) {
    pairs.cluster_of[u] = u / 2;
  }
  const auto unit_level = cp::aggregate_event_study(panel, index, did, config);
  const auto pair_level =
      cp::aggregate_event_study(panel, index, did, config, pairs);
  REQUIRE(unit_level.points.size() == pair_level.points.size());
  bool any_se_differs = false;
  for (std::size_t i = 0; i < unit_level.points.size(); ++i) {
    CHECK(unit_level.points[i].estimate == pair_level.points[i].estimate);
    if (unit_level.points[i].std_error != pair_level.points[i].std_error) {
      any_se_differs = true;
    }
  }
  CHECK(any_se_differs);
}
