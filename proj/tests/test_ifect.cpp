// Tests for the interactive fixed-effects counterfactual estimator.  The
// rank-0 oracle is a dense least-squares fit with explicit unit and year
// dummies (solved by complete orthogonal decomposition, so it shares no code
// path with the EM); factor recovery is checked on noiseless low-rank
// surfaces where the model must reproduce the data exactly.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "causalpanel/errors.hpp"
#include "causalpanel/factor_model.hpp"
#include "causalpanel/panel.hpp"
#include "doctest.h"
#include "test_support.hpp"

namespace cp = causalpanel;
using namespace test_support;

namespace {

struct MiniRng {
  std::uint64_t s;
  explicit MiniRng(std::uint64_t seed) : s(seed * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL) {}
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

// Builds a panel from a dense outcome matrix (units x years).  cohort[u] is
// the first treated year or kNever.  NaN outcomes become missing cells.
cp::CohortPanel matrix_panel(const Eigen::MatrixXd& y,
                             const std::vector<int>& cohort, int year_min,
                             const Eigen::MatrixXd* x = nullptr) {
  cp::PanelBuilder builder;
  if (x) builder.set_covariate_names({"x"});
  const int n = static_cast<int>(y.rows());
  const int t = static_cast<int>(y.cols());
  for (int u = 0; u < n; ++u) {
    for (int j = 0; j < t; ++j) {
      const int year = year_min + j;
      std::vector<double> covs;
      if (x) covs.push_back((*x)(u, j));
      builder.add_row("u" + std::to_string(u), "R", year, y(u, j),
                      cohort[u] != cp::kNever && year >= cohort[u],
                      20 + u % 9 + j, u % 2, covs);
    }
  }
  cp::PanelOptions options;
  options.check_staggered = false;
  return builder.build(options);
}

// Dense two-way fixed effects + covariate least squares on the untreated
// observed cells, solved via COD (handles the dummy-encoding null space).
// Returns fitted values for every (unit, year) combination.
Eigen::MatrixXd twfe_oracle(const cp::CohortPanel& panel,
                            const Eigen::MatrixXd* x) {
  const int n = panel.n_units();
  const int t = panel.years().span();
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> ys;
  for (std::int32_t u = 0; u < n; ++u) {
    for (auto r = panel.unit_rows_begin(u); r < panel.unit_rows_end(u); ++r) {
      if (panel.treated(r) || std::isnan(panel.outcome(r))) continue;
      const int j = panel.year(r) - panel.years().min;
      Eigen::VectorXd row = Eigen::VectorXd::Zero(n + t + (x ? 1 : 0));
      row(u) = 1.0;
      row(n + j) = 1.0;
      if (x) row(n + t) = (*x)(u, j);
      rows.push_back(std::move(row));
      ys.push_back(panel.outcome(r));
    }
  }
  Eigen::MatrixXd design(rows.size(), n + t + (x ? 1 : 0));
  Eigen::VectorXd yv(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    design.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    yv(static_cast<Eigen::Index>(i)) = ys[i];
  }
  const Eigen::VectorXd coef =
      design.completeOrthogonalDecomposition().solve(yv);
  Eigen::MatrixXd fitted(n, t);
  for (int u = 0; u < n; ++u) {
    for (int j = 0; j < t; ++j) {
      fitted(u, j) = coef(u) + coef(n + j) + (x ? coef(n + t) * (*x)(u, j) : 0.0);
    }
  }
  return fitted;
}

}  // namespace

TEST_CASE("rank zero matches a dense two-way fixed-effects fit") {
  MiniRng rng(3);
  const int n = 20, t = 8;
  Eigen::MatrixXd x(n, t), y(n, t);
  std::vector<int> cohort(n, cp::kNever);
  for (int u = 0; u < n; ++u) {
    if (u % 4 == 0) cohort[u] = 2004;
    for (int j = 0; j < t; ++j) {
      x(u, j) = rng.normal();
      y(u, j) = 1.5 + 0.3 * u - 0.2 * j + 0.8 * x(u, j) + 0.1 * rng.normal();
      if (cohort[u] != cp::kNever && 2000 + j >= cohort[u]) y(u, j) += 2.0;
    }
  }
  const auto panel = matrix_panel(y, cohort, 2000, &x);

  cp::FactorFitOptions options;
  options.rank = 0;
  options.covariates = {"x"};
  options.em_tolerance = 1e-12;
  const auto model = cp::fit_factor_model(panel, options);
  CHECK(model.converged);
  CHECK(model.covariates == std::vector<std::string>{"x"});

  const Eigen::MatrixXd oracle = twfe_oracle(panel, &x);
  // Counterfactual predictions agree cell by cell — including the treated
  // cells, where both are extrapolations of the same additive structure.
  for (std::int64_t r = 0; r < panel.n_rows(); ++r) {
    const int u = panel.unit(r);
    const int j = panel.year(r) - panel.years().min;
    CHECK(model.predict(panel, r) ==
          doctest::Approx(oracle(u, j)).epsilon(1e-7));
  }

  // Year effects are centered.
  double xi_sum = 0;
  for (double v : model.xi) xi_sum += v;
  CHECK(std::abs(xi_sum) < 1e-8);

  // The un-identified pieces of the decomposition cancel in predictions but
  // alpha itself must be finite for every unit (all have pre-period rows).
  for (std::int32_t u = 0; u < panel.n_units(); ++u) {
    CHECK(model.unit_identified(u));
  }
}

TEST_CASE("noiseless low-rank surfaces are reproduced exactly") {
  MiniRng rng(7);
  const int n = 30, t = 12;

  SUBCASE("rank one") {
    Eigen::VectorXd lam(n), f(t);
    for (int u = 0; u < n; ++u) lam(u) = rng.normal();
    for (int j = 0; j < t; ++j) f(j) = std::sin(0.7 * j) + 0.2 * j;
    Eigen::MatrixXd y(n, t);
    for (int u = 0; u < n; ++u) {
      for (int j = 0; j < t; ++j) {
        y(u, j) = 0.5 + 0.1 * u + 0.05 * j + lam(u) * f(j);
      }
    }
    const auto panel = matrix_panel(y, std::vector<int>(n, cp::kNever), 1990);
    cp::FactorFitOptions options;
    options.rank = 1;
    options.em_tolerance = 1e-13;
    options.max_iterations = 5000;
    const auto model = cp::fit_factor_model(panel, options);
    CHECK(model.converged);
    CHECK(model.ssr < 1e-12);
    for (std::int64_t r = 0; r < panel.n_rows(); ++r) {
      CHECK(model.predict(panel, r) ==
            doctest::Approx(panel.outcome(r)).epsilon(1e-7));
    }
  }

  SUBCASE("rank two, with orthonormal factor convention") {
    Eigen::MatrixXd lam(n, 2), f(t, 2);
    for (int u = 0; u < n; ++u) {
      lam(u, 0) = rng.normal() * 2.0;
      lam(u, 1) = rng.normal() * 0.6;
    }
    for (int j = 0; j < t; ++j) {
      f(j, 0) = 1.0 + 0.3 * j;
      f(j, 1) = std::cos(1.1 * j);
    }
    Eigen::MatrixXd y(n, t);
    for (int u = 0; u < n; ++u) {
      for (int j = 0; j < t; ++j) {
        y(u, j) = -1.0 + 0.2 * u - 0.1 * j + lam.row(u).dot(f.row(j));
      }
    }
    const auto panel = matrix_panel(y, std::vector<int>(n, cp::kNever), 1990);
    cp::FactorFitOptions options;
    options.rank = 2;
    options.em_tolerance = 1e-13;
    options.max_iterations = 5000;
    const auto model = cp::fit_factor_model(panel, options);
    CHECK(model.converged);
    CHECK(model.ssr < 1e-10);

    // Factor normalization: F'F / T = identity.
    const Eigen::MatrixXd gram =
        model.factors.transpose() * model.factors / static_cast<double>(t);
    CHECK((gram - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-8);

    // Loadings: Lambda'Lambda diagonal with non-increasing diagonal.
    const Eigen::MatrixXd lgram = model.lambda.transpose() * model.lambda;
    CHECK(std::abs(lgram(0, 1)) < 1e-6 * (1.0 + lgram.norm()));
    CHECK(lgram(0, 0) >= lgram(1, 1) - 1e-9);

    // The fitted interactive component spans the true one.
    for (std::int64_t r = 0; r < panel.n_rows(); ++r) {
      CHECK(model.predict(panel, r) ==
            doctest::Approx(panel.outcome(r)).epsilon(1e-7));
    }
  }
}

TEST_CASE("treated outcomes after adoption cannot influence the fit") {
  MiniRng rng(13);
  const int n = 16, t = 10;
  Eigen::MatrixXd y(n, t);
  std::vector<int> cohort(n, cp::kNever);
  for (int u = 0; u < n; ++u) {
    if (u % 3 == 0) cohort[u] = 1995 + (u % 2);
    for (int j = 0; j < t; ++j) {
      y(u, j) = 0.4 * u + 0.2 * j + rng.normal();
    }
  }
  const auto fit = [&](const Eigen::MatrixXd& outcomes) {
    const auto panel = matrix_panel(outcomes, cohort, 1990);
    cp::FactorFitOptions options;
    options.rank = 1;
    return cp::fit_factor_model(panel, options);
  };
  const auto base = fit(y);

  // Arbitrarily corrupt every treated post-adoption cell.
  Eigen::MatrixXd corrupted = y;
  for (int u = 0; u < n; ++u) {
    if (cohort[u] == cp::kNever) continue;
    for (int j = 0; j < t; ++j) {
      if (1990 + j >= cohort[u]) corrupted(u, j) = 1e6 * (u + j + 1);
    }
  }
  const auto poked = fit(corrupted);

  // Bit-identical fits: the treated cells are outside the estimation set,
  // and the treated units' own parameters come from their pre rows only.
  CHECK(base.beta == poked.beta);
  CHECK(base.xi == poked.xi);
  CHECK(base.factors == poked.factors);
  CHECK(base.alpha == poked.alpha);
  CHECK(base.lambda == poked.lambda);
  CHECK(base.ssr == poked.ssr);
  CHECK(base.iterations == poked.iterations);
}

TEST_CASE("covariates collinear with the structure are screened off") {
  MiniRng rng(19);
  const int n = 12, t = 6;
  Eigen::MatrixXd y(n, t);
  for (int u = 0; u < n; ++u) {
    for (int j = 0; j < t; ++j) y(u, j) = rng.normal();
  }

  cp::PanelBuilder builder;
  builder.set_covariate_names({"z", "good", "good_copy"});
  MiniRng xr(23);
  for (int u = 0; u < n; ++u) {
    for (int j = 0; j < t; ++j) {
      // z = unit effect + year effect exactly; good varies freely.
      const double z = 2.0 * u - 3.0 * j;
      const double good = xr.normal();
      builder.add_row("u" + std::to_string(u), "R", 2000 + j, y(u, j), false,
                      30, 0, {z, good, good});
    }
  }
  const auto panel = builder.build({});

  cp::FactorFitOptions options;
  options.rank = 0;
  options.covariates = {"z", "good", "good_copy", "age"};
  const auto model = cp::fit_factor_model(panel, options);

  // "z" and "age" (a unit base age plus the year) are absorbed by the fixed
  // effects; "good_copy" duplicates "good".  Only "good" survives.
  CHECK(model.covariates == std::vector<std::string>{"good"});
  REQUIRE(model.rejected.size() == 3);
  CHECK(std::find(model.rejected.begin(), model.rejected.end(), "z") !=
        model.rejected.end());
  CHECK(std::find(model.rejected.begin(), model.rejected.end(), "age") !=
        model.rejected.end());
  CHECK(std::find(model.rejected.begin(), model.rejected.end(), "good_copy") !=
        model.rejected.end());
  CHECK(model.warnings.size() == 3);
  bool saw_fixed_effect_warning = false, saw_collinear_warning = false;
  for (const auto& w : model.warnings) {
    if (w.find("unit and year effects") != std::string::npos) {
      saw_fixed_effect_warning = true;
    }
    if (w.find("collinear with other covariates") != std::string::npos) {
      saw_collinear_warning = true;
    }
  }
  CHECK(saw_fixed_effect_warning);
  CHECK(saw_collinear_warning);
}

TEST_CASE("structural failures raise typed errors") {
  MiniRng rng(29);

  SUBCASE("a year with no untreated cell cannot be fit") {
    const int n = 6, t = 5;
    Eigen::MatrixXd y(n, t);
    for (int u = 0; u < n; ++u) {
      for (int j = 0; j < t; ++j) y(u, j) = rng.normal();
    }
    // Everyone adopts by 2003; 2003 and 2004 have no untreated cells.
    std::vector<int> cohort(n, 2003);
    cohort[0] = 2002;
    CHECK_THROWS_AS(
        cp::fit_factor_model(matrix_panel(y, cohort, 2000), {}),
        cp::MissingFactorYearError);
  }

  SUBCASE("rank beyond the grid is refused") {
    const int n = 3, t = 4;
    Eigen::MatrixXd y(n, t);
    for (int u = 0; u < n; ++u) {
      for (int j = 0; j < t; ++j) y(u, j) = rng.normal();
    }
    cp::FactorFitOptions options;
    options.rank = 4;
    CHECK_THROWS_AS(
        cp::fit_factor_model(
            matrix_panel(y, std::vector<int>(n, cp::kNever), 2000), options),
        cp::RankDeficientError);
  }

  SUBCASE("negative rank is refused") {
    Eigen::MatrixXd y(2, 2);
    y << 1, 2, 3, 4;
    cp::FactorFitOptions options;
    options.rank = -1;
    CHECK_THROWS_AS(
        cp::fit_factor_model(
            matrix_panel(y, std::vector<int>(2, cp::kNever), 2000), options),
        cp::Error);
  }
}

TEST_CASE("imputed effects count treated cells by event time") {
  MiniRng rng(37);
  const int n = 24, t = 12;
  Eigen::MatrixXd y(n, t);
  std::vector<int> cohort(n, cp::kNever);
  for (int u = 0; u < n; ++u) {
    if (u % 3 == 0) cohort[u] = 1996;
    else if (u % 3 == 1) cohort[u] = 1999;
    for (int j = 0; j < t; ++j) {
      y(u, j) = 0.3 * u + 0.1 * j + 0.5 * rng.normal();
      if (cohort[u] != cp::kNever && 1990 + j >= cohort[u]) y(u, j) += 1.0;
    }
  }
  // Punch a few holes in treated units' post periods.
  y(0, 8) = kNaN;
  y(3, 7) = kNaN;
  y(1, 11) = kNaN;
  const auto panel = matrix_panel(y, cohort, 1990);

  cp::FactorFitOptions options;
  options.rank = 1;
  const auto model = cp::fit_factor_model(panel, options);
  const auto effects = cp::impute_and_average(panel, model);

  // Oracle count: treated observed cells by event time.
  std::map<int, std::int64_t> want;
  std::int64_t want_post = 0;
  for (int u = 0; u < n; ++u) {
    if (cohort[u] == cp::kNever) continue;
    for (int j = 0; j < t; ++j) {
      if (std::isnan(y(u, j))) continue;
      const int e = 1990 + j - cohort[u];
      ++want[e];
      if (e >= 0) ++want_post;
    }
  }
  // Pre-adoption rows show up as in-sample residual diagnostics.
  REQUIRE(effects.by_event.size() == want.size());
  std::int64_t post_total = 0;
  double weighted = 0;
  for (const auto& row : effects.by_event) {
    CHECK(want.at(row.event_time) == row.n_cells);
    if (row.event_time >= 0) {
      post_total += row.n_cells;
      weighted += row.estimate * static_cast<double>(row.n_cells);
    }
  }
  CHECK(post_total == effects.post_cells);
  CHECK(effects.post_cells == want_post);
  CHECK(effects.att ==
        doctest::Approx(weighted / static_cast<double>(want_post))
            .epsilon(1e-12));
  CHECK(effects.excluded_units == 0);

  // The recovered effect is near the planted +1 (the fit is exact only up
  // to noise, so allow a generous band).
  CHECK(effects.att > 0.5);
  CHECK(effects.att < 1.5);
}

TEST_CASE("treated units without usable pre rows are excluded or fatal") {
  MiniRng rng(43);
  const int n = 10, t = 8;
  Eigen::MatrixXd y(n, t);
  std::vector<int> cohort(n, cp::kNever);
  for (int u = 0; u < n; ++u) {
    for (int j = 0; j < t; ++j) y(u, j) = 0.2 * u + 0.1 * j + rng.normal();
  }
  // Unit 0 is treated from the first panel year: no pre rows at all.
  cohort[0] = 1990;
  cohort[1] = 1995;
  const auto panel = matrix_panel(y, cohort, 1990);
  cp::FactorFitOptions options;
  options.rank = 1;
  const auto model = cp::fit_factor_model(panel, options);
  CHECK_FALSE(model.unit_identified(0));
  CHECK(model.unit_identified(1));

  const auto effects = cp::impute_and_average(panel, model);
  CHECK(effects.excluded_units == 1);
  // Unit 0's cells are absent from every bucket: all its event times are
  // >= 0 and the post-cell count only covers unit 1.
  std::int64_t post = 0;
  for (const auto& row : effects.by_event) {
    if (row.event_time >= 0) post += row.n_cells;
  }
  CHECK(post == 3);  // unit 1: years 1995..1997

  // When no treated unit has pre rows, imputation cannot proceed.
  std::vector<int> hopeless(n, cp::kNever);
  hopeless[0] = 1990;
  const auto bad_panel = matrix_panel(y, hopeless, 1990);
  const auto bad_model = cp::fit_factor_model(bad_panel, options);
  CHECK_THROWS_AS(cp::impute_and_average(bad_panel, bad_model),
                  cp::InsufficientPretreatmentError);

  // And a panel with no treated units at all is refused.
  const auto never_panel =
      matrix_panel(y, std::vector<int>(n, cp::kNever), 1990);
  const auto never_model = cp::fit_factor_model(never_panel, options);
  CHECK_THROWS_AS(cp::impute_and_average(never_panel, never_model),
                  cp::NoTreatedUnitsError);
}

TEST_CASE("rank selection is deterministic and prefers the true structure") {
  MiniRng rng(53);
  const int n = 40, t = 12;

  // Pure additive data: the holdout error is minimized at rank zero.
  Eigen::MatrixXd additive(n, t);
  for (int u = 0; u < n; ++u) {
    for (int j = 0; j < t; ++j) {
      additive(u, j) = 0.5 * u + 0.3 * j + 0.3 * rng.normal();
    }
  }
  std::vector<int> cohort(n, cp::kNever);
  for (int u = 0; u < n; u += 5) cohort[u] = 2008;
  const auto additive_panel = matrix_panel(additive, cohort, 2000);

  cp::IfectConfig config;
  config.max_rank = 2;
  config.cv_rounds = 3;
  config.seed = 71;
  const auto pick = cp::select_rank(additive_panel, config);
  CHECK(pick.rank == 0);
  REQUIRE(pick.mspe.size() == 3);
  CHECK(pick.mspe[0] < pick.mspe[1]);
  CHECK(pick.scored_cells > 0);

  // Determinism across calls.
  const auto again = cp::select_rank(additive_panel, config);
  CHECK(again.rank == pick.rank);
  CHECK(again.mspe == pick.mspe);
  CHECK(again.scored_cells == pick.scored_cells);

  // Strong single-factor data flips the choice to rank one.
  Eigen::MatrixXd factor(n, t);
  MiniRng rf(59);
  std::vector<double> lam(n);
  for (int u = 0; u < n; ++u) lam[u] = 2.0 * rf.normal();
  for (int u = 0; u < n; ++u) {
    for (int j = 0; j < t; ++j) {
      factor(u, j) = 0.2 * u + 0.1 * j + lam[u] * std::sin(0.8 * j) +
                     0.2 * rf.normal();
    }
  }
  const auto factor_panel = matrix_panel(factor, cohort, 2000);
  const auto factor_pick = cp::select_rank(factor_panel, config);
  CHECK(factor_pick.rank == 1);
  CHECK(factor_pick.mspe[1] < factor_pick.mspe[0]);
}

TEST_CASE("full pipeline produces inference and windows deterministically") {
  MiniRng rng(61);
  const int n = 30, t = 10;
  Eigen::MatrixXd y(n, t);
  std::vector<int> cohort(n, cp::kNever);
  for (int u = 0; u < n; ++u) {
    if (u % 3 == 0) cohort[u] = 2005 + (u % 2);
    for (int j = 0; j < t; ++j) {
      y(u, j) = 0.2 * u + 0.1 * j + 0.4 * rng.normal();
      if (cohort[u] != cp::kNever && 2000 + j >= cohort[u]) y(u, j) += 0.8;
    }
  }
  const auto panel = matrix_panel(y, cohort, 2000);

  cp::IfectConfig config;
  config.fixed_rank = 0;
  config.bootstrap_reps = 40;
  config.seed = 5;
  config.windows = {{0, 2}, {-3, -1}, {5, 9}};

  const auto result = cp::run_ifect(panel, config, {}, 1);
  CHECK(result.model.rank == 0);
  CHECK(result.selection.mspe.empty());
  CHECK(result.att > 0.4);
  CHECK(result.att < 1.2);
  CHECK(result.att_std_error > 0.0);
  CHECK(std::isfinite(result.att_p_value));
  CHECK(result.att_ci_lo < result.att);
  CHECK(result.att_ci_hi > result.att);
  CHECK(result.bootstrap_failures == 0);

  // Effects cover the event-time range with standard errors.
  REQUIRE(!result.effects.empty());
  for (const auto& e : result.effects) {
    CHECK(e.n_cells > 0);
    CHECK(std::isfinite(e.estimate));
    CHECK(e.std_error > 0.0);
    CHECK(e.ci_lo <= e.ci_hi);
  }

  // Windows: [0,2] and [-3,-1] are populated; [5,9] covers nothing
  // (max event time is 2005+4... 2009-2005=4, but window starts at 5).
  REQUIRE(result.windows.size() == 3);
  CHECK(result.windows[0].n_events == 3);
  CHECK(std::isfinite(result.windows[0].estimate));
  CHECK(result.windows[0].std_error > 0.0);
  CHECK(result.windows[1].n_events == 3);
  CHECK(result.windows[2].n_events == 0);
  CHECK(std::isnan(result.windows[2].estimate));

  // The window mean equals the mean of its member effect estimates.
  double want = 0;
  int k = 0;
  for (const auto& e : result.effects) {
    if (e.event_time >= 0 && e.event_time <= 2) {
      want += e.estimate;
      ++k;
    }
  }
  CHECK(k == 3);
  CHECK(result.windows[0].estimate == doctest::Approx(want / 3).epsilon(1e-12));

  // Determinism: same seed, same thread count or not.
  const auto again = cp::run_ifect(panel, config, {}, 4);
  CHECK(again.att == result.att);
  CHECK(again.att_std_error == result.att_std_error);
  CHECK(again.att_ci_lo == result.att_ci_lo);
  REQUIRE(again.effects.size() == result.effects.size());
  for (std::size_t i = 0; i < again.effects.size(); ++i) {
    CHECK(again.effects[i].estimate == result.effects[i].estimate);
    CHECK(again.effects[i].std_error == result.effects[i].std_error);
  }

  // Disabling the bootstrap leaves the point estimates and marks inference
  // as unavailable.
  cp::IfectConfig quiet = config;
  quiet.bootstrap_reps = 0;
  const auto bare = cp::run_ifect(panel, quiet, {}, 1);
  CHECK(bare.att == result.att);
  CHECK(std::isnan(bare.att_std_error));
  CHECK(std::isnan(bare.effects[0].std_error));
}
