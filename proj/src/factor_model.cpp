#include "causalpanel/factor_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "causalpanel/csv.hpp"
#include "causalpanel/errors.hpp"
#include "causalpanel/inference.hpp"
#include "causalpanel/rng.hpp"

namespace causalpanel {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct CovariateRef {
  enum Kind { Age, Gender, Extra } kind = Extra;
  std::size_t column = 0;
  std::string name;
};

std::vector<CovariateRef> resolve_covariates(
    const CohortPanel& panel, const std::vector<std::string>& names) {
  std::vector<CovariateRef> refs;
  refs.reserve(names.size());
  for (const auto& name : names) {
    CovariateRef ref;
    ref.name = name;
    if (name == "age") {
      ref.kind = CovariateRef::Age;
    } else if (name == "gender") {
      ref.kind = CovariateRef::Gender;
    } else if (const auto col = panel.covariate_column(name)) {
      ref.kind = CovariateRef::Extra;
      ref.column = *col;
    } else {
      throw Error("unknown covariate '" + name + "'");
    }
    refs.push_back(std::move(ref));
  }
  return refs;
}

double covariate_value(const CohortPanel& panel, const CovariateRef& ref,
                       std::int64_t row) {
  switch (ref.kind) {
    case CovariateRef::Age: return panel.age(row);
    case CovariateRef::Gender: return panel.gender(row);
    case CovariateRef::Extra: return panel.covariate(row, ref.column);
  }
  return 0.0;
}

// The fit lives on a units x years grid restricted to units that contribute
// at least one untreated observed (and not held-out) cell.
struct FitGrid {
  int year_min = 0;
  int n_years = 0;
  std::vector<std::int32_t> units;     // grid row -> panel unit
  Eigen::MatrixXd y;                   // zero where unmasked
  Eigen::ArrayXXd mask;                // 1 = cell participates in the fit
  std::vector<Eigen::MatrixXd> x;      // one grid per candidate covariate
  Eigen::ArrayXd row_count;
  Eigen::ArrayXd col_count;
};

FitGrid build_grid(const CohortPanel& panel,
                   const std::vector<CovariateRef>& refs,
                   const std::vector<std::pair<std::int32_t, int>>& holdout) {
  FitGrid grid;
  grid.year_min = panel.years().min;
  grid.n_years = panel.years().span();
  const std::set<std::pair<std::int32_t, int>> held(holdout.begin(),
                                                    holdout.end());
  const auto in_fit = [&](std::int32_t u, std::int64_t row) {
    return !panel.treated(row) && !std::isnan(panel.outcome(row)) &&
           held.find({u, panel.year(row)}) == held.end();
  };
  for (std::int32_t u = 0; u < panel.n_units(); ++u) {
    for (std::int64_t row = panel.unit_rows_begin(u);
         row < panel.unit_rows_end(u); ++row) {
      if (in_fit(u, row)) {
        grid.units.push_back(u);
        break;
      }
    }
  }
  const Eigen::Index n = static_cast<Eigen::Index>(grid.units.size());
  const Eigen::Index t = grid.n_years;
  if (n == 0) throw Error("no untreated observed cells to fit on");
  grid.y = Eigen::MatrixXd::Zero(n, t);
  grid.mask = Eigen::ArrayXXd::Zero(n, t);
  grid.x.assign(refs.size(), Eigen::MatrixXd::Zero(n, t));
  for (Eigen::Index g = 0; g < n; ++g) {
    const std::int32_t u = grid.units[static_cast<std::size_t>(g)];
    for (std::int64_t row = panel.unit_rows_begin(u);
         row < panel.unit_rows_end(u); ++row) {
      if (!in_fit(u, row)) continue;
      const Eigen::Index j = panel.year(row) - grid.year_min;
      grid.y(g, j) = panel.outcome(row);
      grid.mask(g, j) = 1.0;
      for (std::size_t c = 0; c < refs.size(); ++c) {
        grid.x[c](g, j) = covariate_value(panel, refs[c], row);
      }
    }
  }
  grid.row_count = grid.mask.rowwise().sum();
  grid.col_count = grid.mask.colwise().sum().transpose();
  for (Eigen::Index j = 0; j < t; ++j) {
    if (grid.col_count[j] <= 0.0) {
      throw MissingFactorYearError(
          "year " + std::to_string(grid.year_min + static_cast<int>(j)) +
          " has no untreated observation to identify its year effect");
    }
  }
  return grid;
}

// A column that two-way demeaning flattens to numerical zero cannot enter
// the regression: unit and year effects already span it.
bool absorbed_by_fixed_effects(const FitGrid& grid,
                               const Eigen::MatrixXd& xcol) {
  const double cells = grid.mask.sum();
  const double grand = (xcol.array() * grid.mask).sum() / cells;
  const Eigen::ArrayXXd centered = (xcol.array() - grand) * grid.mask;
  const double total_ss = centered.square().sum();
  if (total_ss <= 1e-20 * cells) return true;  // constant column

  const Eigen::Index n = grid.y.rows();
  const Eigen::Index t = grid.y.cols();
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(t);
  double resid_ss = total_ss;
  for (int it = 0; it < 300; ++it) {
    a = ((centered.rowwise().sum()).matrix() - grid.mask.matrix() * b)
            .cwiseQuotient(grid.row_count.matrix());
    b = ((centered.colwise().sum()).matrix().transpose() -
         grid.mask.matrix().transpose() * a)
            .cwiseQuotient(grid.col_count.matrix());
    Eigen::ArrayXXd resid = centered;
    resid.colwise() -= a.array();
    resid.rowwise() -= b.transpose().array();
    const double next = (resid * grid.mask).square().sum();
    const bool settled = std::abs(resid_ss - next) <= 1e-14 * total_ss;
    resid_ss = next;
    if (settled) break;
  }
  return resid_ss <= 1e-8 * total_ss;
}

// Greedy independence screen on the masked Gram matrix, scale-free via a
// correlation-style normalization.
std::vector<int> independent_columns(const FitGrid& grid,
                                     const std::vector<int>& candidates,
                                     std::vector<std::string>* rejected_names,
                                     const std::vector<CovariateRef>& refs,
                                     std::vector<std::string>* warnings) {
  std::vector<int> kept;
  for (int c : candidates) {
    std::vector<int> trial = kept;
    trial.push_back(c);
    const Eigen::Index k = static_cast<Eigen::Index>(trial.size());
    Eigen::MatrixXd gram(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = a; b < k; ++b) {
        const double value =
            (grid.x[static_cast<std::size_t>(trial[a])].array() *
             grid.x[static_cast<std::size_t>(trial[b])].array() * grid.mask)
                .sum();
        gram(a, b) = value;
        gram(b, a) = value;
      }
    }
    bool ok = true;
    for (Eigen::Index d = 0; d < k; ++d) {
      if (gram(d, d) <= 0.0) ok = false;
    }
    if (ok) {
      const Eigen::VectorXd scale = gram.diagonal().cwiseSqrt().cwiseInverse();
      const Eigen::MatrixXd corr =
          scale.asDiagonal() * gram * scale.asDiagonal();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigs(corr);
      if (eigs.eigenvalues().minCoeff() <= 1e-10) ok = false;
    }
    if (ok) {
      kept = std::move(trial);
    } else {
      rejected_names->push_back(refs[static_cast<std::size_t>(c)].name);
      warnings->push_back("covariate '" + refs[static_cast<std::size_t>(c)].name +
                          "' is collinear with other covariates; dropped");
    }
  }
  return kept;
}

struct EmState {
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  Eigen::VectorXd xi;
  Eigen::MatrixXd lambda;
  Eigen::MatrixXd f;
  bool converged = false;
  int iterations = 0;
  double ssr = 0.0;
};

// Alternates an additive block-coordinate pass with a rank-r truncated SVD
// of the residual grid; unobserved cells ride along at their current
// low-rank prediction, so the squared residual over fitted cells cannot
// increase between iterations.
EmState run_em(const FitGrid& grid, const std::vector<int>& kept, int rank,
               double em_tolerance, int max_iterations) {
  const Eigen::Index n = grid.y.rows();
  const Eigen::Index t = grid.y.cols();
  const Eigen::Index k = static_cast<Eigen::Index>(kept.size());
  const double sqrt_t = std::sqrt(static_cast<double>(t));

  // The beta-step Gram matrix never changes; factor it once.
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = a; b < k; ++b) {
      const double value =
          (grid.x[static_cast<std::size_t>(kept[a])].array() *
           grid.x[static_cast<std::size_t>(kept[b])].array() * grid.mask)
              .sum();
      xtx(a, b) = value;
      xtx(b, a) = value;
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> xtx_solver;
  if (k > 0) xtx_solver.compute(xtx);

  EmState state;
  state.beta = Eigen::VectorXd::Zero(k);
  state.alpha = Eigen::VectorXd::Zero(n);
  state.xi = Eigen::VectorXd::Zero(t);
  state.lambda = Eigen::MatrixXd::Zero(n, rank);
  state.f = Eigen::MatrixXd::Zero(t, rank);

  Eigen::MatrixXd low_rank = Eigen::MatrixXd::Zero(n, t);
  Eigen::MatrixXd fitted_prev = Eigen::MatrixXd::Zero(n, t);
  Eigen::MatrixXd xb = Eigen::MatrixXd::Zero(n, t);
  const double inner_tolerance = std::min(1e-11, em_tolerance * 1e-2);

  const auto apply_beta = [&] {
    xb.setZero();
    for (Eigen::Index c = 0; c < k; ++c) {
      xb += state.beta[c] * grid.x[static_cast<std::size_t>(kept[c])];
    }
  };

  for (int iter = 1; iter <= max_iterations; ++iter) {
    state.iterations = iter;
    const Eigen::MatrixXd target = grid.y - low_rank;

    for (int inner = 0; inner < 500; ++inner) {
      apply_beta();
      const Eigen::ArrayXXd masked_a = (target - xb).array() * grid.mask;
      const Eigen::VectorXd alpha_new =
          (masked_a.rowwise().sum().matrix() - grid.mask.matrix() * state.xi)
              .cwiseQuotient(grid.row_count.matrix());
      const Eigen::VectorXd xi_new =
          (masked_a.colwise().sum().matrix().transpose() -
           grid.mask.matrix().transpose() * alpha_new)
              .cwiseQuotient(grid.col_count.matrix());
      Eigen::VectorXd beta_new = state.beta;
      if (k > 0) {
        Eigen::ArrayXXd resid = target.array();
        resid.colwise() -= alpha_new.array();
        resid.rowwise() -= xi_new.transpose().array();
        resid *= grid.mask;
        Eigen::VectorXd xty(k);
        for (Eigen::Index c = 0; c < k; ++c) {
          xty[c] = (grid.x[static_cast<std::size_t>(kept[c])].array() * resid)
                       .sum();
        }
        beta_new = xtx_solver.solve(xty);
      }
      double shift = (alpha_new - state.alpha).cwiseAbs().maxCoeff();
      shift = std::max(shift, (xi_new - state.xi).cwiseAbs().maxCoeff());
      if (k > 0) {
        shift = std::max(shift, (beta_new - state.beta).cwiseAbs().maxCoeff());
      }
      double scale = std::max(1.0, state.alpha.cwiseAbs().maxCoeff());
      scale = std::max(scale, state.xi.cwiseAbs().maxCoeff());
      state.alpha = alpha_new;
      state.xi = xi_new;
      state.beta = beta_new;
      if (shift < inner_tolerance * scale) break;
    }
    // Pin the year effects to mean zero; the level lives in alpha.
    const double xi_mean = state.xi.mean();
    state.xi.array() -= xi_mean;
    state.alpha.array() += xi_mean;

    apply_beta();
    Eigen::ArrayXXd resid = (grid.y - xb).array();
    resid.colwise() -= state.alpha.array();
    resid.rowwise() -= state.xi.transpose().array();
    if (rank > 0) {
      const Eigen::MatrixXd filled =
          (resid * grid.mask + low_rank.array() * (1.0 - grid.mask)).matrix();
      const Eigen::MatrixXd gram = filled.transpose() * filled;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigs(gram);
      Eigen::MatrixXd v(t, rank);
      for (int j = 0; j < rank; ++j) {
        v.col(j) = eigs.eigenvectors().col(t - 1 - j);
      }
      // Deterministic signs: the largest-magnitude coordinate is positive.
      for (int j = 0; j < rank; ++j) {
        Eigen::Index peak = 0;
        v.col(j).cwiseAbs().maxCoeff(&peak);
        if (v(peak, j) < 0.0) v.col(j) = -v.col(j);
      }
      state.f = sqrt_t * v;
      state.lambda = filled * v / sqrt_t;
      low_rank = state.lambda * state.f.transpose();
    }

    Eigen::ArrayXXd fitted = xb.array() + low_rank.array();
    fitted.colwise() += state.alpha.array();
    fitted.rowwise() += state.xi.transpose().array();
    const Eigen::MatrixXd fitted_masked = (fitted * grid.mask).matrix();
    state.ssr = ((grid.y - fitted_masked).array() * grid.mask).square().sum();
    const double change = (fitted_masked - fitted_prev).squaredNorm();
    const double reference = fitted_prev.squaredNorm() + 1e-12;
    fitted_prev = fitted_masked;
    if (change <= em_tolerance * reference) {
      state.converged = true;
      break;
    }
  }
  return state;
}

}  // namespace

bool FactorModel::unit_identified(std::int32_t unit) const {
  if (unit < 0 || unit >= static_cast<std::int32_t>(alpha.size())) return false;
  if (!std::isfinite(alpha[static_cast<std::size_t>(unit)])) return false;
  if (rank > 0 && !lambda.row(unit).allFinite()) return false;
  return true;
}

double FactorModel::predict(const CohortPanel& panel, std::int64_t row) const {
  const std::int32_t u = panel.unit(row);
  const int j = panel.year(row) - year_min;
  if (j < 0 || j >= static_cast<int>(xi.size())) {
    throw Error("year " + std::to_string(panel.year(row)) +
                " lies outside the fitted range");
  }
  double value = alpha[static_cast<std::size_t>(u)] +
                 xi[static_cast<std::size_t>(j)];
  for (std::size_t c = 0; c < covariates.size(); ++c) {
    const std::string& name = covariates[c];
    double x = 0.0;
    if (name == "age") {
      x = panel.age(row);
    } else if (name == "gender") {
      x = panel.gender(row);
    } else if (const auto col = panel.covariate_column(name)) {
      x = panel.covariate(row, *col);
    } else {
      throw Error("panel lacks covariate '" + name + "'");
    }
    value += beta[static_cast<Eigen::Index>(c)] * x;
  }
  if (rank > 0) value += lambda.row(u).dot(factors.row(j));
  return value;
}

FactorModel fit_factor_model(const CohortPanel& panel,
                             const FactorFitOptions& options) {
  if (options.rank < 0) throw Error("rank must be non-negative");
  const auto refs = resolve_covariates(panel, options.covariates);
  const FitGrid grid = build_grid(panel, refs, options.holdout);
  if (options.rank > std::min<Eigen::Index>(grid.y.rows(), grid.y.cols())) {
    throw RankDeficientError(
        "rank " + std::to_string(options.rank) +
        " exceeds the untreated grid (" + std::to_string(grid.y.rows()) +
        " units x " + std::to_string(grid.y.cols()) + " years)");
  }

  FactorModel model;
  model.rank = options.rank;
  model.year_min = grid.year_min;

  // Screen covariates: first against the fixed effects, then against each
  // other.
  std::vector<int> survivors;
  for (std::size_t c = 0; c < refs.size(); ++c) {
    if (absorbed_by_fixed_effects(grid, grid.x[c])) {
      model.rejected.push_back(refs[c].name);
      model.warnings.push_back("covariate '" + refs[c].name +
                               "' is collinear with the unit and year "
                               "effects; dropped");
    } else {
      survivors.push_back(static_cast<int>(c));
    }
  }
  const std::vector<int> kept = independent_columns(
      grid, survivors, &model.rejected, refs, &model.warnings);
  for (int c : kept) {
    model.covariates.push_back(refs[static_cast<std::size_t>(c)].name);
  }

  const EmState em = run_em(grid, kept, options.rank, options.em_tolerance,
                            options.max_iterations);
  model.converged = em.converged;
  model.iterations = em.iterations;
  model.ssr = em.ssr;
  model.beta = em.beta;
  model.factors = em.f;
  model.xi.assign(static_cast<std::size_t>(grid.n_years), 0.0);
  for (Eigen::Index j = 0; j < grid.y.cols(); ++j) {
    model.xi[static_cast<std::size_t>(j)] = em.xi[j];
  }
  model.alpha.assign(static_cast<std::size_t>(panel.n_units()), kNaN);
  model.lambda =
      Eigen::MatrixXd::Constant(panel.n_units(), options.rank, kNaN);
  for (std::size_t g = 0; g < grid.units.size(); ++g) {
    const std::int32_t u = grid.units[g];
    model.alpha[static_cast<std::size_t>(u)] =
        em.alpha[static_cast<Eigen::Index>(g)];
    if (options.rank > 0) {
      model.lambda.row(u) = em.lambda.row(static_cast<Eigen::Index>(g));
    }
  }

  // Adopting units get loadings from their own pre-adoption residuals; with
  // too few of those the unit cannot be imputed at all.
  const std::int64_t needed = std::max(options.rank, 1);
  for (std::size_t g = 0; g < grid.units.size(); ++g) {
    const std::int32_t u = grid.units[g];
    if (panel.first_treated(u) == kNever) continue;
    const Eigen::Index gi = static_cast<Eigen::Index>(g);
    const std::int64_t cells =
        static_cast<std::int64_t>(std::llround(grid.row_count[gi]));
    if (cells < needed) {
      model.alpha[static_cast<std::size_t>(u)] = kNaN;
      if (options.rank > 0) {
        model.lambda.row(u).setConstant(kNaN);
      }
      continue;
    }
    if (options.rank == 0) continue;
    Eigen::MatrixXd ftf = Eigen::MatrixXd::Zero(options.rank, options.rank);
    Eigen::VectorXd ftr = Eigen::VectorXd::Zero(options.rank);
    for (Eigen::Index j = 0; j < grid.y.cols(); ++j) {
      if (grid.mask(gi, j) <= 0.0) continue;
      double resid = grid.y(gi, j) - em.alpha[gi] - em.xi[j];
      for (Eigen::Index c = 0; c < em.beta.size(); ++c) {
        resid -= em.beta[c] *
                 grid.x[static_cast<std::size_t>(
                     kept[static_cast<std::size_t>(c)])](gi, j);
      }
      const Eigen::VectorXd f_j = em.f.row(j).transpose();
      ftf.noalias() += f_j * f_j.transpose();
      ftr.noalias() += f_j * resid;
    }
    model.lambda.row(u) = ftf.ldlt().solve(ftr).transpose();
  }
  return model;
}

ImputedCellEffects impute_and_average(const CohortPanel& panel,
                                      const FactorModel& model) {
  ImputedCellEffects result;
  std::map<int, std::pair<double, std::int64_t>> by_event;
  double post_sum = 0.0;
  std::int64_t treated_units = 0;
  for (std::int32_t u = 0; u < panel.n_units(); ++u) {
    const std::int32_t g = panel.first_treated(u);
    if (g == kNever) continue;
    ++treated_units;
    if (!model.unit_identified(u)) {
      ++result.excluded_units;
      continue;
    }
    for (std::int64_t row = panel.unit_rows_begin(u);
         row < panel.unit_rows_end(u); ++row) {
      const double y = panel.outcome(row);
      if (std::isnan(y)) continue;
      const int e = panel.year(row) - g;
      const double delta = y - model.predict(panel, row);
      auto& slot = by_event[e];
      slot.first += delta;
      ++slot.second;
      if (e >= 0) {
        post_sum += delta;
        ++result.post_cells;
      }
    }
  }
  if (treated_units == 0) {
    throw NoTreatedUnitsError("panel has no adopting units to impute");
  }
  if (result.excluded_units == treated_units) {
    throw InsufficientPretreatmentError(
        "no adopting unit has the pre-adoption observations its loading "
        "estimate needs");
  }
  if (result.post_cells == 0) {
    throw Error("no post-adoption cells observed");
  }
  result.att = post_sum / static_cast<double>(result.post_cells);
  for (const auto& [e, slot] : by_event) {
    result.by_event.push_back(
        {e, slot.first / static_cast<double>(slot.second), slot.second});
  }
  return result;
}

RankSelection select_rank(const CohortPanel& panel, const IfectConfig& config) {
  if (config.max_rank < 0) throw Error("max rank must be non-negative");
  if (!(config.cv_holdout_fraction > 0.0 && config.cv_holdout_fraction < 1.0)) {
    throw Error("holdout fraction must lie in (0, 1)");
  }
  resolve_covariates(panel, config.covariates);  // validate names up front

  struct Cell {
    std::int32_t unit = 0;
    int year = 0;
  };
  std::vector<Cell> pool;
  std::vector<std::int64_t> unit_cells(
      static_cast<std::size_t>(panel.n_units()), 0);
  std::vector<std::int64_t> year_cells(
      static_cast<std::size_t>(panel.years().span()), 0);
  for (std::int32_t u = 0; u < panel.n_units(); ++u) {
    for (std::int64_t row = panel.unit_rows_begin(u);
         row < panel.unit_rows_end(u); ++row) {
      if (panel.treated(row) || std::isnan(panel.outcome(row))) continue;
      pool.push_back({u, panel.year(row)});
      ++unit_cells[static_cast<std::size_t>(u)];
      ++year_cells[static_cast<std::size_t>(panel.year(row) -
                                            panel.years().min)];
    }
  }
  if (pool.empty()) throw Error("no untreated observed cells to fit on");

  const std::int64_t keep_at_least = std::max(config.max_rank, 1);
  RankSelection selection;
  std::vector<double> sse(static_cast<std::size_t>(config.max_rank) + 1, 0.0);
  std::vector<std::int64_t> scored(sse.size(), 0);

  for (int round = 0; round < config.cv_rounds; ++round) {
    // Substream indices offset far past the bootstrap's so the two never
    // share a stream for the same master seed.
    Rng rng = Rng::substream(config.seed, 1000000 + round);
    std::vector<std::size_t> order(pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::vector<std::int64_t> unit_left = unit_cells;
    std::vector<std::int64_t> year_left = year_cells;
    const std::int64_t target = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(config.cv_holdout_fraction *
                                     static_cast<double>(pool.size())));
    std::vector<std::pair<std::int32_t, int>> holdout;
    for (std::size_t idx : order) {
      const Cell& cell = pool[idx];
      auto& ul = unit_left[static_cast<std::size_t>(cell.unit)];
      auto& yl = year_left[static_cast<std::size_t>(cell.year -
                                                    panel.years().min)];
      if (ul <= keep_at_least || yl <= 1) continue;
      holdout.emplace_back(cell.unit, cell.year);
      --ul;
      --yl;
      if (static_cast<std::int64_t>(holdout.size()) >= target) break;
    }
    if (holdout.empty()) {
      throw Error("cross-validation could not hold out any cell");
    }

    for (int rank = 0; rank <= config.max_rank; ++rank) {
      FactorFitOptions options;
      options.rank = rank;
      options.covariates = config.covariates;
      options.em_tolerance = config.em_tolerance;
      options.max_iterations = config.max_iterations;
      options.holdout = holdout;
      const FactorModel model = fit_factor_model(panel, options);
      for (const auto& [unit, year] : holdout) {
        if (!model.unit_identified(unit)) continue;
        const std::int64_t row = panel.find_row(unit, year);
        const double y = panel.outcome(row);
        const double error = y - model.predict(panel, row);
        sse[static_cast<std::size_t>(rank)] += error * error;
        ++scored[static_cast<std::size_t>(rank)];
      }
    }
  }

  selection.mspe.assign(sse.size(), 0.0);
  for (std::size_t r = 0; r < sse.size(); ++r) {
    selection.mspe[r] = scored[r] > 0
                            ? sse[r] / static_cast<double>(scored[r])
                            : std::numeric_limits<double>::infinity();
  }
  selection.rank = 0;
  for (std::size_t r = 1; r < selection.mspe.size(); ++r) {
    if (selection.mspe[r] <
        selection.mspe[static_cast<std::size_t>(selection.rank)]) {
      selection.rank = static_cast<int>(r);
    }
  }
  selection.scored_cells = scored[static_cast<std::size_t>(selection.rank)];
  return selection;
}

IfectResult run_ifect(const CohortPanel& panel, const IfectConfig& config,
                      const ClusterScheme& scheme, int threads) {
  IfectResult result;
  int rank = 0;
  if (config.fixed_rank) {
    rank = *config.fixed_rank;
    result.selection.rank = rank;
  } else {
    result.selection = select_rank(panel, config);
    rank = result.selection.rank;
  }

  FactorFitOptions options;
  options.rank = rank;
  options.covariates = config.covariates;
  options.em_tolerance = config.em_tolerance;
  options.max_iterations = config.max_iterations;
  result.model = fit_factor_model(panel, options);

  const ImputedCellEffects imputed = impute_and_average(panel, result.model);
  result.att = imputed.att;
  result.excluded_units = imputed.excluded_units;
  for (const auto& row : imputed.by_event) {
    IfectEffect effect;
    effect.event_time = row.event_time;
    effect.estimate = row.estimate;
    effect.n_cells = row.n_cells;
    effect.std_error = kNaN;
    effect.p_value = kNaN;
    effect.ci_lo = kNaN;
    effect.ci_hi = kNaN;
    result.effects.push_back(effect);
  }
  result.att_std_error = kNaN;
  result.att_p_value = kNaN;
  result.att_ci_lo = kNaN;
  result.att_ci_hi = kNaN;

  // Window summaries average the estimated event-time rows they cover; the
  // member sets are fixed now so bootstrap replicates aggregate the same
  // event times as the point estimates.
  std::vector<std::vector<std::size_t>> window_members;
  for (const auto& [lo, hi] : config.windows) {
    std::vector<std::size_t> members;
    double sum = 0.0;
    for (std::size_t i = 0; i < result.effects.size(); ++i) {
      const int e = result.effects[i].event_time;
      if (e < lo || e > hi) continue;
      members.push_back(i);
      sum += result.effects[i].estimate;
    }
    IfectWindow window;
    window.e_min = lo;
    window.e_max = hi;
    window.n_events = static_cast<int>(members.size());
    window.estimate =
        members.empty() ? kNaN : sum / static_cast<double>(members.size());
    window.std_error = kNaN;
    window.p_value = kNaN;
    window.ci_lo = kNaN;
    window.ci_hi = kNaN;
    result.windows.push_back(window);
    window_members.push_back(std::move(members));
  }

  if (config.bootstrap_reps > 0) {
    std::vector<int> grid_e;
    grid_e.reserve(result.effects.size());
    for (const auto& effect : result.effects) {
      grid_e.push_back(effect.event_time);
    }
    const auto statistics = [rank, config, grid_e,
                             window_members](const CohortPanel& replicate) {
      FactorFitOptions opts;
      opts.rank = rank;
      opts.covariates = config.covariates;
      opts.em_tolerance = config.em_tolerance;
      opts.max_iterations = config.max_iterations;
      const FactorModel model = fit_factor_model(replicate, opts);
      const ImputedCellEffects imp = impute_and_average(replicate, model);
      std::vector<double> stats;
      stats.reserve(1 + grid_e.size() + window_members.size());
      stats.push_back(imp.att);
      std::vector<double> by_e;
      by_e.reserve(grid_e.size());
      for (int e : grid_e) {
        const auto found = std::find_if(
            imp.by_event.begin(), imp.by_event.end(),
            [e](const ImputedCellEffects::Row& r) { return r.event_time == e; });
        by_e.push_back(found == imp.by_event.end() ? kNaN : found->estimate);
      }
      stats.insert(stats.end(), by_e.begin(), by_e.end());
      for (const auto& members : window_members) {
        double sum = 0.0;
        for (std::size_t i : members) sum += by_e[i];
        stats.push_back(members.empty()
                            ? kNaN
                            : sum / static_cast<double>(members.size()));
      }
      return stats;
    };
    BootstrapSpec spec;
    spec.replicates = config.bootstrap_reps;
    spec.seed = config.seed;
    const BootstrapResult boot =
        cluster_bootstrap(statistics, panel, scheme, spec, threads);
    result.att_std_error = boot.std_error[0];
    result.att_p_value = boot.p_value[0];
    result.att_ci_lo = boot.ci_lo[0];
    result.att_ci_hi = boot.ci_hi[0];
    for (std::size_t i = 0; i < result.effects.size(); ++i) {
      result.effects[i].std_error = boot.std_error[i + 1];
      result.effects[i].p_value = boot.p_value[i + 1];
      result.effects[i].ci_lo = boot.ci_lo[i + 1];
      result.effects[i].ci_hi = boot.ci_hi[i + 1];
    }
    const std::size_t offset = 1 + grid_e.size();
    for (std::size_t w = 0; w < result.windows.size(); ++w) {
      result.windows[w].std_error = boot.std_error[offset + w];
      result.windows[w].p_value = boot.p_value[offset + w];
      result.windows[w].ci_lo = boot.ci_lo[offset + w];
      result.windows[w].ci_hi = boot.ci_hi[offset + w];
    }
    result.bootstrap_failures = boot.failed_replicates;
  }
  return result;
}

void write_ifect_csv(const IfectResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "event_time,estimate,std_error,p_value,ci_lo,ci_hi,n_cells\n";
  for (const auto& e : result.effects) {
    out << e.event_time << ',' << format_double(e.estimate) << ','
        << format_double(e.std_error) << ',' << format_double(e.p_value)
        << ',' << format_double(e.ci_lo) << ',' << format_double(e.ci_hi)
        << ',' << e.n_cells << '\n';
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

}  // namespace causalpanel
