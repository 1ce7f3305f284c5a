#include "causalpanel/did.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>

#include "causalpanel/csv.hpp"
#include "causalpanel/errors.hpp"
#include "causalpanel/logistic.hpp"
#include "causalpanel/threading.hpp"

namespace causalpanel {

namespace {

// Covariates may name the fixed demographic columns or any extra column.
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

struct CellSample {
  std::vector<std::int32_t> units;
  Eigen::VectorXd dy;  // outcome change between base period and t
  Eigen::VectorXd d;   // 1 = cohort-g arm
  Eigen::MatrixXd X;   // intercept + standardized covariates (+ interactions)
  Eigen::Index n_treated = 0;
  Eigen::Index n_control = 0;
};

// Collects units observed with outcomes in both compared periods and builds
// the covariate design from base-period values.
CellSample gather_cell(const CohortPanel& panel, int g, int t, int base,
                       const DidConfig& config,
                       const std::vector<CovariateRef>& refs) {
  CellSample cell;
  // Control units must be untreated through the later compared period.
  const int untreated_through = std::max(t, base);

  std::vector<double> dy_values;
  std::vector<double> d_values;
  std::vector<std::vector<double>> raw_columns(refs.size());
  for (std::int32_t u = 0; u < panel.n_units(); ++u) {
    const std::int32_t cohort = panel.first_treated(u);
    bool in_treated_arm = false;
    if (cohort == g) {
      in_treated_arm = true;
    } else if (config.control_group == ControlGroup::NeverTreated) {
      if (cohort != kNever) continue;
    } else {
      if (cohort != kNever && cohort <= untreated_through) continue;
    }
    const std::int64_t row_base = panel.find_row(u, base);
    const std::int64_t row_t = panel.find_row(u, t);
    if (row_base < 0 || row_t < 0) continue;
    const double y_base = panel.outcome(row_base);
    const double y_t = panel.outcome(row_t);
    if (std::isnan(y_base) || std::isnan(y_t)) continue;

    cell.units.push_back(u);
    dy_values.push_back(y_t - y_base);
    d_values.push_back(in_treated_arm ? 1.0 : 0.0);
    for (std::size_t c = 0; c < refs.size(); ++c) {
      raw_columns[c].push_back(covariate_value(panel, refs[c], row_base));
    }
    if (in_treated_arm) {
      ++cell.n_treated;
    } else {
      ++cell.n_control;
    }
  }

  if (cell.n_treated == 0) {
    throw NoTreatedUnitsError("no cohort-" + std::to_string(g) +
                              " units observed with outcomes in both " +
                              std::to_string(base) + " and " +
                              std::to_string(t));
  }
  if (cell.n_control == 0) {
    throw EmptyComparisonSetError("no comparison units for cohort " +
                                  std::to_string(g) + " at year " +
                                  std::to_string(t));
  }

  const Eigen::Index n = static_cast<Eigen::Index>(dy_values.size());
  cell.dy = Eigen::Map<Eigen::VectorXd>(dy_values.data(), n);
  cell.d = Eigen::Map<Eigen::VectorXd>(d_values.data(), n);

  // Optional pairwise products extend the design before standardization.
  std::vector<std::vector<double>> columns = raw_columns;
  if (config.interact_covariates) {
    for (std::size_t a = 0; a < raw_columns.size(); ++a) {
      for (std::size_t b = a + 1; b < raw_columns.size(); ++b) {
        std::vector<double> product(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
          product[static_cast<std::size_t>(i)] =
              raw_columns[a][static_cast<std::size_t>(i)] *
              raw_columns[b][static_cast<std::size_t>(i)];
        }
        columns.push_back(std::move(product));
      }
    }
  }

  cell.X.resize(n, static_cast<Eigen::Index>(columns.size()) + 1);
  cell.X.col(0).setOnes();
  for (std::size_t c = 0; c < columns.size(); ++c) {
    Eigen::Map<Eigen::VectorXd> column(columns[c].data(), n);
    // Z-scoring keeps the span (the estimand only sees fitted values) while
    // conditioning the normal equations for covariates like age squared.
    const double mean = column.mean();
    double sd = std::sqrt((column.array() - mean).square().sum() /
                          static_cast<double>(n));
    if (!(sd > 1e-12)) sd = 1.0;
    cell.X.col(static_cast<Eigen::Index>(c) + 1) =
        (column.array() - mean) / sd;
  }
  return cell;
}

}  // namespace

GroupTimeEffect estimate_group_time(const CohortPanel& panel,
                                    const CohortIndex& index, int g, int t,
                                    const DidConfig& config) {
  if (!std::binary_search(index.groups.begin(), index.groups.end(), g)) {
    throw NoTreatedUnitsError("no cohort adopts in year " + std::to_string(g));
  }
  const int base = (config.base_period == BasePeriodPolicy::VaryingPre && t < g)
                       ? t - 1
                       : g - 1;
  if (base == t) {
    throw Error("cell (" + std::to_string(g) + ", " + std::to_string(t) +
                ") compares the reference period against itself");
  }
  if (!panel.years().contains(t) || !panel.years().contains(base)) {
    throw Error("cell (" + std::to_string(g) + ", " + std::to_string(t) +
                ") needs years " + std::to_string(base) + " and " +
                std::to_string(t) + " inside the panel range");
  }

  const auto refs = resolve_covariates(panel, config.covariates);
  CellSample cell = gather_cell(panel, g, t, base, config, refs);
  const Eigen::Index n = cell.dy.size();
  const Eigen::Index p = cell.X.cols();
  const double n_d = static_cast<double>(n);

  // Full-sample and control-arm designs must both have full column rank.
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(cell.X);
    if (qr.rank() < p) {
      throw SingularDesignError("covariates are collinear in cell (" +
                                std::to_string(g) + ", " + std::to_string(t) +
                                ")");
    }
  }

  // Propensity of being in the cohort arm, by IRLS logistic regression.
  const LogisticFit propensity = fit_logistic_irls(cell.X, cell.d);
  Eigen::Index overflow = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (propensity.fitted[i] >= config.propensity_trim) ++overflow;
  }
  if (overflow > 0) {
    throw PropensityOverflowError(
        std::to_string(overflow) + " of " + std::to_string(n) +
        " units in cell (" + std::to_string(g) + ", " + std::to_string(t) +
        ") have propensity >= " + format_double(config.propensity_trim) +
        "; common support fails");
  }

  // Outcome regression of the change on base-period covariates, fit on the
  // comparison arm only.
  const Eigen::VectorXd control = Eigen::VectorXd::Ones(n) - cell.d;
  const Eigen::MatrixXd Xc =
      (cell.X.array().colwise() * control.array()).matrix();
  const Eigen::MatrixXd XtX_control = Xc.transpose() * cell.X;
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xc);
    if (qr.rank() < p) {
      throw SingularDesignError(
          "covariates are collinear within the comparison arm of cell (" +
          std::to_string(g) + ", " + std::to_string(t) + ")");
    }
  }
  Eigen::LDLT<Eigen::MatrixXd> ols_solver(XtX_control);
  const Eigen::VectorXd beta_ols =
      ols_solver.solve(Xc.transpose() * cell.dy);
  const Eigen::VectorXd m = cell.X * beta_ols;

  // Arm means of the regression-adjusted change, odds-weighted and
  // normalized on the comparison side.
  const Eigen::VectorXd residual = cell.dy - m;
  const Eigen::VectorXd& w1 = cell.d;
  const Eigen::VectorXd w0 =
      (control.array() * propensity.fitted.array() /
       (1.0 - propensity.fitted.array()))
          .matrix();
  const double w1_mean = w1.mean();
  const double w0_mean = w0.mean();
  const double eta1 = (w1.array() * residual.array()).mean() / w1_mean;
  const double eta0 = (w0.array() * residual.array()).mean() / w0_mean;
  const double estimate = eta1 - eta0;

  // Influence function, including the first-order effect of estimating both
  // nuisance fits.  alr/ali are the linearizations of the outcome-regression
  // and propensity coefficient estimates; rows live on the 1/n scale that
  // matches the column means M1..M3 below.
  const Eigen::ArrayXd control_resid = control.array() * residual.array();
  const Eigen::MatrixXd resid_X =
      (cell.X.array().colwise() * control_resid).matrix();
  const Eigen::MatrixXd alr =
      ols_solver.solve(resid_X.transpose()).transpose() * n_d;
  const Eigen::ArrayXd score = (cell.d - propensity.fitted).array();
  const Eigen::MatrixXd score_X = (cell.X.array().colwise() * score).matrix();
  const Eigen::ArrayXd wps =
      propensity.fitted.array() * (1.0 - propensity.fitted.array());
  const Eigen::MatrixXd hessian =
      (cell.X.array().colwise() * wps).matrix().transpose() * cell.X / n_d;
  Eigen::LDLT<Eigen::MatrixXd> hessian_solver(hessian);
  const Eigen::MatrixXd ali =
      hessian_solver.solve(score_X.transpose()).transpose();

  const Eigen::VectorXd M1 = cell.X.transpose() * w1 / n_d;
  const Eigen::VectorXd M2 =
      cell.X.transpose() *
      (w0.array() * (residual.array() - eta0)).matrix() / n_d;
  const Eigen::VectorXd M3 = cell.X.transpose() * w0 / n_d;

  GroupTimeEffect effect;
  effect.g = g;
  effect.t = t;
  effect.event_time = t - g;
  effect.estimate = estimate;
  effect.n_treated = cell.n_treated;
  effect.n_control = cell.n_control;
  effect.influence.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double inf_treated =
        (w1[i] * residual[i] - w1[i] * eta1 - alr.row(i).dot(M1)) / w1_mean;
    const double inf_control = (w0[i] * residual[i] - w0[i] * eta0 +
                                ali.row(i).dot(M2) - alr.row(i).dot(M3)) /
                               w0_mean;
    effect.influence.emplace_back(cell.units[static_cast<std::size_t>(i)],
                                  inf_treated - inf_control);
  }

  const InferenceSummary inference = influence_se(estimate, effect.influence);
  effect.std_error = inference.std_error;
  effect.p_value = inference.p_value;
  return effect;
}

DidResult estimate_all(const CohortPanel& panel, const CohortIndex& index,
                       const DidConfig& config, int threads) {
  if (index.groups.empty()) {
    throw NoTreatedUnitsError("panel has no treated cohorts");
  }

  struct CellTask {
    int g = 0;
    int t = 0;
  };
  std::vector<CellTask> tasks;
  for (int g : index.groups) {
    for (int e = config.window.e_min; e <= config.window.e_max; ++e) {
      const int t = g + e;
      if (!panel.years().contains(t)) continue;
      const int base =
          (config.base_period == BasePeriodPolicy::VaryingPre && t < g)
              ? t - 1
              : g - 1;
      if (!panel.years().contains(base)) continue;
      tasks.push_back({g, t});
    }
  }

  struct CellOutcome {
    bool ok = false;
    GroupTimeEffect effect;
    std::string skip_reason;
  };
  std::vector<CellOutcome> outcomes(tasks.size());
  parallel_for(static_cast<std::int64_t>(tasks.size()), threads,
               [&](std::int64_t i) {
                 const auto& task = tasks[static_cast<std::size_t>(i)];
                 auto& slot = outcomes[static_cast<std::size_t>(i)];
                 try {
                   slot.effect = estimate_group_time(panel, index, task.g,
                                                     task.t, config);
                   slot.ok = true;
                 } catch (const NoTreatedUnitsError& e) {
                   slot.skip_reason = e.what();
                 } catch (const EmptyComparisonSetError& e) {
                   slot.skip_reason = e.what();
                 } catch (const PropensityOverflowError& e) {
                   slot.skip_reason = e.what();
                 } catch (const SingularDesignError& e) {
                   slot.skip_reason = e.what();
                 } catch (const NonConvergenceError& e) {
                   slot.skip_reason = e.what();
                 } catch (const Error& e) {
                   slot.skip_reason = e.what();
                 }
               });

  DidResult result;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (outcomes[i].ok) {
      result.effects.push_back(std::move(outcomes[i].effect));
    } else {
      result.skipped.push_back(
          {tasks[i].g, tasks[i].t, std::move(outcomes[i].skip_reason)});
    }
  }
  return result;
}

void write_group_time_csv(const std::vector<GroupTimeEffect>& effects,
                          const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "g,t,event_time,estimate,std_error,p_value,n_treated,n_control\n";
  for (const auto& e : effects) {
    out << e.g << ',' << e.t << ',' << e.event_time << ','
        << format_double(e.estimate) << ',' << format_double(e.std_error)
        << ',' << format_double(e.p_value) << ',' << e.n_treated << ','
        << e.n_control << '\n';
  }
  if (!out) throw IoError("failed while writing '" + path + "'");
}

}  // namespace causalpanel
