// Maximum-likelihood logistic regression via iteratively reweighted least
// squares, used to fit treatment propensities.  Convergence is assessed on
// the log-likelihood; a decrease triggers step-halving toward the previous
// iterate so the fit is deterministic.
#pragma once

#include <Eigen/Dense>

namespace causalpanel {

struct LogisticFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd fitted;  // P(y = 1 | x) per row
  double loglik = 0.0;
  int iterations = 0;
};

// X must include any intercept column.  Throws SingularDesign when X has
// deficient column rank and NonConvergence when the iteration cap is hit.
LogisticFit fit_logistic_irls(const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& y,
                              double loglik_tolerance = 1e-8,
                              int max_iterations = 100);

}  // namespace causalpanel
