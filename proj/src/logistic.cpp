#include "causalpanel/logistic.hpp"

#include <cfloat>
#include <cmath>

#include "causalpanel/errors.hpp"

namespace causalpanel {

namespace {

// Numerically safe sigmoid, clipped away from 0/1 so weights and the
// log-likelihood stay finite.
double sigmoid_clipped(double eta) {
  double p;
  if (eta >= 0) {
    p = 1.0 / (1.0 + std::exp(-eta));
  } else {
    const double e = std::exp(eta);
    p = e / (1.0 + e);
  }
  const double eps = DBL_EPSILON;
  if (p < eps) return eps;
  if (p > 1.0 - eps) return 1.0 - eps;
  return p;
}

double bernoulli_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& p) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    ll += y[i] * std::log(p[i]) + (1.0 - y[i]) * std::log(1.0 - p[i]);
  }
  return ll;
}

}  // namespace

LogisticFit fit_logistic_irls(const Eigen::MatrixXd& X,
                              const Eigen::VectorXd& y,
                              double loglik_tolerance, int max_iterations) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (n != y.size()) throw Error("design and response sizes disagree");
  {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    if (qr.rank() < p) {
      throw SingularDesignError(
          "propensity design matrix has deficient column rank");
    }
  }

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd fitted(n);
  for (Eigen::Index i = 0; i < n; ++i) fitted[i] = sigmoid_clipped(0.0);
  double ll = bernoulli_loglik(y, fitted);

  LogisticFit result;
  for (int iter = 1; iter <= max_iterations; ++iter) {
    // Weighted least squares on the working response z = eta + (y - p)/w.
    Eigen::VectorXd w(n);
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double wi = std::max(fitted[i] * (1.0 - fitted[i]), 1e-10);
      w[i] = wi;
      z[i] = eta[i] + (y[i] - fitted[i]) / wi;
    }
    const Eigen::MatrixXd Xw = X.array().colwise() * w.array();
    const Eigen::MatrixXd XtWX = X.transpose() * Xw;
    const Eigen::VectorXd XtWz = Xw.transpose() * z;
    Eigen::LDLT<Eigen::MatrixXd> solver(XtWX);
    if (solver.info() != Eigen::Success) {
      throw SingularDesignError("weighted normal equations are singular");
    }
    Eigen::VectorXd proposal = solver.solve(XtWz);

    // Step-halving keeps the likelihood monotone even from poor iterates.
    double new_ll = -HUGE_VAL;
    Eigen::VectorXd new_eta(n), new_fitted(n);
    double step = 1.0;
    for (int halving = 0; halving < 30; ++halving) {
      const Eigen::VectorXd candidate = beta + step * (proposal - beta);
      new_eta = X * candidate;
      for (Eigen::Index i = 0; i < n; ++i) {
        new_fitted[i] = sigmoid_clipped(new_eta[i]);
      }
      new_ll = bernoulli_loglik(y, new_fitted);
      if (std::isfinite(new_ll) && new_ll >= ll - 1e-12) {
        proposal = candidate;
        break;
      }
      step *= 0.5;
    }

    beta = proposal;
    eta = new_eta;
    fitted = new_fitted;
    const double improvement = std::fabs(new_ll - ll);
    ll = new_ll;
    if (improvement < loglik_tolerance) {
      result.beta = beta;
      result.fitted = fitted;
      result.loglik = ll;
      result.iterations = iter;
      return result;
    }
  }
  throw NonConvergenceError(
      "logistic regression did not converge within " +
      std::to_string(max_iterations) + " iterations");
}

}  // namespace causalpanel
