// Tests for the logistic regression fitter.  The key oracle is the maximum
// likelihood score equation X' (y - p) = 0, which any interior optimum must
// satisfy regardless of how the optimizer got there; a small
// separable-by-hand problem pins the coefficients themselves.
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "causalpanel/errors.hpp"
#include "causalpanel/logistic.hpp"
#include "doctest.h"

namespace cp = causalpanel;

namespace {

// Deterministic xorshift so fixtures never depend on library RNG details.
struct MiniRng {
  std::uint64_t s;
  explicit MiniRng(std::uint64_t seed) : s(seed ^ 0x9E3779B97F4A7C15ULL) {}
  double uniform() {
    s ^= s << 13;
    s ^= s >> 7;
    s ^= s << 17;
    return static_cast<double>(s >> 11) * 0x1.0p-53;
  }
  double normal() {
    // Box-Muller on two uniforms.
    const double u = std::max(uniform(), 1e-16);
    const double v = uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586 * v);
  }
};

// A well-conditioned synthetic logistic problem.
void make_problem(int n, Eigen::MatrixXd& X, Eigen::VectorXd& y,
                  std::uint64_t seed) {
  MiniRng rng(seed);
  X.resize(n, 3);
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    X(i, 2) = rng.normal() * 0.5 + 0.3 * X(i, 1);
    const double eta = -0.4 + 0.9 * X(i, 1) - 1.3 * X(i, 2);
    const double p = 1.0 / (1.0 + std::exp(-eta));
    y(i) = rng.uniform() < p ? 1.0 : 0.0;
  }
}

}  // namespace

TEST_CASE("fit satisfies the maximum-likelihood score equations") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  make_problem(400, X, y, 7);

  const auto fit = cp::fit_logistic_irls(X, y);
  REQUIRE(fit.beta.size() == 3);
  // At an interior optimum the gradient X'(y - p) vanishes.
  const Eigen::VectorXd score = X.transpose() * (y - fit.fitted);
  CHECK(score.lpNorm<Eigen::Infinity>() < 1e-6);

  // Fitted values match the coefficients they came with.
  for (int i = 0; i < 10; ++i) {
    const double eta = X.row(i).dot(fit.beta);
    CHECK(fit.fitted(i) == doctest::Approx(1.0 / (1.0 + std::exp(-eta)))
                               .epsilon(1e-12));
  }
  CHECK(fit.iterations > 0);
  CHECK(std::isfinite(fit.loglik));

  // The reported log-likelihood is the Bernoulli log-likelihood at beta.
  double ll = 0.0;
  for (int i = 0; i < X.rows(); ++i) {
    const double p = fit.fitted(i);
    ll += y(i) > 0.5 ? std::log(p) : std::log(1.0 - p);
  }
  CHECK(fit.loglik == doctest::Approx(ll).epsilon(1e-9));
}

TEST_CASE("grouped-data fit matches the closed-form log odds") {
  // One binary regressor; the MLE is the empirical log odds within each
  // group.  Group x=0: 30 of 100 positive.  Group x=1: 70 of 100 positive.
  const int n = 200;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const bool second = i >= 100;
    X(i, 0) = 1.0;
    X(i, 1) = second ? 1.0 : 0.0;
    const int within = i % 100;
    y(i) = within < (second ? 70 : 30) ? 1.0 : 0.0;
  }
  const auto fit = cp::fit_logistic_irls(X, y);
  const double logit30 = std::log(0.3 / 0.7);
  const double logit70 = std::log(0.7 / 0.3);
  CHECK(fit.beta(0) == doctest::Approx(logit30).epsilon(1e-8));
  CHECK(fit.beta(1) == doctest::Approx(logit70 - logit30).epsilon(1e-8));
}

TEST_CASE("intercept-only fit recovers the sample mean") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(10, 1);
  Eigen::VectorXd y(10);
  y << 1, 0, 0, 1, 1, 1, 0, 1, 0, 1;  // 6 of 10
  const auto fit = cp::fit_logistic_irls(X, y);
  CHECK(fit.beta(0) == doctest::Approx(std::log(0.6 / 0.4)).epsilon(1e-9));
  CHECK(fit.fitted(3) == doctest::Approx(0.6).epsilon(1e-9));
}

TEST_CASE("rank-deficient designs are rejected") {
  Eigen::MatrixXd X(6, 3);
  Eigen::VectorXd y(6);
  for (int i = 0; i < 6; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = i;
    X(i, 2) = 2.0 * i;  // collinear with column 1
    y(i) = i % 2;
  }
  CHECK_THROWS_AS(cp::fit_logistic_irls(X, y), cp::SingularDesignError);
}

TEST_CASE("iteration cap raises instead of returning a bad fit") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  make_problem(200, X, y, 11);
  CHECK_THROWS_AS(cp::fit_logistic_irls(X, y, 1e-8, 1),
                  cp::NonConvergenceError);
}

TEST_CASE("fits are deterministic") {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  make_problem(300, X, y, 23);
  const auto a = cp::fit_logistic_irls(X, y);
  const auto b = cp::fit_logistic_irls(X, y);
  CHECK(a.beta == b.beta);
  CHECK(a.fitted == b.fitted);
  CHECK(a.loglik == b.loglik);
  CHECK(a.iterations == b.iterations);
}
