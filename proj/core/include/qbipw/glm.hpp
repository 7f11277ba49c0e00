#pragma once

#include <Eigen/Dense>

namespace qbipw {

struct LinearFit {
  Eigen::VectorXd beta;
  double mse = 0.0;  // in-sample mean squared error
};

struct LogisticFit {
  Eigen::VectorXd beta;
  double deviance = 0.0;  // -2 log-likelihood at beta
  bool converged = false;
  int iterations = 0;
};

// Ordinary least squares; X must include its own intercept column if one is
// wanted. Throws identifiability_error when X is rank deficient.
LinearFit fit_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

// Logistic regression by Newton iteration with step halving on the
// deviance. y must be 0/1. Non-convergence (typically separation) returns
// the last iterate with converged = false; the deviance is still the exact
// deviance of the returned coefficients. Throws identifiability_error when
// X is rank deficient.
LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         int max_iterations = 60, double tolerance = 1e-10);

double logistic_deviance(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& beta);

}  // namespace qbipw
