#include "qbipw/glm.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "qbipw/errors.hpp"
#include "qbipw/math.hpp"

namespace qbipw {
namespace {

void require_design(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  if (X.rows() != y.size() || X.rows() == 0 || X.cols() == 0) {
    throw std::invalid_argument("regression design and response sizes do not match");
  }
}

[[noreturn]] void throw_rank_error(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr,
                                   Eigen::Index cols) {
  const auto rank = qr.rank();
  std::vector<int> dependent;
  const auto& perm = qr.colsPermutation().indices();
  for (Eigen::Index k = rank; k < cols; ++k) dependent.push_back(perm(k));
  std::string msg = "regression design is rank deficient (rank " +
                    std::to_string(rank) + " of " + std::to_string(cols) +
                    "); dependent columns:";
  for (int c : dependent) msg += " " + std::to_string(c);
  throw identifiability_error(msg, static_cast<int>(rank), static_cast<int>(cols),
                              dependent);
}

}  // namespace

LinearFit fit_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  require_design(X, y);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < X.cols()) throw_rank_error(qr, X.cols());

  LinearFit fit;
  fit.beta = qr.solve(y);
  fit.mse = (y - X * fit.beta).squaredNorm() / static_cast<double>(X.rows());
  return fit;
}

double logistic_deviance(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& beta) {
  const Eigen::VectorXd t = X * beta;
  double dev = 0.0;
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    dev += y(i) > 0.5 ? log1pexp(-t(i)) : log1pexp(t(i));
  }
  return 2.0 * dev;
}

LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         int max_iterations, double tolerance) {
  require_design(X, y);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) != 0.0 && y(i) != 1.0) {
      throw std::invalid_argument("logistic regression outcome must be 0/1");
    }
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> rank_qr(X);
  if (rank_qr.rank() < X.cols()) throw_rank_error(rank_qr, X.cols());

  LogisticFit fit;
  fit.beta = Eigen::VectorXd::Zero(X.cols());
  double dev = logistic_deviance(X, y, fit.beta);

  for (int iter = 1; iter <= max_iterations; ++iter) {
    fit.iterations = iter;
    const Eigen::VectorXd t = X * fit.beta;
    Eigen::VectorXd mu(t.size());
    Eigen::VectorXd w(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      mu(i) = expit(t(i));
      w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-12);
    }
    const Eigen::VectorXd grad = X.transpose() * (y - mu);
    const Eigen::MatrixXd hess = X.transpose() * w.asDiagonal() * X;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);

    double scale = 1.0;
    double dev_new = dev;
    Eigen::VectorXd beta_new = fit.beta;
    for (int half = 0; half < 40; ++half) {
      beta_new = fit.beta + scale * step;
      dev_new = logistic_deviance(X, y, beta_new);
      if (std::isfinite(dev_new) && dev_new <= dev + 1e-12) break;
      scale *= 0.5;
    }
    const double drop = dev - dev_new;
    fit.beta = beta_new;
    dev = dev_new;
    const double stall = tolerance * (1.0 + std::abs(dev));
    if (grad.lpNorm<Eigen::Infinity>() < stall ||
        (drop >= 0.0 && drop < stall && scale == 1.0)) {
      // A stalled fit whose linear predictor is saturated sits on a
      // separation plateau: the maximizer is at infinity, not here.
      fit.converged = (X * fit.beta).lpNorm<Eigen::Infinity>() <= 30.0;
      break;
    }
  }
  fit.deviance = dev;
  return fit;
}

}  // namespace qbipw
