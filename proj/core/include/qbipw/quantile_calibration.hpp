#pragma once

#include <Eigen/Dense>
#include <vector>

#include "qbipw/types.hpp"

namespace qbipw {

// Plain step function: 1 when t >= y.
inline double heaviside(double t, double y) { return t >= y ? 1.0 : 0.0; }

// Smooth logistic approximation of the step, used for diagnostics and
// plots only, never inside estimation.
double smooth_heaviside(double x, double steepness);

// Bracketing of a point t by the values of a sample:
//   lower  = largest sample value <= t (-inf when none),
//   upper  = smallest sample value >  t (+inf when none),
//   theta  = (t - lower) / (upper - lower), the interpolation weight given
//            to units sitting exactly at `upper`; 0 when lower is -inf or
//            the bracket is degenerate.
struct QuantileBreak {
  double lower = 0.0;
  double upper = 0.0;
  double theta = 0.0;
  double target = 0.0;     // the t the bracket was computed at
  bool degenerate = false; // all sample values identical
};

// Bracket of an arbitrary point t within `values`.
QuantileBreak bracket_at(const Eigen::VectorXd& values, double t);

// Bracket of the weighted interpolated alpha-quantile of (values, weights).
QuantileBreak compute_break(const Eigen::VectorXd& values,
                            const Eigen::VectorXd& weights, double alpha);

// Interpolated step: 1 when y <= lower(t), theta(t) when y equals upper(t),
// 0 when y > upper(t). Brackets are taken from `sample_values`.
double modified_heaviside(double t, double y, const Eigen::VectorXd& sample_values);

// Weighted interpolated distribution function at t. Piecewise linear and
// continuous above the smallest value; equals 0 below it, 1 at and above
// the largest. Weights must not be all zero.
double interpolated_cdf(const Eigen::VectorXd& weights,
                        const Eigen::VectorXd& values, double t);

// Smallest t with interpolated_cdf(weights, values, t) >= alpha. Exact
// inverse of interpolated_cdf away from the jump at the minimum.
double weighted_quantile(const Eigen::VectorXd& weights,
                         const Eigen::VectorXd& values, double alpha);

// One resolved quantile constraint: covariate column, level, and the
// bracket of the target quantile in the probability sample.
struct QuantileConstraint {
  int column = -1;
  double alpha = 0.0;
  QuantileBreak brk;
};

// Resolves the balance spec's quantile requests against the probability
// sample: targets are the weighted interpolated quantiles of S_B.
std::vector<QuantileConstraint> compute_breaks(const ProbSample& b,
                                               const BalanceSpec& spec);

// Constraint matrix for quantile calibration. Row k is
//   ( 1, a_k1, ..., a_kq )
// with a_kj = 1/N when x_kj <= lower_j, theta_j/N when x_kj equals upper_j
// (exact float comparison; upper_j is a copied sample value), 0 when
// x_kj > upper_j. Each a-column takes at most three distinct values.
Eigen::MatrixXd build_a_matrix(const Eigen::MatrixXd& X,
                               const std::vector<QuantileConstraint>& constraints,
                               double population_size);

// Targets matching build_a_matrix columns: (N, alpha_1, ..., alpha_q).
Eigen::VectorXd a_targets(const std::vector<QuantileConstraint>& constraints,
                          double population_size);

// Minimum chi-square calibration: adjusts d so that constraint totals are
// met exactly, w = d + diag(d) Z (Z' diag(d) Z)^-1 (t - Z'd). Throws
// identifiability_error when the weighted Gram matrix is singular.
Eigen::VectorXd calibrate_to_constraints(const Eigen::VectorXd& d,
                                         const Eigen::MatrixXd& Z,
                                         const Eigen::VectorXd& targets);

// Calibration to covariate totals: Z = X.
Eigen::VectorXd calibrate_totals(const Eigen::VectorXd& d,
                                 const Eigen::MatrixXd& X,
                                 const Eigen::VectorXd& targets);

// Calibration to the population size and quantile levels: Z is a
// build_a_matrix output, targets an a_targets output.
Eigen::VectorXd calibrate_quantiles(const Eigen::VectorXd& d,
                                    const Eigen::MatrixXd& a,
                                    const Eigen::VectorXd& targets);

}  // namespace qbipw
