#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "qbipw/quantile_calibration.hpp"
#include "qbipw/types.hpp"

namespace qbipw {

enum class PropensityMethod { Mle, Gee };

// Identifiability conditions: B1 requires the non-probability design Gram
// (sum of z z' over S_A) to be positive definite and guarantees a unique
// calibrated (GEE) solution; B2 requires the same over S_B and guarantees a
// unique pseudo-likelihood (MLE) solution.
enum class IdentCondition { B1, B2 };

struct GramVerdict {
  bool ok = false;
  int rank = 0;
  int dimension = 0;
  double min_eigenvalue = 0.0;
  double max_eigenvalue = 0.0;
  std::vector<int> dependent_columns;

  int nullity() const { return dimension - rank; }
};

// Positive definiteness of Z'Z after bringing columns to unit max-abs
// scale (rank is scale-invariant; the scaling keeps the eigenvalue test
// meaningful when columns differ by orders of magnitude).
GramVerdict check_identifiability(const Eigen::MatrixXd& z, IdentCondition which);

// Shared design for both samples: [intercept | balanced covariates |
// quantile constraint columns]. Quantile columns are built from probability
// sample brackets and applied to both samples with the same breakpoints.
struct Design {
  Eigen::MatrixXd za;  // n_A x J
  Eigen::MatrixXd zb;  // n_B x J
  std::vector<std::string> labels;
  std::vector<QuantileConstraint> quantile_constraints;
  double population_size = 0.0;
  bool has_intercept = true;

  Eigen::Index width() const { return za.cols(); }
};

Design build_design(const NonProbSample& a, const ProbSample& b,
                    const BalanceSpec& spec);

// Pseudo log-likelihood of the logistic participation model:
//   sum_{S_A} z'eta - sum_{S_B} d log(1 + exp(z'eta)).
double pseudo_log_likelihood(const Eigen::VectorXd& eta, const Eigen::MatrixXd& za,
                             const Eigen::MatrixXd& zb, const Eigen::VectorXd& d);

// Score of the pseudo log-likelihood: sum_{S_A} z - sum_{S_B} d pi z.
Eigen::VectorXd score_u(const Eigen::VectorXd& eta, const Eigen::MatrixXd& za,
                        const Eigen::MatrixXd& zb, const Eigen::VectorXd& d);

// Jacobian of score_u: -sum_{S_B} d pi (1 - pi) z z'.
Eigen::MatrixXd score_u_jacobian(const Eigen::VectorXd& eta, const Eigen::MatrixXd& za,
                                 const Eigen::MatrixXd& zb, const Eigen::VectorXd& d);

// Calibrated estimating function: sum_{S_A} z / pi - sum_{S_B} d z. A root
// makes the inverse-probability weights reproduce every design column total
// (population size, covariate totals, quantile levels).
Eigen::VectorXd gee_g(const Eigen::VectorXd& eta, const Eigen::MatrixXd& za,
                      const Eigen::MatrixXd& zb, const Eigen::VectorXd& d);

// Jacobian of gee_g: -sum_{S_A} ((1 - pi) / pi) z z'.
Eigen::MatrixXd gee_g_jacobian(const Eigen::VectorXd& eta, const Eigen::MatrixXd& za,
                               const Eigen::MatrixXd& zb, const Eigen::VectorXd& d);

struct SolverOptions {
  int max_iterations = 100;
  // Convergence test on the max-norm of the estimating function after each
  // component is divided by the natural size of its row (the corresponding
  // design total), so the tolerance is effectively relative.
  double tolerance = 1e-8;
  // Abort threshold on the internally scaled coefficient norm; hitting it
  // is reported as (quasi-)separation, not convergence failure.
  double separation_norm = 1e4;
  std::optional<Eigen::VectorXd> start;  // in original design coordinates
};

struct PropensityFit {
  Eigen::VectorXd eta;                   // original design coordinates
  Eigen::VectorXd pi_a;                  // fitted propensities, S_A rows
  Eigen::VectorXd pi_b;                  // fitted propensities, S_B rows
  PropensityMethod method = PropensityMethod::Mle;
  bool converged = false;
  int iterations = 0;
  double residual_norm = 0.0;            // scaled max-norm at exit
  Eigen::VectorXd constraint_residuals;  // scaled |F_j| per design column
  std::string message;                   // empty when converged
};

// Maximizes the pseudo log-likelihood (root of score_u). Requires B2.
PropensityFit solve_mle(const Eigen::MatrixXd& za, const Eigen::MatrixXd& zb,
                        const Eigen::VectorXd& d, const SolverOptions& options = {});

// Solves gee_g = 0. Requires B1.
PropensityFit solve_gee(const Eigen::MatrixXd& za, const Eigen::MatrixXd& zb,
                        const Eigen::VectorXd& d, const SolverOptions& options = {});

}  // namespace qbipw
