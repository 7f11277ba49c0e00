#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace qbipw {

enum class OutcomeKind { Continuous, Binary };

// Non-probability sample: covariates and the study outcome, no design
// weights and no known selection mechanism.
struct NonProbSample {
  Eigen::MatrixXd X;                  // n_A x p
  Eigen::VectorXd y;                  // n_A
  std::vector<std::string> columns;   // p names, aligned with X

  Eigen::Index size() const { return X.rows(); }
};

// Probability (reference) sample: covariates with design weights, no
// outcome. Optional stratum labels drive the stratified bootstrap.
struct ProbSample {
  Eigen::MatrixXd X;                  // n_B x p
  Eigen::VectorXd d;                  // n_B design weights, all > 0
  std::vector<std::string> columns;   // p names, aligned with X
  std::optional<Eigen::VectorXi> strata;

  Eigen::Index size() const { return X.rows(); }
  double weight_sum() const { return d.sum(); }
};

// Quantile constraints requested for one covariate column.
struct QuantileRequest {
  int column = -1;
  std::vector<double> levels;  // each in (0,1), sorted, duplicate-free
};

// Which population features the weights must reproduce: totals of selected
// columns, quantiles of selected columns at given levels, and the intercept
// (population size) row.
struct BalanceSpec {
  std::vector<int> total_columns;
  std::vector<QuantileRequest> quantile_columns;
  bool include_intercept = true;
  // Population size used to scale quantile constraint columns and as the
  // intercept target; defaults to sum of the probability-sample weights.
  std::optional<double> population_size;

  double resolved_population_size(const ProbSample& b) const {
    return population_size ? *population_size : b.weight_sum();
  }
  int quantile_count() const {
    int n = 0;
    for (const auto& q : quantile_columns) n += static_cast<int>(q.levels.size());
    return n;
  }
};

// Structural checks on a sample pair and balance spec. Returns a list of
// human-readable violations, empty when the inputs are usable. Pure; never
// throws, never mutates.
std::vector<std::string> validate_pair(const NonProbSample& a,
                                       const ProbSample& b,
                                       const BalanceSpec& spec);

}  // namespace qbipw
