#pragma once

#include <Eigen/Dense>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qbipw/propensity.hpp"
#include "qbipw/types.hpp"

namespace qbipw {

// How the inverse-probability weighted sum is normalized: by a known
// population size, or by the estimated size sum(1 / pi) (Hajek form).
enum class IpwVersion { FixedN, Hajek };

enum class VarianceMethod { None, Analytic, Bootstrap };

struct EstimateResult {
  double point = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> se;
  std::optional<double> ci_lower;
  std::optional<double> ci_upper;
  std::string estimator_id;
  VarianceMethod variance_method = VarianceMethod::None;
  std::optional<PropensityFit> fit;
  std::vector<std::string> notes;
};

// Unweighted mean of the non-probability outcome.
double naive_mean(const NonProbSample& a);

// Inverse-probability weighted mean of y. All propensities must be finite
// and strictly positive.
double ipw_mean(const Eigen::VectorXd& y, const Eigen::VectorXd& pi,
                IpwVersion version, double population_size = 0.0);

// Full pipeline: build the balanced design (totals and quantile columns),
// fit the propensity by the requested method, weight the outcome. The
// returned fit carries convergence and constraint diagnostics.
EstimateResult qbipw_mean(const NonProbSample& a, const ProbSample& b,
                          const BalanceSpec& spec, PropensityMethod method,
                          IpwVersion version = IpwVersion::Hajek,
                          const SolverOptions& solver = {});

// Mass imputation through a regression model fit on the non-probability
// sample and predicted on the probability sample: linear for continuous
// outcomes, logistic for binary. `covariates` lists X columns (empty: all).
// When `augment` is non-null its quantile constraint columns are appended
// to the regression design of both samples.
double mi_glm(const NonProbSample& a, const ProbSample& b, OutcomeKind kind,
              std::vector<int> covariates = {},
              const BalanceSpec* augment = nullptr);

// Mass imputation by k nearest neighbours in Euclidean distance on
// covariates standardized by the non-probability sample's mean and standard
// deviation. Distance ties break toward the lowest S_A row index.
double mi_nn(const NonProbSample& a, const ProbSample& b, int k = 5,
             std::vector<int> covariates = {});

// Doubly robust mean: inverse-probability weighted outcome-model residuals
// plus the design-weighted outcome-model total, normalized by sum(d).
EstimateResult dr_mean(const NonProbSample& a, const ProbSample& b,
                       const BalanceSpec& spec, PropensityMethod method,
                       OutcomeKind kind, const SolverOptions& solver = {});

// Stable estimator identifiers accepted by the dispatcher below.
const std::vector<std::string>& estimator_ids();

struct EstimatorSpec {
  std::string id;          // one of estimator_ids()
  BalanceSpec balance;     // totals always; quantile levels for qbipw ids
  IpwVersion version = IpwVersion::Hajek;
  OutcomeKind outcome = OutcomeKind::Continuous;
  int nn_neighbors = 5;
  SolverOptions solver;
};

// Point estimate by estimator id. qbipw1/qbipw2 fill quartile/decile levels
// into quantile requests that carry none; ipw and dr ids drop quantile
// columns entirely. No variance is attached here.
EstimateResult run_point_estimator(const EstimatorSpec& spec,
                                   const NonProbSample& a, const ProbSample& b);

}  // namespace qbipw
