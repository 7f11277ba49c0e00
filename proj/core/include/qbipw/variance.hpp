#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "qbipw/estimators.hpp"
#include "qbipw/propensity.hpp"
#include "qbipw/types.hpp"

namespace qbipw {

// Symmetric normal-theory interval around a point estimate.
std::pair<double, double> normal_ci(double point, double se, double level = 0.95);

// Stacked estimating function for (tau, eta): first component the weighted
// outcome equation, remaining components the propensity estimating function
// (gee_g or score_u, shared code path), everything divided by the
// population size.
Eigen::VectorXd stacked_phi(double tau, const Eigen::VectorXd& eta,
                            const NonProbSample& a, const ProbSample& b,
                            const Design& design, PropensityMethod method,
                            IpwVersion version = IpwVersion::Hajek);

struct SandwichOptions {
  IpwVersion version = IpwVersion::Hajek;
  // Replace the analytic bread with central finite differences of
  // stacked_phi (slower; cross-check or fallback).
  bool fd_bread = false;
};

struct SandwichPieces {
  Eigen::MatrixXd bread;   // (1+J) x (1+J), d phi / d (tau, eta)
  Eigen::MatrixXd meat;    // meat_a + meat_b
  Eigen::MatrixXd meat_a;  // participation (Poisson) component from S_A
  Eigen::MatrixXd meat_b;  // design component from S_B, with-replacement form
  double variance = 0.0;   // (bread^-1 meat bread^-T)(0, 0)
};

// Evaluates all sandwich pieces at the fitted propensity and the point
// estimate tau. The bread is inverted by a rank-revealing solve, so at a
// boundary fit the variance is conditional on the attainable constraint
// face; a fully degenerate bread throws estimation_error.
SandwichPieces sandwich_pieces(double tau, const PropensityFit& fit,
                               const NonProbSample& a, const ProbSample& b,
                               const Design& design,
                               const SandwichOptions& options = {});

double sandwich_variance(double tau, const PropensityFit& fit,
                         const NonProbSample& a, const ProbSample& b,
                         const Design& design, const SandwichOptions& options = {});

struct BootstrapOptions {
  int replicates = 500;
  std::uint64_t seed = 1;
  int threads = 1;
  double max_failure_share = 0.10;
  double ci_level = 0.95;
};

struct BootstrapResult {
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  int replicates = 0;               // successful replicates
  int failures = 0;
  std::vector<double> estimates;    // per replicate, NaN where failed
};

// Resamples S_A by simple random sampling with replacement and S_B by the
// same within each stratum (globally when no strata are present), then
// re-runs the full estimator on each pair; quantile and total targets are
// therefore re-estimated from every resampled S_B. The replicate seed is a
// pure function of (seed, replicate index), so results do not depend on the
// worker count. se is the replicate standard deviation; the interval is the
// percentile interval at ci_level. Throws estimation_error when more than
// max_failure_share of the replicates fail.
BootstrapResult bootstrap_variance(
    const std::function<double(const NonProbSample&, const ProbSample&)>& estimator,
    const NonProbSample& a, const ProbSample& b, const BootstrapOptions& options = {});

}  // namespace qbipw
