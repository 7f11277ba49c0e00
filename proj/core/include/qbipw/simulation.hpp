#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "qbipw/estimators.hpp"
#include "qbipw/propensity.hpp"
#include "qbipw/types.hpp"

namespace qbipw {

// Outcome surfaces. Linear: 1 + x1 + x2 + alpha (+ eps for the continuous
// outcome). Quadratic: 0.5 (x1 - 1.5)^2 + x2^2 + alpha (+ eps). The binary
// variants pass the same linear predictor through expit.
double linear_outcome(double x1, double x2, double alpha, double eps);
double quadratic_outcome(double x1, double x2, double alpha, double eps);
double linear_outcome_prob(double x1, double x2, double alpha);
double quadratic_outcome_prob(double x1, double x2, double alpha);

// Participation probabilities. Linear: expit(x2), about 73% of units in.
// Quadratic: expit(-3 + (x1 - 1.5)^2 + (x2 - 2)^2), about half of them in
// and badly misspecified for a linear-logit working model.
double participation_prob_linear(double x2);
double participation_prob_quadratic(double x1, double x2);

enum class OutcomeDesign { Linear, Quadratic };
enum class ParticipationDesign { Linear, Quadratic };

// Finite population with every random quantity drawn up front, in a fixed
// per-unit order (x1, x2, alpha, eps, binary outcome uniforms), so the frame
// is a pure function of (size, seed).
struct PopulationFrame {
  Eigen::VectorXd x1;          // N(1, 1)
  Eigen::VectorXd x2;          // Exp(1)
  Eigen::VectorXd alpha;       // N(0, 1), shared between outcome models
  Eigen::VectorXd eps;         // N(0, 1), continuous outcomes only
  Eigen::VectorXd y_linear;    // continuous outcomes
  Eigen::VectorXd y_quadratic;
  Eigen::VectorXd yb_linear;   // binary outcomes (0/1)
  Eigen::VectorXd yb_quadratic;

  Eigen::Index size() const { return x1.size(); }
};

PopulationFrame generate_population(Eigen::Index n, std::uint64_t seed);

const Eigen::VectorXd& outcome_column(const PopulationFrame& frame,
                                      OutcomeDesign design, OutcomeKind kind);

// Poisson participation draw: one uniform per unit against the model
// probability. Covariates are (x1, x2); the outcome column matches
// (design, kind).
NonProbSample select_nonprob(const PopulationFrame& frame,
                             ParticipationDesign participation,
                             OutcomeDesign design, OutcomeKind kind,
                             std::uint64_t seed);

// Simple random sample without replacement, rows in population order,
// constant weight N / n.
ProbSample select_prob(const PopulationFrame& frame, Eigen::Index n,
                       std::uint64_t seed);

// Constraint diagnostics for a set of S_A weights:
//   nu_n   = | sum_A w - sum_B d |
//   nu_tau = l2 norm of (sum_A w x - sum_B d x) over `columns`
//   nu_q   = l2 norm of the weighted-quantile gaps over columns x levels
struct NuMetrics {
  double nu_n = std::numeric_limits<double>::quiet_NaN();
  double nu_q = std::numeric_limits<double>::quiet_NaN();
  double nu_tau = std::numeric_limits<double>::quiet_NaN();
};

NuMetrics constraint_quality(const Eigen::VectorXd& weights,
                             const NonProbSample& a, const ProbSample& b,
                             const std::vector<int>& columns,
                             const std::vector<double>& levels);

// Inverse-propensity weights of a fit.
NuMetrics constraint_quality(const PropensityFit& fit, const NonProbSample& a,
                             const ProbSample& b, const std::vector<int>& columns,
                             const std::vector<double>& levels);

struct ScenarioConfig {
  int scenario = 1;  // 1: linear/linear .. 4: quadratic/quadratic
  OutcomeKind outcome = OutcomeKind::Continuous;
  Eigen::Index population_size = 20000;
  Eigen::Index sample_size = 500;  // probability sample
  int replicates = 100;
  std::uint64_t seed = 20240501;
  int threads = 1;
  bool analytic_ci = true;                // sandwich CI for propensity rows
  std::vector<std::string> estimators;    // empty: all of estimator_ids()
  int nn_neighbors = 5;
  SolverOptions solver;
};

const char* scenario_label(int scenario);  // "I".."IV"
OutcomeDesign scenario_outcome_design(int scenario);
ParticipationDesign scenario_participation_design(int scenario);

// One estimator on one replicate. `usable` gates entry into bias and RMSE
// summaries (converged fits and error-free direct estimators); constraint
// diagnostics are kept for every fit that produced coefficients, converged
// or not.
struct ReplicateEstimate {
  double point = std::numeric_limits<double>::quiet_NaN();
  bool usable = false;
  bool has_ci = false;
  double ci_lower = std::numeric_limits<double>::quiet_NaN();
  double ci_upper = std::numeric_limits<double>::quiet_NaN();
  bool has_nu = false;
  NuMetrics nu;
};

struct MetricRow {
  std::string id;
  int used = 0;      // usable replicates entering bias/SE/RMSE
  int excluded = 0;  // replicates dropped (non-convergence or errors)
  double bias_x100 = std::numeric_limits<double>::quiet_NaN();
  double se_x100 = std::numeric_limits<double>::quiet_NaN();
  double rmse_x100 = std::numeric_limits<double>::quiet_NaN();
  int ci_count = 0;  // usable replicates that also carried an interval
  double coverage_pct = std::numeric_limits<double>::quiet_NaN();
  double ci_length_x100 = std::numeric_limits<double>::quiet_NaN();
  int nu_count = 0;
  double nu_n_mean = std::numeric_limits<double>::quiet_NaN();
  double nu_n_median = std::numeric_limits<double>::quiet_NaN();
  double nu_q_mean = std::numeric_limits<double>::quiet_NaN();
  double nu_q_median = std::numeric_limits<double>::quiet_NaN();
  double nu_tau_mean = std::numeric_limits<double>::quiet_NaN();
  double nu_tau_median = std::numeric_limits<double>::quiet_NaN();
};

// Monte Carlo summaries over the usable replicates: bias, the replicate
// standard deviation (n-1 divisor), rmse = sqrt(bias^2 + se^2), all times
// 100; interval coverage and mean length over replicates with an interval;
// mean and median of each constraint diagnostic over replicates with one.
MetricRow summarize_estimates(const std::string& id, double truth,
                              const std::vector<ReplicateEstimate>& cells);

struct ScenarioResult {
  ScenarioConfig config;
  double truth = 0.0;
  std::vector<std::string> ids;
  std::vector<MetricRow> rows;                        // one per id
  std::vector<std::vector<ReplicateEstimate>> cells;  // [id][replicate]
};

// Fixed population per (scenario, seed); replicate r reseeds through
// Rng::derive, so results are independent of the thread count.
ScenarioResult run_scenario(const ScenarioConfig& config);

// CSV emitters. Headers carry the library version and the scenario
// configuration (never the worker count, which must not affect output).
void write_metrics_csv(const ScenarioResult& result, const std::string& path);
void write_coverage_csv(const ScenarioResult& result, const std::string& path);
void write_quality_csv(const ScenarioResult& result, const std::string& path);
void write_replicates_csv(const ScenarioResult& result, const std::string& path);

}  // namespace qbipw
