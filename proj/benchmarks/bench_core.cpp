#include <benchmark/benchmark.h>

#include <Eigen/Dense>

#include "qbipw/estimators.hpp"
#include "qbipw/propensity.hpp"
#include "qbipw/quantile_calibration.hpp"
#include "qbipw/rng.hpp"
#include "qbipw/types.hpp"
#include "qbipw/variance.hpp"

using namespace qbipw;

namespace {

struct Pair {
  NonProbSample a;
  ProbSample b;
};

Pair make_pair(Eigen::Index n_a, Eigen::Index n_b) {
  Rng rng(1234);
  Pair p;
  p.a.X.resize(n_a, 2);
  p.a.y.resize(n_a);
  p.a.columns = {"x1", "x2"};
  for (Eigen::Index i = 0; i < n_a; ++i) {
    p.a.X(i, 0) = rng.normal(0.3, 1.0);
    p.a.X(i, 1) = rng.normal(0.3, 1.0);
    p.a.y[i] = 1.0 + p.a.X(i, 0) + p.a.X(i, 1) + rng.normal();
  }
  p.b.X.resize(n_b, 2);
  p.b.d.resize(n_b);
  p.b.columns = {"x1", "x2"};
  for (Eigen::Index i = 0; i < n_b; ++i) {
    p.b.X(i, 0) = rng.normal();
    p.b.X(i, 1) = rng.normal();
    p.b.d[i] = 10.0 + 5.0 * rng.uniform();
  }
  return p;
}

BalanceSpec quartile_spec() {
  BalanceSpec spec;
  spec.total_columns = {0, 1};
  spec.quantile_columns = {{0, {0.25, 0.5, 0.75}}, {1, {0.25, 0.5, 0.75}}};
  return spec;
}

void BM_SolveGee(benchmark::State& state) {
  const Pair p = make_pair(state.range(0), state.range(0) / 2);
  const Design design = build_design(p.a, p.b, quartile_spec());
  for (auto _ : state) {
    const PropensityFit fit = solve_gee(design.za, design.zb, p.b.d);
    benchmark::DoNotOptimize(fit.eta);
  }
}
BENCHMARK(BM_SolveGee)->Arg(500)->Arg(2000);

void BM_SolveMle(benchmark::State& state) {
  const Pair p = make_pair(state.range(0), state.range(0) / 2);
  const Design design = build_design(p.a, p.b, quartile_spec());
  for (auto _ : state) {
    const PropensityFit fit = solve_mle(design.za, design.zb, p.b.d);
    benchmark::DoNotOptimize(fit.eta);
  }
}
BENCHMARK(BM_SolveMle)->Arg(500)->Arg(2000);

void BM_WeightedQuantile(benchmark::State& state) {
  Rng rng(9);
  const Eigen::Index n = state.range(0);
  Eigen::VectorXd values(n), weights(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    values[i] = rng.normal();
    weights[i] = 1.0 + rng.uniform();
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(weighted_quantile(weights, values, 0.5));
  }
}
BENCHMARK(BM_WeightedQuantile)->Arg(1000)->Arg(100000);

void BM_CalibrateQuantiles(benchmark::State& state) {
  const Pair p = make_pair(100, state.range(0));
  const auto constraints = compute_breaks(p.b, quartile_spec());
  const double n_pop = p.b.weight_sum();
  const Eigen::MatrixXd a = build_a_matrix(p.b.X, constraints, n_pop);
  const Eigen::VectorXd targets = a_targets(constraints, n_pop);
  for (auto _ : state) {
    const Eigen::VectorXd w = calibrate_quantiles(p.b.d, a, targets);
    benchmark::DoNotOptimize(w);
  }
}
BENCHMARK(BM_CalibrateQuantiles)->Arg(500)->Arg(5000);

void BM_SandwichVariance(benchmark::State& state) {
  const Pair p = make_pair(state.range(0), state.range(0) / 2);
  const Design design = build_design(p.a, p.b, quartile_spec());
  const PropensityFit fit = solve_gee(design.za, design.zb, p.b.d);
  const double tau = ipw_mean(p.a.y, fit.pi_a, IpwVersion::Hajek);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sandwich_variance(tau, fit, p.a, p.b, design));
  }
}
BENCHMARK(BM_SandwichVariance)->Arg(500)->Arg(2000);

}  // namespace

BENCHMARK_MAIN();
