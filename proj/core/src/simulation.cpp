#include "qbipw/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>

#include "qbipw/errors.hpp"
#include "qbipw/math.hpp"
#include "qbipw/parallel.hpp"
#include "qbipw/quantile_calibration.hpp"
#include "qbipw/rng.hpp"
#include "qbipw/variance.hpp"
#include "qbipw/version.hpp"

namespace qbipw {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double linear_predictor_quadratic(double x1, double x2, double alpha) {
  return 0.5 * (x1 - 1.5) * (x1 - 1.5) + x2 * x2 + alpha;
}

std::string fmt(double v, const char* spec = "%.10g") {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return kNan;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  return out;
}

void write_header(std::ofstream& out, const ScenarioResult& r) {
  out << "# qbipw " << version << "\n";
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "# scenario=%s outcome=%s population=%lld sample=%lld "
                "replicates=%d seed=%llu\n",
                scenario_label(r.config.scenario),
                r.config.outcome == OutcomeKind::Binary ? "binary" : "continuous",
                static_cast<long long>(r.config.population_size),
                static_cast<long long>(r.config.sample_size), r.config.replicates,
                static_cast<unsigned long long>(r.config.seed));
  out << buf;
  out << "# truth=" << fmt(r.truth, "%.17g") << "\n";
}

}  // namespace

double linear_outcome(double x1, double x2, double alpha, double eps) {
  return 1.0 + x1 + x2 + alpha + eps;
}

double quadratic_outcome(double x1, double x2, double alpha, double eps) {
  return linear_predictor_quadratic(x1, x2, alpha) + eps;
}

double linear_outcome_prob(double x1, double x2, double alpha) {
  return expit(1.0 + x1 + x2 + alpha);
}

double quadratic_outcome_prob(double x1, double x2, double alpha) {
  return expit(linear_predictor_quadratic(x1, x2, alpha));
}

double participation_prob_linear(double x2) { return expit(x2); }

double participation_prob_quadratic(double x1, double x2) {
  return expit(-3.0 + (x1 - 1.5) * (x1 - 1.5) + (x2 - 2.0) * (x2 - 2.0));
}

PopulationFrame generate_population(Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("population size must be positive");
  PopulationFrame f;
  f.x1.resize(n);
  f.x2.resize(n);
  f.alpha.resize(n);
  f.eps.resize(n);
  f.y_linear.resize(n);
  f.y_quadratic.resize(n);
  f.yb_linear.resize(n);
  f.yb_quadratic.resize(n);
  Rng rng(seed);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double x1 = rng.normal(1.0, 1.0);
    const double x2 = rng.exponential();
    const double alpha = rng.normal();
    const double eps = rng.normal();
    const double u_lin = rng.uniform();
    const double u_quad = rng.uniform();
    f.x1[k] = x1;
    f.x2[k] = x2;
    f.alpha[k] = alpha;
    f.eps[k] = eps;
    f.y_linear[k] = linear_outcome(x1, x2, alpha, eps);
    f.y_quadratic[k] = quadratic_outcome(x1, x2, alpha, eps);
    f.yb_linear[k] = u_lin < linear_outcome_prob(x1, x2, alpha) ? 1.0 : 0.0;
    f.yb_quadratic[k] = u_quad < quadratic_outcome_prob(x1, x2, alpha) ? 1.0 : 0.0;
  }
  return f;
}

const Eigen::VectorXd& outcome_column(const PopulationFrame& frame,
                                      OutcomeDesign design, OutcomeKind kind) {
  if (kind == OutcomeKind::Continuous)
    return design == OutcomeDesign::Linear ? frame.y_linear : frame.y_quadratic;
  return design == OutcomeDesign::Linear ? frame.yb_linear : frame.yb_quadratic;
}

NonProbSample select_nonprob(const PopulationFrame& frame,
                             ParticipationDesign participation,
                             OutcomeDesign design, OutcomeKind kind,
                             std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < frame.size(); ++k) {
    const double p = participation == ParticipationDesign::Linear
                         ? participation_prob_linear(frame.x2[k])
                         : participation_prob_quadratic(frame.x1[k], frame.x2[k]);
    if (rng.uniform() < p) keep.push_back(k);
  }
  const Eigen::VectorXd& y = outcome_column(frame, design, kind);
  NonProbSample a;
  a.columns = {"x1", "x2"};
  a.X.resize(static_cast<Eigen::Index>(keep.size()), 2);
  a.y.resize(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto k = keep[i];
    const auto row = static_cast<Eigen::Index>(i);
    a.X(row, 0) = frame.x1[k];
    a.X(row, 1) = frame.x2[k];
    a.y[row] = y[k];
  }
  return a;
}

ProbSample select_prob(const PopulationFrame& frame, Eigen::Index n,
                       std::uint64_t seed) {
  const Eigen::Index total = frame.size();
  if (n < 1 || n > total)
    throw std::invalid_argument("probability sample size must lie in [1, N]");
  // Partial Fisher-Yates, then population order for a stable row layout.
  std::vector<Eigen::Index> pool(static_cast<std::size_t>(total));
  std::iota(pool.begin(), pool.end(), Eigen::Index{0});
  Rng rng(seed);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto j = i + static_cast<Eigen::Index>(
                           rng.integer(static_cast<std::uint64_t>(total - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  std::vector<Eigen::Index> rows(pool.begin(), pool.begin() + n);
  std::sort(rows.begin(), rows.end());

  ProbSample b;
  b.columns = {"x1", "x2"};
  b.X.resize(n, 2);
  b.d = Eigen::VectorXd::Constant(n, static_cast<double>(total) / static_cast<double>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = rows[static_cast<std::size_t>(i)];
    b.X(i, 0) = frame.x1[k];
    b.X(i, 1) = frame.x2[k];
  }
  return b;
}

NuMetrics constraint_quality(const Eigen::VectorXd& weights,
                             const NonProbSample& a, const ProbSample& b,
                             const std::vector<int>& columns,
                             const std::vector<double>& levels) {
  if (weights.size() != a.size())
    throw std::invalid_argument("one weight per non-probability row required");
  NuMetrics nu;
  nu.nu_n = std::abs(weights.sum() - b.d.sum());

  double tau_sq = 0.0;
  for (int c : columns) {
    if (c < 0 || c >= a.X.cols() || c >= b.X.cols())
      throw std::invalid_argument("constraint column out of range");
    const double gap = weights.dot(a.X.col(c)) - b.d.dot(b.X.col(c));
    tau_sq += gap * gap;
  }
  nu.nu_tau = std::sqrt(tau_sq);

  if (!levels.empty()) {
    // nu_q evaluates the balancing functional itself: the calibrated mass the
    // modified step function places at each break, against its level. A value
    // gap between the two sample quantiles would stay at grid granularity even
    // for a perfectly calibrated fit.
    std::vector<QuantileConstraint> constraints;
    constraints.reserve(columns.size() * levels.size());
    for (int c : columns) {
      for (double alpha : levels) {
        QuantileConstraint qc;
        qc.column = c;
        qc.alpha = alpha;
        qc.brk = compute_break(b.X.col(c), b.d, alpha);
        constraints.push_back(qc);
      }
    }
    const Eigen::MatrixXd am = build_a_matrix(a.X, constraints, b.d.sum());
    double q_sq = 0.0;
    for (std::size_t k = 0; k < constraints.size(); ++k) {
      const double gap =
          weights.dot(am.col(1 + static_cast<Eigen::Index>(k))) - constraints[k].alpha;
      q_sq += gap * gap;
    }
    nu.nu_q = std::sqrt(q_sq);
  }
  return nu;
}

NuMetrics constraint_quality(const PropensityFit& fit, const NonProbSample& a,
                             const ProbSample& b, const std::vector<int>& columns,
                             const std::vector<double>& levels) {
  Eigen::VectorXd w = fit.pi_a.cwiseInverse();
  return constraint_quality(w, a, b, columns, levels);
}

const char* scenario_label(int scenario) {
  switch (scenario) {
    case 1: return "I";
    case 2: return "II";
    case 3: return "III";
    case 4: return "IV";
    default: throw std::invalid_argument("scenario must be 1, 2, 3 or 4");
  }
}

OutcomeDesign scenario_outcome_design(int scenario) {
  scenario_label(scenario);
  return scenario <= 2 ? OutcomeDesign::Linear : OutcomeDesign::Quadratic;
}

ParticipationDesign scenario_participation_design(int scenario) {
  scenario_label(scenario);
  return scenario % 2 == 1 ? ParticipationDesign::Linear
                           : ParticipationDesign::Quadratic;
}

MetricRow summarize_estimates(const std::string& id, double truth,
                              const std::vector<ReplicateEstimate>& cells) {
  MetricRow row;
  row.id = id;

  std::vector<double> points;
  for (const auto& c : cells)
    if (c.usable && std::isfinite(c.point)) points.push_back(c.point);
  row.used = static_cast<int>(points.size());
  row.excluded = static_cast<int>(cells.size()) - row.used;

  if (!points.empty()) {
    double mean = 0.0;
    for (double p : points) mean += p;
    mean /= static_cast<double>(points.size());
    const double bias = mean - truth;
    row.bias_x100 = 100.0 * bias;
    if (points.size() > 1) {
      double ss = 0.0;
      for (double p : points) ss += (p - mean) * (p - mean);
      const double se = std::sqrt(ss / (static_cast<double>(points.size()) - 1.0));
      row.se_x100 = 100.0 * se;
      row.rmse_x100 = 100.0 * std::sqrt(bias * bias + se * se);
    }
  }

  int covered = 0;
  double length_sum = 0.0;
  for (const auto& c : cells) {
    if (!(c.usable && c.has_ci)) continue;
    ++row.ci_count;
    if (c.ci_lower <= truth && truth <= c.ci_upper) ++covered;
    length_sum += c.ci_upper - c.ci_lower;
  }
  if (row.ci_count > 0) {
    row.coverage_pct = 100.0 * covered / row.ci_count;
    row.ci_length_x100 = 100.0 * length_sum / row.ci_count;
  }

  std::vector<double> nn, nq, nt;
  for (const auto& c : cells) {
    if (!c.has_nu) continue;
    ++row.nu_count;
    if (std::isfinite(c.nu.nu_n)) nn.push_back(c.nu.nu_n);
    if (std::isfinite(c.nu.nu_q)) nq.push_back(c.nu.nu_q);
    if (std::isfinite(c.nu.nu_tau)) nt.push_back(c.nu.nu_tau);
  }
  auto mean_of = [](const std::vector<double>& v) {
    if (v.empty()) return kNan;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  row.nu_n_mean = mean_of(nn);
  row.nu_n_median = median_of(nn);
  row.nu_q_mean = mean_of(nq);
  row.nu_q_median = median_of(nq);
  row.nu_tau_mean = mean_of(nt);
  row.nu_tau_median = median_of(nt);
  return row;
}

namespace {

// Levels entering the nu_q diagnostic: quartiles and deciles merged, so the
// column is comparable across the quartile- and decile-balanced fits.
std::vector<double> diagnostic_levels() {
  std::set<double> s;
  for (int k = 1; k <= 9; ++k) s.insert(k / 10.0);
  s.insert(0.25);
  s.insert(0.75);
  return {s.begin(), s.end()};
}

BalanceSpec totals_spec() {
  BalanceSpec spec;
  spec.total_columns = {0, 1};
  return spec;
}

BalanceSpec quantile_spec(const std::vector<double>& levels) {
  BalanceSpec spec;
  spec.total_columns = {0, 1};
  spec.quantile_columns = {{0, levels}, {1, levels}};
  return spec;
}

struct FittedDesign {
  std::optional<Design> design;
  std::optional<PropensityFit> fit;
};

FittedDesign fit_design(const NonProbSample& a, const ProbSample& b,
                        const BalanceSpec& spec, PropensityMethod method,
                        const SolverOptions& solver) {
  FittedDesign out;
  try {
    out.design = build_design(a, b, spec);
    out.fit = method == PropensityMethod::Gee
                  ? solve_gee(out.design->za, out.design->zb, b.d, solver)
                  : solve_mle(out.design->za, out.design->zb, b.d, solver);
  } catch (const std::exception&) {
    out.design.reset();
    out.fit.reset();
  }
  return out;
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& config) {
  scenario_label(config.scenario);
  if (config.replicates < 1) throw std::invalid_argument("at least one replicate required");
  if (config.population_size < 10)
    throw std::invalid_argument("population size is implausibly small");
  if (config.sample_size < 2 || config.sample_size > config.population_size)
    throw std::invalid_argument("probability sample size must lie in [2, N]");

  ScenarioResult result;
  result.config = config;
  result.ids = config.estimators.empty() ? estimator_ids() : config.estimators;
  {
    const auto& known = estimator_ids();
    for (const auto& id : result.ids)
      if (std::find(known.begin(), known.end(), id) == known.end())
        throw std::invalid_argument("unknown estimator id: " + id);
  }

  const OutcomeDesign od = scenario_outcome_design(config.scenario);
  const ParticipationDesign pd = scenario_participation_design(config.scenario);
  const PopulationFrame pop =
      generate_population(config.population_size, Rng::derive(config.seed, 0));
  result.truth = outcome_column(pop, od, config.outcome).mean();

  const std::vector<double> quartiles{0.25, 0.5, 0.75};
  const std::vector<double> deciles{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  const std::vector<double> nu_levels = diagnostic_levels();
  const std::vector<int> nu_columns{0, 1};

  const auto n_est = result.ids.size();
  const auto n_rep = static_cast<std::size_t>(config.replicates);
  result.cells.assign(n_est, std::vector<ReplicateEstimate>(n_rep));

  parallel_for(n_rep, config.threads, [&](std::size_t r) {
    const std::uint64_t seed_r = Rng::derive(config.seed, 1 + static_cast<std::uint64_t>(r));
    const NonProbSample a =
        select_nonprob(pop, pd, od, config.outcome, Rng::derive(seed_r, 1));
    const ProbSample b = select_prob(pop, config.sample_size, Rng::derive(seed_r, 2));

    // Shared fits: one per (design, method) pair actually requested.
    std::optional<FittedDesign> cache[3][2];  // [totals, quartile, decile] x [mle, gee]
    auto fitted = [&](int which, PropensityMethod m) -> FittedDesign& {
      auto& slot = cache[which][m == PropensityMethod::Gee ? 1 : 0];
      if (!slot) {
        const BalanceSpec spec = which == 0   ? totals_spec()
                                 : which == 1 ? quantile_spec(quartiles)
                                              : quantile_spec(deciles);
        slot = fit_design(a, b, spec, m, config.solver);
      }
      return *slot;
    };

    auto nu_of_weights = [&](const Eigen::VectorXd& w) -> std::optional<NuMetrics> {
      for (Eigen::Index k = 0; k < w.size(); ++k)
        if (!std::isfinite(w[k]) || w[k] < 0.0) return std::nullopt;
      return constraint_quality(w, a, b, nu_columns, nu_levels);
    };

    auto weighted_cell = [&](int which, PropensityMethod m) {
      ReplicateEstimate cell;
      FittedDesign& fd = fitted(which, m);
      if (!fd.fit) return cell;
      const PropensityFit& fit = *fd.fit;
      // A boundary iterate carries usable weights even though the calibration
      // equations have no root; anything else unconverged is discarded.
      if (!fit.converged && fit.message != "boundary") return cell;
      // Diagnostics accompany exact calibrations only.
      if (fit.converged) {
        if (auto nu = nu_of_weights(fit.pi_a.cwiseInverse())) {
          cell.has_nu = true;
          cell.nu = *nu;
        }
      }
      cell.point = ipw_mean(a.y, fit.pi_a, IpwVersion::Hajek);
      cell.usable = std::isfinite(cell.point);
      if (cell.usable && config.analytic_ci) {
        try {
          const double var = sandwich_variance(cell.point, fit, a, b, *fd.design);
          if (std::isfinite(var) && var >= 0.0) {
            const auto [lo, hi] = normal_ci(cell.point, std::sqrt(var));
            cell.has_ci = true;
            cell.ci_lower = lo;
            cell.ci_upper = hi;
          }
        } catch (const std::exception&) {
        }
      }
      return cell;
    };

    auto direct_cell = [&](const std::function<double()>& f) {
      ReplicateEstimate cell;
      try {
        cell.point = f();
        cell.usable = std::isfinite(cell.point);
      } catch (const std::exception&) {
      }
      return cell;
    };

    for (std::size_t e = 0; e < n_est; ++e) {
      const std::string& id = result.ids[e];
      ReplicateEstimate cell;
      if (id == "naive") {
        cell = direct_cell([&] { return naive_mean(a); });
        if (cell.usable) {
          NuMetrics nu = constraint_quality(Eigen::VectorXd::Ones(a.size()), a, b,
                                            nu_columns, nu_levels);
          // Unweighted sample: only the quantile gap is a meaningful
          // diagnostic, the size and total gaps are artefacts of n_A != N.
          nu.nu_n = kNan;
          nu.nu_tau = kNan;
          cell.has_nu = true;
          cell.nu = nu;
        }
      } else if (id == "ipw-mle") {
        cell = weighted_cell(0, PropensityMethod::Mle);
      } else if (id == "ipw-gee") {
        cell = weighted_cell(0, PropensityMethod::Gee);
      } else if (id == "qbipw1-mle") {
        cell = weighted_cell(1, PropensityMethod::Mle);
      } else if (id == "qbipw1-gee") {
        cell = weighted_cell(1, PropensityMethod::Gee);
      } else if (id == "qbipw2-mle") {
        cell = weighted_cell(2, PropensityMethod::Mle);
      } else if (id == "qbipw2-gee") {
        cell = weighted_cell(2, PropensityMethod::Gee);
      } else if (id == "mi-glm") {
        cell = direct_cell([&] { return mi_glm(a, b, config.outcome); });
      } else if (id == "mi-nn") {
        cell = direct_cell([&] { return mi_nn(a, b, config.nn_neighbors); });
      } else if (id == "dr-mle" || id == "dr-gee") {
        const auto method = id == "dr-mle" ? PropensityMethod::Mle : PropensityMethod::Gee;
        try {
          const EstimateResult er = dr_mean(a, b, totals_spec(), method,
                                            config.outcome, config.solver);
          if (er.fit && er.fit->converged && std::isfinite(er.point)) {
            cell.point = er.point;
            cell.usable = true;
          }
        } catch (const std::exception&) {
        }
      }
      result.cells[e][r] = cell;
    }
  });

  result.rows.reserve(n_est);
  for (std::size_t e = 0; e < n_est; ++e)
    result.rows.push_back(
        summarize_estimates(result.ids[e], result.truth, result.cells[e]));
  return result;
}

void write_metrics_csv(const ScenarioResult& result, const std::string& path) {
  auto out = open_csv(path);
  write_header(out, result);
  out << "estimator,used,excluded,bias_x100,se_x100,rmse_x100\n";
  for (const auto& row : result.rows)
    out << row.id << ',' << row.used << ',' << row.excluded << ','
        << fmt(row.bias_x100) << ',' << fmt(row.se_x100) << ','
        << fmt(row.rmse_x100) << '\n';
}

void write_coverage_csv(const ScenarioResult& result, const std::string& path) {
  auto out = open_csv(path);
  write_header(out, result);
  out << "estimator,ci_count,coverage_pct,ci_length_x100\n";
  for (const auto& row : result.rows)
    out << row.id << ',' << row.ci_count << ',' << fmt(row.coverage_pct) << ','
        << fmt(row.ci_length_x100) << '\n';
}

void write_quality_csv(const ScenarioResult& result, const std::string& path) {
  auto out = open_csv(path);
  write_header(out, result);
  out << "estimator,nu_count,nu_n_mean,nu_n_median,nu_q_mean,nu_q_median,"
         "nu_tau_mean,nu_tau_median\n";
  for (const auto& row : result.rows)
    out << row.id << ',' << row.nu_count << ',' << fmt(row.nu_n_mean) << ','
        << fmt(row.nu_n_median) << ',' << fmt(row.nu_q_mean) << ','
        << fmt(row.nu_q_median) << ',' << fmt(row.nu_tau_mean) << ','
        << fmt(row.nu_tau_median) << '\n';
}

void write_replicates_csv(const ScenarioResult& result, const std::string& path) {
  auto out = open_csv(path);
  write_header(out, result);
  out << "estimator,replicate,estimate,usable,ci_lower,ci_upper\n";
  for (std::size_t e = 0; e < result.ids.size(); ++e)
    for (std::size_t r = 0; r < result.cells[e].size(); ++r) {
      const auto& c = result.cells[e][r];
      out << result.ids[e] << ',' << r << ',' << fmt(c.point, "%.17g") << ','
          << (c.usable ? 1 : 0) << ',' << fmt(c.ci_lower, "%.17g") << ','
          << fmt(c.ci_upper, "%.17g") << '\n';
    }
}

}  // namespace qbipw
