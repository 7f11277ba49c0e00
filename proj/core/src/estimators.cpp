#include "qbipw/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qbipw/errors.hpp"
#include "qbipw/glm.hpp"
#include "qbipw/math.hpp"

namespace qbipw {
namespace {

void require_positive_pi(const Eigen::VectorXd& pi) {
  for (Eigen::Index i = 0; i < pi.size(); ++i) {
    if (!(pi(i) > 0.0) || !std::isfinite(pi(i))) {
      throw estimation_error("fitted propensity is not strictly positive at row " +
                             std::to_string(i));
    }
  }
}

std::vector<int> resolve_covariates(const Eigen::MatrixXd& X,
                                    const std::vector<int>& requested) {
  std::vector<int> cols = requested;
  if (cols.empty()) {
    cols.resize(static_cast<std::size_t>(X.cols()));
    std::iota(cols.begin(), cols.end(), 0);
  }
  for (int c : cols) {
    if (c < 0 || c >= X.cols()) {
      throw std::invalid_argument("covariate column " + std::to_string(c) +
                                  " out of range");
    }
  }
  return cols;
}

Eigen::MatrixXd regression_design(const Eigen::MatrixXd& X, const std::vector<int>& cols) {
  Eigen::MatrixXd out(X.rows(), 1 + static_cast<Eigen::Index>(cols.size()));
  out.col(0).setOnes();
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.col(1 + static_cast<Eigen::Index>(j)) = X.col(cols[j]);
  }
  return out;
}

BalanceSpec totals_only(const BalanceSpec& spec) {
  BalanceSpec out = spec;
  out.quantile_columns.clear();
  return out;
}

BalanceSpec with_default_levels(const BalanceSpec& spec, const std::vector<double>& levels) {
  BalanceSpec out = spec;
  for (auto& q : out.quantile_columns) {
    if (q.levels.empty()) q.levels = levels;
  }
  return out;
}

const std::vector<double> kQuartiles = {0.25, 0.5, 0.75};
const std::vector<double> kDeciles = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

}  // namespace

double naive_mean(const NonProbSample& a) {
  if (a.size() == 0) throw std::invalid_argument("naive_mean: empty sample");
  return a.y.mean();
}

double ipw_mean(const Eigen::VectorXd& y, const Eigen::VectorXd& pi,
                IpwVersion version, double population_size) {
  if (y.size() != pi.size() || y.size() == 0) {
    throw std::invalid_argument("ipw_mean: outcome and propensity sizes differ");
  }
  require_positive_pi(pi);
  const double weighted_sum = (y.array() / pi.array()).sum();
  if (version == IpwVersion::FixedN) {
    if (!(population_size > 0.0)) {
      throw std::invalid_argument("ipw_mean: fixed-size form needs a positive population size");
    }
    return weighted_sum / population_size;
  }
  return weighted_sum / pi.cwiseInverse().sum();
}

EstimateResult qbipw_mean(const NonProbSample& a, const ProbSample& b,
                          const BalanceSpec& spec, PropensityMethod method,
                          IpwVersion version, const SolverOptions& solver) {
  if (spec.quantile_count() == 0) {
    throw std::invalid_argument("qbipw_mean: balance spec has no quantile constraints");
  }
  const Design design = build_design(a, b, spec);
  PropensityFit fit = method == PropensityMethod::Gee
                          ? solve_gee(design.za, design.zb, b.d, solver)
                          : solve_mle(design.za, design.zb, b.d, solver);
  EstimateResult result;
  result.point = ipw_mean(a.y, fit.pi_a, version, design.population_size);
  result.fit = std::move(fit);
  return result;
}

double mi_glm(const NonProbSample& a, const ProbSample& b, OutcomeKind kind,
              std::vector<int> covariates, const BalanceSpec* augment) {
  const std::vector<int> cols = resolve_covariates(a.X, covariates);
  Eigen::MatrixXd xa = regression_design(a.X, cols);
  Eigen::MatrixXd xb = regression_design(b.X, cols);

  if (augment != nullptr && augment->quantile_count() > 0) {
    const double n = augment->resolved_population_size(b);
    const auto constraints = compute_breaks(b, *augment);
    const Eigen::Index q = static_cast<Eigen::Index>(constraints.size());
    const Eigen::MatrixXd aa = build_a_matrix(a.X, constraints, n);
    const Eigen::MatrixXd ab = build_a_matrix(b.X, constraints, n);
    Eigen::MatrixXd xa2(xa.rows(), xa.cols() + q);
    Eigen::MatrixXd xb2(xb.rows(), xb.cols() + q);
    xa2 << xa, aa.rightCols(q);
    xb2 << xb, ab.rightCols(q);
    xa = std::move(xa2);
    xb = std::move(xb2);
  }

  Eigen::VectorXd pred(b.size());
  if (kind == OutcomeKind::Binary) {
    const LogisticFit fit = fit_logistic(xa, a.y);
    pred = xb * fit.beta;
    for (Eigen::Index i = 0; i < pred.size(); ++i) pred(i) = expit(pred(i));
  } else {
    const LinearFit fit = fit_linear(xa, a.y);
    pred = xb * fit.beta;
  }
  return b.d.dot(pred) / b.d.sum();
}

double mi_nn(const NonProbSample& a, const ProbSample& b, int k,
             std::vector<int> covariates) {
  const Eigen::Index n_a = a.size();
  if (k < 1 || k > n_a) {
    throw std::invalid_argument("mi_nn: neighbour count must lie in [1, n_A]");
  }
  const std::vector<int> cols = resolve_covariates(a.X, covariates);

  // Standardize both samples by the donor sample's location and scale;
  // constant columns carry no distance information and are skipped.
  std::vector<std::pair<int, std::pair<double, double>>> scaling;
  for (int c : cols) {
    const double mean = a.X.col(c).mean();
    const double var = (a.X.col(c).array() - mean).square().sum() /
                       std::max<double>(1.0, static_cast<double>(n_a - 1));
    const double sd = std::sqrt(var);
    if (sd > 0.0) scaling.push_back({c, {mean, sd}});
  }

  const Eigen::Index n_b = b.size();
  const std::size_t p = scaling.size();
  Eigen::MatrixXd sa(n_a, static_cast<Eigen::Index>(p));
  Eigen::MatrixXd sb(n_b, static_cast<Eigen::Index>(p));
  for (std::size_t j = 0; j < p; ++j) {
    const auto& [c, ms] = scaling[j];
    sa.col(static_cast<Eigen::Index>(j)) = (a.X.col(c).array() - ms.first) / ms.second;
    sb.col(static_cast<Eigen::Index>(j)) = (b.X.col(c).array() - ms.first) / ms.second;
  }

  std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n_a));
  Eigen::VectorXd pred(n_b);
  for (Eigen::Index i = 0; i < n_b; ++i) {
    for (Eigen::Index r = 0; r < n_a; ++r) {
      const double d2 = p > 0 ? (sa.row(r) - sb.row(i)).squaredNorm() : 0.0;
      dist[static_cast<std::size_t>(r)] = {d2, r};
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += a.y(dist[static_cast<std::size_t>(j)].second);
    pred(i) = sum / k;
  }
  return b.d.dot(pred) / b.d.sum();
}

EstimateResult dr_mean(const NonProbSample& a, const ProbSample& b,
                       const BalanceSpec& spec, PropensityMethod method,
                       OutcomeKind kind, const SolverOptions& solver) {
  const BalanceSpec pspec = totals_only(spec);
  const Design design = build_design(a, b, pspec);
  PropensityFit fit = method == PropensityMethod::Gee
                          ? solve_gee(design.za, design.zb, b.d, solver)
                          : solve_mle(design.za, design.zb, b.d, solver);
  require_positive_pi(fit.pi_a);

  std::vector<int> cols = spec.total_columns;
  Eigen::VectorXd m_a(a.size());
  Eigen::VectorXd m_b(b.size());
  const Eigen::MatrixXd xa = regression_design(a.X, resolve_covariates(a.X, cols));
  const Eigen::MatrixXd xb = regression_design(b.X, resolve_covariates(b.X, cols));
  if (kind == OutcomeKind::Binary) {
    const LogisticFit om = fit_logistic(xa, a.y);
    m_a = xa * om.beta;
    m_b = xb * om.beta;
    for (Eigen::Index i = 0; i < m_a.size(); ++i) m_a(i) = expit(m_a(i));
    for (Eigen::Index i = 0; i < m_b.size(); ++i) m_b(i) = expit(m_b(i));
  } else {
    const LinearFit om = fit_linear(xa, a.y);
    m_a = xa * om.beta;
    m_b = xb * om.beta;
  }

  const double n_hat = b.d.sum();
  const double residual_part = ((a.y - m_a).array() / fit.pi_a.array()).sum();
  const double model_part = b.d.dot(m_b);

  EstimateResult result;
  result.point = (residual_part + model_part) / n_hat;
  result.fit = std::move(fit);
  return result;
}

const std::vector<std::string>& estimator_ids() {
  static const std::vector<std::string> ids = {
      "naive",      "ipw-mle",    "ipw-gee",    "qbipw1-mle", "qbipw1-gee",
      "qbipw2-mle", "qbipw2-gee", "mi-glm",     "mi-nn",      "dr-mle",
      "dr-gee"};
  return ids;
}

EstimateResult run_point_estimator(const EstimatorSpec& spec,
                                   const NonProbSample& a, const ProbSample& b) {
  const std::string& id = spec.id;
  EstimateResult result;
  result.estimator_id = id;

  if (id == "naive") {
    result.point = naive_mean(a);
    return result;
  }
  if (id == "mi-glm") {
    result.point = mi_glm(a, b, spec.outcome, spec.balance.total_columns);
    return result;
  }
  if (id == "mi-nn") {
    result.point = mi_nn(a, b, spec.nn_neighbors, spec.balance.total_columns);
    return result;
  }

  const bool gee = id.size() > 4 && id.substr(id.size() - 4) == "-gee";
  const bool mle = id.size() > 4 && id.substr(id.size() - 4) == "-mle";
  if (!gee && !mle) {
    throw std::invalid_argument("unknown estimator id: " + id);
  }
  const PropensityMethod method = gee ? PropensityMethod::Gee : PropensityMethod::Mle;
  const std::string family = id.substr(0, id.size() - 4);

  if (family == "ipw") {
    EstimateResult r = [&] {
      const Design design = build_design(a, b, totals_only(spec.balance));
      PropensityFit fit = gee ? solve_gee(design.za, design.zb, b.d, spec.solver)
                              : solve_mle(design.za, design.zb, b.d, spec.solver);
      EstimateResult out;
      out.point = ipw_mean(a.y, fit.pi_a, spec.version, design.population_size);
      out.fit = std::move(fit);
      return out;
    }();
    r.estimator_id = id;
    return r;
  }
  if (family == "qbipw1" || family == "qbipw2") {
    const BalanceSpec filled = with_default_levels(
        spec.balance, family == "qbipw1" ? kQuartiles : kDeciles);
    EstimateResult r = qbipw_mean(a, b, filled, method, spec.version, spec.solver);
    r.estimator_id = id;
    return r;
  }
  if (family == "dr") {
    EstimateResult r = dr_mean(a, b, spec.balance, method, spec.outcome, spec.solver);
    r.estimator_id = id;
    return r;
  }
  throw std::invalid_argument("unknown estimator id: " + id);
}

}  // namespace qbipw
