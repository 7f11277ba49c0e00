#include "qbipw/variance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

#include "qbipw/errors.hpp"
#include "qbipw/math.hpp"
#include "qbipw/parallel.hpp"
#include "qbipw/quantile_calibration.hpp"
#include "qbipw/rng.hpp"

namespace qbipw {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

Eigen::VectorXd propensities(const Eigen::MatrixXd& z, const Eigen::VectorXd& eta) {
  Eigen::VectorXd m = z * eta;
  for (Eigen::Index k = 0; k < m.size(); ++k) m[k] = expit(m[k]);
  return m;
}

// First component of the stacked estimating function and its tau derivative.
double outcome_component(double tau, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& pi, double n_pop,
                         IpwVersion version) {
  double acc = 0.0;
  if (version == IpwVersion::Hajek) {
    for (Eigen::Index k = 0; k < y.size(); ++k) acc += (y[k] - tau) / pi[k];
    return acc / n_pop;
  }
  for (Eigen::Index k = 0; k < y.size(); ++k) acc += y[k] / pi[k];
  return acc / n_pop - tau;
}

// With-replacement variance of a survey total with per-unit contributions
// u_k (weights already applied): n/(n-1) sum (u_k - mean)(u_k - mean)'.
// Computed within strata when labels are present; singleton strata
// contribute nothing.
Eigen::MatrixXd total_variance_wr(const Eigen::MatrixXd& u,
                                  const std::optional<Eigen::VectorXi>& strata) {
  const Eigen::Index n = u.rows();
  const Eigen::Index j = u.cols();
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(j, j);
  std::map<int, std::vector<Eigen::Index>> groups;
  if (strata) {
    for (Eigen::Index k = 0; k < n; ++k) groups[(*strata)[k]].push_back(k);
  } else {
    auto& all = groups[0];
    all.resize(static_cast<std::size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) all[static_cast<std::size_t>(k)] = k;
  }
  for (const auto& [label, rows] : groups) {
    (void)label;
    const auto nh = static_cast<double>(rows.size());
    if (rows.size() < 2) continue;
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(j);
    for (Eigen::Index k : rows) mean += u.row(k);
    mean /= nh;
    Eigen::MatrixXd dev = Eigen::MatrixXd::Zero(j, j);
    for (Eigen::Index k : rows) {
      Eigen::RowVectorXd c = u.row(k) - mean;
      dev.noalias() += c.transpose() * c;
    }
    v += (nh / (nh - 1.0)) * dev;
  }
  return v;
}

Eigen::MatrixXd analytic_bread(double tau, const Eigen::VectorXd& eta,
                               const NonProbSample& a, const ProbSample& b,
                               const Design& design, PropensityMethod method,
                               IpwVersion version) {
  const Eigen::Index j = design.width();
  const double n_pop = design.population_size;
  const Eigen::VectorXd pi_a = propensities(design.za, eta);
  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(1 + j, 1 + j);

  double d_tau = 0.0;
  Eigen::RowVectorXd d_eta = Eigen::RowVectorXd::Zero(j);
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double pi = pi_a[k];
    const double coef = version == IpwVersion::Hajek ? a.y[k] - tau : a.y[k];
    d_eta -= coef * ((1.0 - pi) / pi) * design.za.row(k);
    if (version == IpwVersion::Hajek) d_tau -= 1.0 / pi;
  }
  bread(0, 0) = version == IpwVersion::Hajek ? d_tau / n_pop : -1.0;
  bread.block(0, 1, 1, j) = d_eta / n_pop;

  const Eigen::MatrixXd jac =
      method == PropensityMethod::Gee
          ? gee_g_jacobian(eta, design.za, design.zb, b.d)
          : score_u_jacobian(eta, design.za, design.zb, b.d);
  bread.block(1, 1, j, j) = jac / n_pop;
  return bread;
}

Eigen::MatrixXd fd_bread(double tau, const Eigen::VectorXd& eta,
                         const NonProbSample& a, const ProbSample& b,
                         const Design& design, PropensityMethod method,
                         IpwVersion version) {
  const Eigen::Index j = design.width();
  const double step_scale = std::cbrt(std::numeric_limits<double>::epsilon());
  Eigen::MatrixXd bread(1 + j, 1 + j);
  for (Eigen::Index c = 0; c < 1 + j; ++c) {
    const double base = c == 0 ? tau : eta[c - 1];
    const double h = step_scale * std::max(1.0, std::abs(base));
    double tau_hi = tau, tau_lo = tau;
    Eigen::VectorXd eta_hi = eta, eta_lo = eta;
    if (c == 0) {
      tau_hi += h;
      tau_lo -= h;
    } else {
      eta_hi[c - 1] += h;
      eta_lo[c - 1] -= h;
    }
    const Eigen::VectorXd hi = stacked_phi(tau_hi, eta_hi, a, b, design, method, version);
    const Eigen::VectorXd lo = stacked_phi(tau_lo, eta_lo, a, b, design, method, version);
    bread.col(c) = (hi - lo) / (2.0 * h);
  }
  return bread;
}

}  // namespace

std::pair<double, double> normal_ci(double point, double se, double level) {
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("confidence level must lie strictly between 0 and 1");
  const double z = normal_quantile(0.5 + level / 2.0);
  return {point - z * se, point + z * se};
}

Eigen::VectorXd stacked_phi(double tau, const Eigen::VectorXd& eta,
                            const NonProbSample& a, const ProbSample& b,
                            const Design& design, PropensityMethod method,
                            IpwVersion version) {
  if (eta.size() != design.width())
    throw std::invalid_argument("eta length does not match the design width");
  const double n_pop = design.population_size;
  const Eigen::VectorXd pi_a = propensities(design.za, eta);
  Eigen::VectorXd phi(1 + design.width());
  phi[0] = outcome_component(tau, a.y, pi_a, n_pop, version);
  phi.tail(design.width()) =
      (method == PropensityMethod::Gee
           ? gee_g(eta, design.za, design.zb, b.d)
           : score_u(eta, design.za, design.zb, b.d)) /
      n_pop;
  return phi;
}

SandwichPieces sandwich_pieces(double tau, const PropensityFit& fit,
                               const NonProbSample& a, const ProbSample& b,
                               const Design& design, const SandwichOptions& options) {
  const Eigen::Index j = design.width();
  const double n_pop = design.population_size;
  if (fit.eta.size() != j)
    throw std::invalid_argument("fit does not match the design width");

  SandwichPieces out;
  out.bread = options.fd_bread
                  ? fd_bread(tau, fit.eta, a, b, design, fit.method, options.version)
                  : analytic_bread(tau, fit.eta, a, b, design, fit.method, options.version);

  // Participation component: HT estimate of the Poisson covariance of the
  // S_A terms of phi; per-unit coefficient of the participation indicator is
  // ((y - tau)/pi, z/pi) under GEE and ((y - tau)/pi, z) under MLE.
  const Eigen::VectorXd pi_a = propensities(design.za, fit.eta);
  out.meat_a = Eigen::MatrixXd::Zero(1 + j, 1 + j);
  Eigen::VectorXd h(1 + j);
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double pi = pi_a[k];
    const double coef = options.version == IpwVersion::Hajek ? a.y[k] - tau : a.y[k];
    h[0] = coef / pi;
    if (fit.method == PropensityMethod::Gee)
      h.tail(j) = design.za.row(k).transpose() / pi;
    else
      h.tail(j) = design.za.row(k).transpose();
    out.meat_a.noalias() += (1.0 - pi) * h * h.transpose();
  }
  out.meat_a /= n_pop * n_pop;

  // Design component: with-replacement variance of the S_B total entering
  // the propensity rows (d z under GEE, d pi z under MLE); the outcome row
  // has no S_B term.
  const Eigen::VectorXd pi_b = propensities(design.zb, fit.eta);
  Eigen::MatrixXd u = design.zb;
  for (Eigen::Index k = 0; k < b.size(); ++k) {
    const double scale = fit.method == PropensityMethod::Gee ? b.d[k] : b.d[k] * pi_b[k];
    u.row(k) *= scale;
  }
  out.meat_b = Eigen::MatrixXd::Zero(1 + j, 1 + j);
  out.meat_b.block(1, 1, j, j) = total_variance_wr(u, b.strata) / (n_pop * n_pop);

  out.meat = out.meat_a + out.meat_b;

  // Rank-revealing solve. At a boundary fit the bread loses curvature along
  // the recession direction; the minimum-norm solution then yields the
  // variance conditional on the attainable face. For a full-rank bread this
  // is the plain inverse.
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(out.bread.transpose());
  if (cod.rank() == 0)
    throw estimation_error(
        "sandwich bread matrix is zero; the variance of the point "
        "estimator is not identified at this fit");
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(1 + j);
  e0[0] = 1.0;
  const Eigen::VectorXd w = cod.solve(e0);  // bread^+T e0
  out.variance = w.dot(out.meat * w);
  return out;
}

double sandwich_variance(double tau, const PropensityFit& fit,
                         const NonProbSample& a, const ProbSample& b,
                         const Design& design, const SandwichOptions& options) {
  return sandwich_pieces(tau, fit, a, b, design, options).variance;
}

BootstrapResult bootstrap_variance(
    const std::function<double(const NonProbSample&, const ProbSample&)>& estimator,
    const NonProbSample& a, const ProbSample& b, const BootstrapOptions& options) {
  if (options.replicates < 2)
    throw std::invalid_argument("bootstrap needs at least two replicates");
  if (!(options.ci_level > 0.0 && options.ci_level < 1.0))
    throw std::invalid_argument("confidence level must lie strictly between 0 and 1");
  const auto n_a = a.size();
  const auto n_b = b.size();

  // Stratum index lists in ascending label order; a single pseudo stratum
  // when the sample is unstratified.
  std::map<int, std::vector<Eigen::Index>> groups;
  if (b.strata) {
    for (Eigen::Index k = 0; k < n_b; ++k) (*groups.try_emplace((*b.strata)[k]).first).second.push_back(k);
  } else {
    auto& all = groups[0];
    for (Eigen::Index k = 0; k < n_b; ++k) all.push_back(k);
  }

  const int r_total = options.replicates;
  std::vector<double> estimates(static_cast<std::size_t>(r_total), kNan);

  parallel_for(static_cast<std::size_t>(r_total), options.threads, [&](std::size_t r) {
    Rng rng(Rng::derive(options.seed, static_cast<std::uint64_t>(r)));

    NonProbSample ra;
    ra.columns = a.columns;
    ra.X.resize(n_a, a.X.cols());
    ra.y.resize(n_a);
    for (Eigen::Index k = 0; k < n_a; ++k) {
      const auto pick = static_cast<Eigen::Index>(rng.integer(static_cast<std::uint64_t>(n_a)));
      ra.X.row(k) = a.X.row(pick);
      ra.y[k] = a.y[pick];
    }

    ProbSample rb;
    rb.columns = b.columns;
    rb.X.resize(n_b, b.X.cols());
    rb.d.resize(n_b);
    if (b.strata) rb.strata = Eigen::VectorXi(n_b);
    Eigen::Index row = 0;
    for (const auto& [label, members] : groups) {
      (void)label;
      const auto nh = static_cast<std::uint64_t>(members.size());
      for (std::size_t i = 0; i < members.size(); ++i, ++row) {
        const Eigen::Index pick = members[static_cast<std::size_t>(rng.integer(nh))];
        rb.X.row(row) = b.X.row(pick);
        rb.d[row] = b.d[pick];
        if (rb.strata) (*rb.strata)[row] = (*b.strata)[pick];
      }
    }

    double est = kNan;
    try {
      est = estimator(ra, rb);
    } catch (const std::exception&) {
      est = kNan;
    }
    if (std::isfinite(est)) estimates[r] = est;
  });

  BootstrapResult out;
  out.estimates = estimates;
  std::vector<double> good;
  good.reserve(estimates.size());
  for (double e : estimates)
    if (std::isfinite(e)) good.push_back(e);
  out.failures = r_total - static_cast<int>(good.size());
  out.replicates = static_cast<int>(good.size());
  if (static_cast<double>(out.failures) > options.max_failure_share * r_total) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "bootstrap failed in %d of %d replicates (more than %.0f%% allowed)",
                  out.failures, r_total, 100.0 * options.max_failure_share);
    throw estimation_error(buf);
  }
  if (good.size() < 2) throw estimation_error("bootstrap produced fewer than two usable replicates");

  const double m = static_cast<double>(good.size());
  double mean = 0.0;
  for (double e : good) mean += e;
  mean /= m;
  double ss = 0.0;
  for (double e : good) ss += (e - mean) * (e - mean);
  out.se = std::sqrt(ss / (m - 1.0));

  Eigen::VectorXd values = Eigen::Map<const Eigen::VectorXd>(good.data(), static_cast<Eigen::Index>(good.size()));
  Eigen::VectorXd unit = Eigen::VectorXd::Ones(values.size());
  const double tail = (1.0 - options.ci_level) / 2.0;
  out.ci_lower = weighted_quantile(unit, values, tail);
  out.ci_upper = weighted_quantile(unit, values, 1.0 - tail);
  return out;
}

}  // namespace qbipw
