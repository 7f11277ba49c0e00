#include "qbipw/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "qbipw/errors.hpp"
#include "qbipw/math.hpp"

namespace qbipw {
namespace {

constexpr double kClampLo = 1e-12;
constexpr double kClampHi = 1.0 - 1e-12;

// Largest scaled residual at which a stalled calibration fit still counts as
// a usable boundary iterate.
constexpr double kBoundaryResidual = 0.25;

double clamp_pi(double p) { return std::min(std::max(p, kClampLo), kClampHi); }

Eigen::VectorXd fitted_pi(const Eigen::MatrixXd& z, const Eigen::VectorXd& eta) {
  Eigen::VectorXd out = z * eta;
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = expit(out(i));
  return out;
}

// The nonlinear system F(eta) = 0 solved by both fits, in internally scaled
// coordinates: design columns are divided by their max-abs value and each
// equation by the natural magnitude of its row, so the convergence tolerance
// acts relatively and the trust region treats coefficients comparably.
struct ScaledSystem {
  Eigen::MatrixXd za, zb;
  Eigen::VectorXd d;
  Eigen::VectorXd col_scale;  // scaled = original * col_scale
  Eigen::VectorXd row_scale;
  Eigen::VectorXd target;     // GEE: sum_B d z; MLE: sum_A z
  bool gee = false;

  ScaledSystem(const Eigen::MatrixXd& za_in, const Eigen::MatrixXd& zb_in,
               const Eigen::VectorXd& d_in, bool gee_in)
      : d(d_in), gee(gee_in) {
    const Eigen::Index J = za_in.cols();
    col_scale.resize(J);
    for (Eigen::Index j = 0; j < J; ++j) {
      const double maxabs = std::max(za_in.col(j).cwiseAbs().maxCoeff(),
                                     zb_in.col(j).cwiseAbs().maxCoeff());
      col_scale(j) = maxabs > 0.0 ? 1.0 / maxabs : 1.0;
    }
    za = za_in * col_scale.asDiagonal();
    zb = zb_in * col_scale.asDiagonal();
    row_scale.resize(J);
    target.resize(J);
    if (gee) {
      target = zb.transpose() * d;
      for (Eigen::Index j = 0; j < J; ++j) {
        row_scale(j) = std::max(1.0, zb.col(j).cwiseAbs().dot(d));
      }
    } else {
      target = za.colwise().sum();
      for (Eigen::Index j = 0; j < J; ++j) {
        row_scale(j) = std::max(1.0, za.col(j).cwiseAbs().sum());
      }
    }
  }

  Eigen::VectorXd residual(const Eigen::VectorXd& eta) const {
    Eigen::VectorXd f(eta.size());
    if (gee) {
      Eigen::VectorXd w = za * eta;
      for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = 1.0 / clamp_pi(expit(w(i)));
      f = za.transpose() * w - target;
    } else {
      Eigen::VectorXd p = zb * eta;
      for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = d(i) * clamp_pi(expit(p(i)));
      f = target - zb.transpose() * p;
    }
    return f.cwiseQuotient(row_scale);
  }

  Eigen::MatrixXd jacobian(const Eigen::VectorXd& eta) const {
    Eigen::MatrixXd j;
    if (gee) {
      Eigen::VectorXd q = za * eta;
      for (Eigen::Index i = 0; i < q.size(); ++i) {
        const double p = clamp_pi(expit(q(i)));
        q(i) = (1.0 - p) / p;
      }
      j.noalias() = -za.transpose() * q.asDiagonal() * za;
    } else {
      Eigen::VectorXd q = zb * eta;
      for (Eigen::Index i = 0; i < q.size(); ++i) {
        const double p = clamp_pi(expit(q(i)));
        q(i) = d(i) * p * (1.0 - p);
      }
      j.noalias() = -zb.transpose() * q.asDiagonal() * zb;
    }
    return row_scale.cwiseInverse().asDiagonal() * j;
  }
};

// Double dogleg step (trust radius `radius`): Newton step when it fits,
// otherwise a point on the polyline 0 -> Cauchy point -> nu * Newton ->
// Newton with norm equal to the radius.
Eigen::VectorXd dogleg_step(const Eigen::VectorXd& newton, const Eigen::VectorXd& grad,
                            const Eigen::VectorXd& jac_grad, double radius) {
  const double newton_norm = newton.norm();
  if (newton_norm <= radius) return newton;

  const double a = grad.squaredNorm();
  const double b = jac_grad.squaredNorm();
  const double descent = -grad.dot(newton);
  if (!(a > 0.0) || !(b > 0.0) || !(descent > 0.0)) {
    // Newton direction is not a reliable descent direction; fall back to
    // steepest descent truncated at the boundary.
    return a > 0.0 ? Eigen::VectorXd(-(radius / std::sqrt(a)) * grad)
                   : Eigen::VectorXd((radius / newton_norm) * newton);
  }

  const double cauchy_len = a / b;  // step length along -grad
  const Eigen::VectorXd cauchy = -cauchy_len * grad;
  const double cauchy_norm = cauchy_len * std::sqrt(a);
  if (cauchy_norm >= radius) return -(radius / std::sqrt(a)) * grad;

  const double gamma = a * a / (b * descent);
  const double nu = 0.2 + 0.8 * gamma;
  if (nu * newton_norm <= radius) return (radius / newton_norm) * newton;

  const Eigen::VectorXd leg = nu * newton - cauchy;
  const double leg_sq = leg.squaredNorm();
  const double cross = cauchy.dot(leg);
  const double disc = cross * cross + leg_sq * (radius * radius - cauchy_norm * cauchy_norm);
  const double step = (-cross + std::sqrt(std::max(disc, 0.0))) / leg_sq;
  return cauchy + step * leg;
}

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

struct SolveOutcome {
  Eigen::VectorXd eta;
  Eigen::VectorXd residuals;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

SolveOutcome solve_scaled(const ScaledSystem& sys, Eigen::VectorXd eta,
                          const SolverOptions& options) {
  SolveOutcome out;
  Eigen::VectorXd f = sys.residual(eta);
  double merit = 0.5 * f.squaredNorm();
  double radius = std::max(1.0, eta.norm());
  bool converged = f.lpNorm<Eigen::Infinity>() < options.tolerance;
  std::string message;

  int iter = 0;
  while (!converged && iter < options.max_iterations && message.empty()) {
    ++iter;
    const Eigen::MatrixXd jac = sys.jacobian(eta);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(jac);
    const Eigen::VectorXd newton = qr.solve(-f);
    const Eigen::VectorXd grad = jac.transpose() * f;
    const Eigen::VectorXd jac_grad = jac * grad;

    bool accepted = false;
    for (int inner = 0; inner < 60 && !accepted; ++inner) {
      const Eigen::VectorXd step = dogleg_step(newton, grad, jac_grad, radius);
      const Eigen::VectorXd trial = eta + step;
      const Eigen::VectorXd f_trial = sys.residual(trial);
      if (!all_finite(f_trial)) {
        radius *= 0.25;
        continue;
      }
      const double merit_trial = 0.5 * f_trial.squaredNorm();
      const double predicted = merit - 0.5 * (f + jac * step).squaredNorm();
      const double actual = merit - merit_trial;
      const double ratio = predicted > 0.0 ? actual / predicted : -1.0;

      if (ratio >= 1e-4) {
        accepted = true;
        eta = trial;
        f = f_trial;
        merit = merit_trial;
        if (ratio > 0.75 && step.norm() >= 0.99 * radius) {
          radius = std::min(2.0 * radius, 1e10);
        } else if (ratio < 0.25) {
          radius = std::max(0.5 * step.norm(), 1e-14);
        }
        continue;
      }

      radius = 0.25 * step.norm();
      if (radius < 1e-13 * (1.0 + eta.norm())) {
        // Trust region stalled: damped Newton line search as a last resort.
        bool found = false;
        for (double t = 1.0; t >= 0x1.0p-40; t *= 0.5) {
          const Eigen::VectorXd trial_ls = eta + t * newton;
          const Eigen::VectorXd f_ls = sys.residual(trial_ls);
          if (!all_finite(f_ls)) continue;
          const double merit_ls = 0.5 * f_ls.squaredNorm();
          if (merit_ls <= merit * (1.0 - 2e-4 * t)) {
            eta = trial_ls;
            f = f_ls;
            merit = merit_ls;
            radius = std::max(2.0 * t * newton.norm(), 1e-3);
            found = true;
            accepted = true;
            break;
          }
        }
        if (!found) {
          message = "line-search-stall";
          break;
        }
      }
    }
    if (!accepted && message.empty()) message = "trust-region-stall";

    converged = f.lpNorm<Eigen::Infinity>() < options.tolerance;
    if (!converged && eta.norm() > options.separation_norm) {
      message = "separation";
    }
  }

  if (!converged && message.empty()) message = "max-iterations";
  out.eta = eta;
  out.residuals = f;
  out.converged = converged;
  out.iterations = iter;
  out.message = converged ? "" : message;
  return out;
}

// Complete-separation scan: a fit whose propensities are all within clamp
// distance of 1 (or all of 0) satisfies the residual tolerance along a
// divergent coefficient direction and must be reported, not accepted.
bool saturated(const Eigen::VectorXd& pi_a, const Eigen::VectorXd& pi_b) {
  const double lo = 1e-8;
  const double hi = 1.0 - 1e-8;
  const bool all_high = pi_a.minCoeff() > hi && pi_b.minCoeff() > hi;
  const bool all_low = pi_a.maxCoeff() < lo && pi_b.maxCoeff() < lo;
  return all_high || all_low;
}

PropensityFit solve_impl(const Eigen::MatrixXd& za, const Eigen::MatrixXd& zb,
                         const Eigen::VectorXd& d, PropensityMethod method,
                         const SolverOptions& options) {
  if (za.cols() != zb.cols()) {
    throw std::invalid_argument("design matrices must have equal column counts");
  }
  if (zb.rows() != d.size()) {
    throw std::invalid_argument("design weight length does not match S_B design rows");
  }
  if (za.rows() == 0 || zb.rows() == 0 || za.cols() == 0) {
    throw std::invalid_argument("empty design");
  }

  const bool gee = method == PropensityMethod::Gee;
  const GramVerdict gate = check_identifiability(gee ? za : zb,
                                                 gee ? IdentCondition::B1
                                                     : IdentCondition::B2);
  if (!gate.ok) {
    std::string msg = std::string(gee ? "B1" : "B2") +
                      " identifiability condition fails: design Gram matrix over " +
                      (gee ? "S_A" : "S_B") + " has rank " + std::to_string(gate.rank) +
                      " of " + std::to_string(gate.dimension) + " (nullity " +
                      std::to_string(gate.nullity()) + "); dependent columns:";
    for (int c : gate.dependent_columns) msg += " " + std::to_string(c);
    throw identifiability_error(msg, gate.rank, gate.dimension, gate.dependent_columns);
  }

  const ScaledSystem sys(za, zb, d, gee);
  const Eigen::Index J = za.cols();

  Eigen::VectorXd eta0 = Eigen::VectorXd::Zero(J);
  if (options.start) {
    if (options.start->size() != J) {
      throw std::invalid_argument("starting point length does not match design width");
    }
    eta0 = options.start->cwiseQuotient(sys.col_scale);
  } else {
    // Intercept starts at the aggregate participation log-odds.
    for (Eigen::Index j = 0; j < J; ++j) {
      if ((za.col(j).array() == 1.0).all() && (zb.col(j).array() == 1.0).all()) {
        const double rate = static_cast<double>(za.rows()) / d.sum();
        if (rate > 0.0 && rate < 1.0) eta0(j) = logit(rate) / sys.col_scale(j);
        break;
      }
    }
  }

  const SolveOutcome outcome = solve_scaled(sys, eta0, options);

  PropensityFit fit;
  fit.method = method;
  fit.eta = outcome.eta.cwiseProduct(sys.col_scale);
  fit.pi_a = fitted_pi(sys.za, outcome.eta);
  fit.pi_b = fitted_pi(sys.zb, outcome.eta);
  fit.converged = outcome.converged;
  fit.iterations = outcome.iterations;
  fit.residual_norm = outcome.residuals.lpNorm<Eigen::Infinity>();
  fit.constraint_residuals = outcome.residuals.cwiseAbs();
  fit.message = outcome.message;

  if (fit.converged && saturated(fit.pi_a, fit.pi_b)) {
    fit.converged = false;
    fit.message = "separation";
  }

  // The calibration equations admit no root when the moment system
  // {w >= 1, sum_A w z = target} is infeasible: the iterate then runs off
  // along a recession direction with part of the sample pinned at the unit
  // weight floor while the remaining residual stays small. Such an iterate
  // is the closest attainable calibration, not a failed one, so it is
  // flagged as a boundary fit. Callers may treat its weights as usable;
  // converged remains false.
  if (!fit.converged && method == PropensityMethod::Gee &&
      fit.residual_norm <= kBoundaryResidual &&
      fit.pi_a.minCoeff() > 0.0 && !saturated(fit.pi_a, fit.pi_b)) {
    fit.message = "boundary";
  }
  return fit;
}

}  // namespace

GramVerdict check_identifiability(const Eigen::MatrixXd& z, IdentCondition) {
  GramVerdict verdict;
  const Eigen::Index J = z.cols();
  verdict.dimension = static_cast<int>(J);
  if (J == 0) return verdict;
  if (z.rows() == 0) {
    verdict.dependent_columns.resize(static_cast<std::size_t>(J));
    for (Eigen::Index j = 0; j < J; ++j) verdict.dependent_columns[j] = static_cast<int>(j);
    return verdict;
  }

  Eigen::VectorXd scale(J);
  for (Eigen::Index j = 0; j < J; ++j) {
    const double maxabs = z.col(j).cwiseAbs().maxCoeff();
    scale(j) = maxabs > 0.0 ? 1.0 / maxabs : 1.0;
  }
  const Eigen::MatrixXd zs = z * scale.asDiagonal();
  const Eigen::MatrixXd gram = zs.transpose() * zs;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigen(gram);
  const Eigen::VectorXd& lambda = eigen.eigenvalues();
  verdict.min_eigenvalue = lambda.minCoeff();
  verdict.max_eigenvalue = lambda.maxCoeff();
  const double thresh = std::max(lambda.cwiseAbs().maxCoeff() * 1e-10, 1e-300);

  for (Eigen::Index j = 0; j < J; ++j) {
    if (lambda(j) > thresh) {
      ++verdict.rank;
    } else {
      const Eigen::VectorXd v = eigen.eigenvectors().col(j).cwiseAbs();
      const double vmax = v.maxCoeff();
      for (Eigen::Index k = 0; k < J; ++k) {
        if (v(k) > 0.3 * vmax) verdict.dependent_columns.push_back(static_cast<int>(k));
      }
    }
  }
  std::sort(verdict.dependent_columns.begin(), verdict.dependent_columns.end());
  verdict.dependent_columns.erase(
      std::unique(verdict.dependent_columns.begin(), verdict.dependent_columns.end()),
      verdict.dependent_columns.end());
  verdict.ok = verdict.rank == static_cast<int>(J);
  return verdict;
}

Design build_design(const NonProbSample& a, const ProbSample& b,
                    const BalanceSpec& spec) {
  const std::vector<std::string> problems = validate_pair(a, b, spec);
  if (!problems.empty()) {
    std::string msg = "invalid sample pair:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw std::invalid_argument(msg);
  }
  if (!spec.include_intercept && spec.quantile_count() > 0) {
    throw std::invalid_argument(
        "quantile constraints require the intercept (population size) row");
  }

  Design design;
  design.population_size = spec.resolved_population_size(b);
  design.has_intercept = spec.include_intercept;
  design.quantile_constraints = compute_breaks(b, spec);

  const Eigen::Index n_a = a.size();
  const Eigen::Index n_b = b.size();
  const Eigen::Index n_int = spec.include_intercept ? 1 : 0;
  const Eigen::Index n_tot = static_cast<Eigen::Index>(spec.total_columns.size());
  const Eigen::Index n_q = static_cast<Eigen::Index>(design.quantile_constraints.size());
  const Eigen::Index width = n_int + n_tot + n_q;
  if (width == 0) {
    throw std::invalid_argument("balance spec selects no design columns");
  }

  design.za.resize(n_a, width);
  design.zb.resize(n_b, width);
  design.labels.reserve(width);

  Eigen::Index col = 0;
  if (spec.include_intercept) {
    design.za.col(col).setOnes();
    design.zb.col(col).setOnes();
    design.labels.push_back("(intercept)");
    ++col;
  }
  for (int c : spec.total_columns) {
    design.za.col(col) = a.X.col(c);
    design.zb.col(col) = b.X.col(c);
    design.labels.push_back(c < static_cast<int>(b.columns.size())
                                ? b.columns[static_cast<std::size_t>(c)]
                                : "col" + std::to_string(c));
    ++col;
  }
  if (n_q > 0) {
    const Eigen::MatrixXd aa =
        build_a_matrix(a.X, design.quantile_constraints, design.population_size);
    const Eigen::MatrixXd ab =
        build_a_matrix(b.X, design.quantile_constraints, design.population_size);
    design.za.middleCols(col, n_q) = aa.rightCols(n_q);
    design.zb.middleCols(col, n_q) = ab.rightCols(n_q);
    for (const auto& c : design.quantile_constraints) {
      char level[32];
      std::snprintf(level, sizeof level, "%g", c.alpha);
      const std::string base = c.column < static_cast<int>(b.columns.size())
                                   ? b.columns[static_cast<std::size_t>(c.column)]
                                   : "col" + std::to_string(c.column);
      design.labels.push_back(base + "@q" + level);
    }
    col += n_q;
  }
  return design;
}

double pseudo_log_likelihood(const Eigen::VectorXd& eta, const Eigen::MatrixXd& za,
                             const Eigen::MatrixXd& zb, const Eigen::VectorXd& d) {
  const Eigen::VectorXd ta = za * eta;
  const Eigen::VectorXd tb = zb * eta;
  double value = ta.sum();
  for (Eigen::Index i = 0; i < tb.size(); ++i) value -= d(i) * log1pexp(tb(i));
  return value;
}

Eigen::VectorXd score_u(const Eigen::VectorXd& eta, const Eigen::MatrixXd& za,
                        const Eigen::MatrixXd& zb, const Eigen::VectorXd& d) {
  Eigen::VectorXd p = zb * eta;
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = d(i) * expit(p(i));
  return za.colwise().sum().transpose() - zb.transpose() * p;
}

Eigen::MatrixXd score_u_jacobian(const Eigen::VectorXd& eta, const Eigen::MatrixXd&,
                                 const Eigen::MatrixXd& zb, const Eigen::VectorXd& d) {
  Eigen::VectorXd q = zb * eta;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const double p = expit(q(i));
    q(i) = d(i) * p * (1.0 - p);
  }
  return -zb.transpose() * q.asDiagonal() * zb;
}

Eigen::VectorXd gee_g(const Eigen::VectorXd& eta, const Eigen::MatrixXd& za,
                      const Eigen::MatrixXd& zb, const Eigen::VectorXd& d) {
  Eigen::VectorXd w = za * eta;
  for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = 1.0 / expit(w(i));
  return za.transpose() * w - zb.transpose() * d;
}

Eigen::MatrixXd gee_g_jacobian(const Eigen::VectorXd& eta, const Eigen::MatrixXd& za,
                               const Eigen::MatrixXd&, const Eigen::VectorXd&) {
  Eigen::VectorXd q = za * eta;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const double p = expit(q(i));
    q(i) = (1.0 - p) / p;
  }
  return -za.transpose() * q.asDiagonal() * za;
}

PropensityFit solve_mle(const Eigen::MatrixXd& za, const Eigen::MatrixXd& zb,
                        const Eigen::VectorXd& d, const SolverOptions& options) {
  return solve_impl(za, zb, d, PropensityMethod::Mle, options);
}

PropensityFit solve_gee(const Eigen::MatrixXd& za, const Eigen::MatrixXd& zb,
                        const Eigen::VectorXd& d, const SolverOptions& options) {
  return solve_impl(za, zb, d, PropensityMethod::Gee, options);
}

}  // namespace qbipw
