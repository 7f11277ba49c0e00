#include "qbipw/quantile_calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "qbipw/errors.hpp"
#include "qbipw/math.hpp"

namespace qbipw {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Distinct sample values in ascending order with cumulative weight mass.
struct DistinctCdf {
  std::vector<double> values;
  std::vector<double> cum;  // cum[i] = total weight of units with value <= values[i]
  double total = 0.0;

  DistinctCdf(const Eigen::VectorXd& values_in, const Eigen::VectorXd& weights_in) {
    const Eigen::Index n = values_in.size();
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index l, Eigen::Index r) {
      return values_in(l) < values_in(r);
    });
    values.reserve(n);
    cum.reserve(n);
    double running = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double v = values_in(order[k]);
      running += weights_in(order[k]);
      if (!values.empty() && values.back() == v) {
        cum.back() = running;
      } else {
        values.push_back(v);
        cum.push_back(running);
      }
    }
    total = running;
  }
};

void require_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("quantile level must lie strictly in (0, 1)");
  }
}

void require_same_size(const Eigen::VectorXd& weights, const Eigen::VectorXd& values) {
  if (weights.size() != values.size() || values.size() == 0) {
    throw std::invalid_argument("weights and values must be non-empty and equally sized");
  }
}

}  // namespace

double smooth_heaviside(double x, double steepness) {
  return expit(2.0 * steepness * x);
}

QuantileBreak bracket_at(const Eigen::VectorXd& values, double t) {
  if (values.size() == 0) {
    throw std::invalid_argument("bracket_at: empty sample");
  }
  std::vector<double> sorted(values.data(), values.data() + values.size());
  std::sort(sorted.begin(), sorted.end());

  QuantileBreak out;
  out.target = t;
  const auto above = std::upper_bound(sorted.begin(), sorted.end(), t);
  out.lower = above == sorted.begin() ? -kInf : *(above - 1);
  out.upper = above == sorted.end() ? kInf : *above;
  if (std::isinf(out.lower) || std::isinf(out.upper)) {
    out.theta = 0.0;
  } else {
    out.theta = (t - out.lower) / (out.upper - out.lower);
  }
  return out;
}

QuantileBreak compute_break(const Eigen::VectorXd& values,
                            const Eigen::VectorXd& weights, double alpha) {
  require_same_size(weights, values);
  require_alpha(alpha);

  const double q = weighted_quantile(weights, values, alpha);
  QuantileBreak out = bracket_at(values, q);
  if (std::isinf(out.upper)) {
    // Only possible when every sample value is identical: the quantile then
    // equals that value and no strictly larger value exists.
    out.upper = out.lower;
    out.theta = 0.0;
    out.degenerate = true;
  }
  return out;
}

double modified_heaviside(double t, double y, const Eigen::VectorXd& sample_values) {
  const QuantileBreak b = bracket_at(sample_values, t);
  if (y <= b.lower) return 1.0;
  if (y == b.upper) return b.theta;
  return 0.0;
}

double interpolated_cdf(const Eigen::VectorXd& weights,
                        const Eigen::VectorXd& values, double t) {
  require_same_size(weights, values);
  const DistinctCdf cdf(values, weights);
  if (cdf.total == 0.0) {
    throw std::invalid_argument("interpolated_cdf: weights sum to zero");
  }
  if (t < cdf.values.front()) return 0.0;
  if (t >= cdf.values.back()) return 1.0;

  const auto above = std::upper_bound(cdf.values.begin(), cdf.values.end(), t);
  const std::size_t i = static_cast<std::size_t>(above - cdf.values.begin()) - 1;
  const double lower = cdf.values[i];
  const double upper = cdf.values[i + 1];
  const double theta = (t - lower) / (upper - lower);
  const double mass_above = cdf.cum[i + 1] - cdf.cum[i];
  return (cdf.cum[i] + theta * mass_above) / cdf.total;
}

double weighted_quantile(const Eigen::VectorXd& weights,
                         const Eigen::VectorXd& values, double alpha) {
  require_same_size(weights, values);
  require_alpha(alpha);
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (!(weights(i) >= 0.0) || !std::isfinite(weights(i))) {
      throw std::invalid_argument("weighted_quantile: weights must be nonnegative");
    }
  }

  const DistinctCdf cdf(values, weights);
  if (!(cdf.total > 0.0)) {
    throw std::invalid_argument("weighted_quantile: weights sum to zero");
  }

  const double mass = alpha * cdf.total;
  if (mass <= cdf.cum.front()) return cdf.values.front();

  // First index with cumulative mass >= alpha * total; the quantile sits on
  // the linear segment ending at that value.
  const auto at = std::lower_bound(cdf.cum.begin(), cdf.cum.end(), mass);
  const std::size_t j = static_cast<std::size_t>(at - cdf.cum.begin());
  const double below = cdf.cum[j - 1];
  const double step = cdf.cum[j] - below;
  const double theta = (mass - below) / step;
  return cdf.values[j - 1] + theta * (cdf.values[j] - cdf.values[j - 1]);
}

std::vector<QuantileConstraint> compute_breaks(const ProbSample& b,
                                               const BalanceSpec& spec) {
  std::vector<QuantileConstraint> out;
  out.reserve(spec.quantile_count());
  for (const auto& request : spec.quantile_columns) {
    if (request.column < 0 || request.column >= b.X.cols()) {
      throw std::invalid_argument("quantile constraint column out of range");
    }
    for (double alpha : request.levels) {
      QuantileConstraint c;
      c.column = request.column;
      c.alpha = alpha;
      c.brk = compute_break(b.X.col(request.column), b.d, alpha);
      out.push_back(c);
    }
  }
  return out;
}

Eigen::MatrixXd build_a_matrix(const Eigen::MatrixXd& X,
                               const std::vector<QuantileConstraint>& constraints,
                               double population_size) {
  if (!(population_size > 0.0)) {
    throw std::invalid_argument("build_a_matrix: population size must be positive");
  }
  const Eigen::Index n = X.rows();
  const Eigen::Index q = static_cast<Eigen::Index>(constraints.size());
  Eigen::MatrixXd a(n, 1 + q);
  a.col(0).setOnes();

  const double inv_n = 1.0 / population_size;
  for (Eigen::Index j = 0; j < q; ++j) {
    const QuantileConstraint& c = constraints[static_cast<std::size_t>(j)];
    if (c.column < 0 || c.column >= X.cols()) {
      throw std::invalid_argument("quantile constraint column out of range");
    }
    const QuantileBreak& b = c.brk;
    if (!b.degenerate && (std::isinf(b.lower) || std::isinf(b.upper))) {
      throw estimation_error(
          "quantile target " + std::to_string(b.target) + " for column " +
          std::to_string(c.column) + " lies outside the sample value range");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const double x = X(i, c.column);
      double v = 0.0;
      if (x <= b.lower) {
        v = inv_n;
      } else if (x == b.upper) {
        v = inv_n * b.theta;
      }
      a(i, 1 + j) = v;
    }
  }
  return a;
}

Eigen::VectorXd a_targets(const std::vector<QuantileConstraint>& constraints,
                          double population_size) {
  Eigen::VectorXd t(1 + static_cast<Eigen::Index>(constraints.size()));
  t(0) = population_size;
  for (std::size_t j = 0; j < constraints.size(); ++j) {
    t(1 + static_cast<Eigen::Index>(j)) = constraints[j].alpha;
  }
  return t;
}

Eigen::VectorXd calibrate_to_constraints(const Eigen::VectorXd& d,
                                         const Eigen::MatrixXd& Z,
                                         const Eigen::VectorXd& targets) {
  const Eigen::Index n = Z.rows();
  const Eigen::Index m = Z.cols();
  if (d.size() != n) {
    throw std::invalid_argument("calibration: weight length does not match rows");
  }
  if (targets.size() != m) {
    throw std::invalid_argument("calibration: target length does not match columns");
  }
  if (m == 0) return d;

  // Columns are brought to unit max-abs scale before the rank test so that
  // constraint columns of very different magnitude (totals vs 1/N quantile
  // columns) are judged on shape, not scale.
  Eigen::VectorXd scale(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double maxabs = Z.col(j).cwiseAbs().maxCoeff();
    scale(j) = maxabs > 0.0 ? 1.0 / maxabs : 1.0;
  }
  const Eigen::MatrixXd zs = Z * scale.asDiagonal();
  const Eigen::MatrixXd gram =
      zs.transpose() * d.asDiagonal() * zs;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigen(gram);
  const Eigen::VectorXd& lambda = eigen.eigenvalues();
  const double lambda_max = lambda.cwiseAbs().maxCoeff();
  const double thresh = std::max(lambda_max * 1e-11, 1e-300);
  int rank = 0;
  std::vector<int> dependent;
  for (Eigen::Index j = 0; j < m; ++j) {
    if (lambda(j) > thresh) {
      ++rank;
    } else {
      const Eigen::VectorXd v = eigen.eigenvectors().col(j).cwiseAbs();
      const double vmax = v.maxCoeff();
      for (Eigen::Index k = 0; k < m; ++k) {
        if (v(k) > 0.3 * vmax) dependent.push_back(static_cast<int>(k));
      }
    }
  }
  if (rank < m) {
    std::sort(dependent.begin(), dependent.end());
    dependent.erase(std::unique(dependent.begin(), dependent.end()), dependent.end());
    std::string msg = "calibration constraints are linearly dependent (rank " +
                      std::to_string(rank) + " of " + std::to_string(m) +
                      "); involved columns:";
    for (int c : dependent) msg += " " + std::to_string(c);
    throw identifiability_error(msg, rank, static_cast<int>(m), dependent);
  }

  const Eigen::VectorXd gap = targets - Z.transpose() * d;
  const Eigen::VectorXd lambda_mult =
      eigen.eigenvectors() *
      (eigen.eigenvectors().transpose() * (scale.asDiagonal() * gap)).cwiseQuotient(lambda);
  return d.array() * (1.0 + (zs * lambda_mult).array());
}

Eigen::VectorXd calibrate_totals(const Eigen::VectorXd& d,
                                 const Eigen::MatrixXd& X,
                                 const Eigen::VectorXd& targets) {
  return calibrate_to_constraints(d, X, targets);
}

Eigen::VectorXd calibrate_quantiles(const Eigen::VectorXd& d,
                                    const Eigen::MatrixXd& a,
                                    const Eigen::VectorXd& targets) {
  return calibrate_to_constraints(d, a, targets);
}

}  // namespace qbipw
