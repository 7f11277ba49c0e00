#include "qbipw/types.hpp"

#include <cmath>
#include <set>
#include <string>

namespace qbipw {
namespace {

std::string row_str(Eigen::Index i) { return std::to_string(static_cast<long long>(i)); }

void check_finite(const Eigen::MatrixXd& m, const std::string& what,
                  std::vector<std::string>& out) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (!std::isfinite(m(i, j))) {
        out.push_back(what + " has a non-finite value at row " + row_str(i) +
                      ", column " + row_str(j));
        return;  // one report per matrix is enough to act on
      }
    }
  }
}

void check_column_refs(const BalanceSpec& spec, Eigen::Index p,
                       std::vector<std::string>& out) {
  for (int c : spec.total_columns) {
    if (c < 0 || c >= p) {
      out.push_back("total constraint refers to column " + std::to_string(c) +
                    " outside the 0.." + row_str(p - 1) + " range");
    }
  }
  for (const auto& q : spec.quantile_columns) {
    if (q.column < 0 || q.column >= p) {
      out.push_back("quantile constraint refers to column " +
                    std::to_string(q.column) + " outside the 0.." +
                    row_str(p - 1) + " range");
    }
    if (q.levels.empty()) {
      out.push_back("quantile constraint on column " + std::to_string(q.column) +
                    " has no levels");
    }
    double prev = 0.0;
    for (double alpha : q.levels) {
      if (!(alpha > 0.0 && alpha < 1.0)) {
        out.push_back("quantile level " + std::to_string(alpha) + " on column " +
                      std::to_string(q.column) + " is outside (0, 1)");
      } else if (alpha <= prev) {
        out.push_back("quantile levels on column " + std::to_string(q.column) +
                      " must be strictly increasing and duplicate-free");
        break;
      }
      prev = alpha;
    }
  }
}

}  // namespace

std::vector<std::string> validate_pair(const NonProbSample& a,
                                       const ProbSample& b,
                                       const BalanceSpec& spec) {
  std::vector<std::string> out;

  if (a.size() == 0) out.push_back("non-probability sample is empty");
  if (b.size() == 0) out.push_back("probability sample is empty");
  if (a.y.size() != a.size()) {
    out.push_back("outcome length " + row_str(a.y.size()) +
                  " does not match non-probability sample size " + row_str(a.size()));
  }
  if (b.d.size() != b.size()) {
    out.push_back("design weight length " + row_str(b.d.size()) +
                  " does not match probability sample size " + row_str(b.size()));
  }
  if (a.X.cols() != b.X.cols()) {
    out.push_back("covariate dimension differs between samples: " +
                  row_str(a.X.cols()) + " vs " + row_str(b.X.cols()));
  }
  if (!a.columns.empty() && static_cast<Eigen::Index>(a.columns.size()) != a.X.cols()) {
    out.push_back("non-probability column names do not match covariate count");
  }
  if (!b.columns.empty() && static_cast<Eigen::Index>(b.columns.size()) != b.X.cols()) {
    out.push_back("probability column names do not match covariate count");
  }

  check_finite(a.X, "non-probability covariate matrix", out);
  check_finite(b.X, "probability covariate matrix", out);
  if (a.y.size() == a.size()) check_finite(a.y, "outcome vector", out);

  for (Eigen::Index i = 0; i < b.d.size(); ++i) {
    if (!std::isfinite(b.d(i)) || b.d(i) <= 0.0) {
      out.push_back("nonpositive or non-finite design weight at row " + row_str(i));
      break;
    }
  }
  if (b.strata && b.strata->size() != b.size()) {
    out.push_back("stratum label length does not match probability sample size");
  }
  if (spec.population_size && !(*spec.population_size > 0.0)) {
    out.push_back("population size must be positive");
  }

  check_column_refs(spec, std::min(a.X.cols(), b.X.cols()), out);
  return out;
}

}  // namespace qbipw
