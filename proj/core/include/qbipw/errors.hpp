#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace qbipw {

// Raised when a design or constraint matrix fails the rank conditions that
// make a fit or calibration unique (singular Gram matrix, collinear columns).
class identifiability_error : public std::runtime_error {
public:
  identifiability_error(std::string msg, int rank, int dimension,
                        std::vector<int> columns = {})
      : std::runtime_error(std::move(msg)),
        rank(rank),
        dimension(dimension),
        dependent_columns(std::move(columns)) {}

  int rank;
  int dimension;
  std::vector<int> dependent_columns;

  int nullity() const { return dimension - rank; }
};

// Raised when a numerical procedure cannot produce a usable result
// (bootstrap failure rate too high, singular bread matrix, quantile target
// outside the sample support).
class estimation_error : public std::runtime_error {
public:
  explicit estimation_error(const std::string& msg)
      : std::runtime_error(msg) {}
};

}  // namespace qbipw
