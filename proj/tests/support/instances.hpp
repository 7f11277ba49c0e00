#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "qbipw/rng.hpp"
#include "qbipw/types.hpp"

// Seeded synthetic sample pairs for solver and estimator tests. The
// probability sample is weighted so that sum(d) comfortably exceeds n_A,
// keeping the calibrated (GEE) system solvable with propensities in (0,1).
namespace qbipw::testing {

struct Instance {
  qbipw::NonProbSample a;
  qbipw::ProbSample b;
};

inline Instance random_instance(std::uint64_t seed, Eigen::Index n_a,
                                Eigen::Index n_b, int p) {
  qbipw::Rng rng(seed);
  Instance inst;
  inst.a.X.resize(n_a, p);
  inst.a.y.resize(n_a);
  inst.b.X.resize(n_b, p);
  inst.b.d.resize(n_b);
  for (int j = 0; j < p; ++j) {
    inst.a.columns.push_back("x" + std::to_string(j + 1));
    inst.b.columns.push_back("x" + std::to_string(j + 1));
  }
  // S_A skews mildly upward so the participation model has signal.
  for (Eigen::Index i = 0; i < n_a; ++i) {
    for (int j = 0; j < p; ++j) inst.a.X(i, j) = rng.normal(0.3, 1.0);
    inst.a.y[i] = 1.0 + inst.a.X.row(i).sum() + rng.normal();
  }
  for (Eigen::Index i = 0; i < n_b; ++i) {
    for (int j = 0; j < p; ++j) inst.b.X(i, j) = rng.normal(0.0, 1.0);
    inst.b.d[i] = 2.0 + 2.0 * rng.uniform();  // in [2, 4]
  }
  return inst;
}

}  // namespace qbipw::testing
