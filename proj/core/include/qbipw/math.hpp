#pragma once

#include <cmath>

namespace qbipw {

// Logistic function, stable on both tails.
inline double expit(double t) {
  if (t >= 0.0) {
    return 1.0 / (1.0 + std::exp(-t));
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// log(1 + exp(t)) without overflow or loss of precision.
inline double log1pexp(double t) {
  if (t <= -37.0) return std::exp(t);
  if (t <= 18.0) return std::log1p(std::exp(t));
  if (t <= 33.3) return t + std::exp(-t);
  return t;
}

// Standard normal quantile (Wichura's AS 241 PPND16), |error| < 1e-15.
// p must lie in (0, 1).
double normal_quantile(double p);

}  // namespace qbipw
