#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "qbipw/math.hpp"

using namespace qbipw;

namespace {
double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
}  // namespace

TEST_CASE("expit basics") {
  CHECK(expit(0.0) == doctest::Approx(0.5));
  CHECK(expit(40.0) == doctest::Approx(1.0));
  CHECK(expit(-40.0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(expit(710.0) == 1.0);    // no overflow
  CHECK(expit(-710.0) >= 0.0);   // no underflow surprises
  for (double x : {-5.0, -1.0, -0.25, 0.7, 3.0})
    CHECK(expit(-x) == doctest::Approx(1.0 - expit(x)).epsilon(1e-14));
  CHECK(expit(1.0) > expit(0.5));
}

TEST_CASE("logit inverts expit") {
  for (double p : {1e-8, 0.01, 0.25, 0.5, 0.9, 1.0 - 1e-8})
    CHECK(expit(logit(p)) == doctest::Approx(p).epsilon(1e-12));
  for (double x : {-20.0, -2.0, 0.0, 1.5, 15.0})
    CHECK(logit(expit(x)) == doctest::Approx(x).epsilon(1e-9));
  // Near saturation 1 - expit(x) loses bits to cancellation before logit
  // ever sees it, so the round trip is only absolutely accurate to ~1e-7.
  CHECK(logit(expit(20.0)) == doctest::Approx(20.0).epsilon(1e-6));
}

TEST_CASE("log1pexp against direct evaluation and asymptotes") {
  CHECK(log1pexp(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  for (double x : {-30.0, -10.0, -1.0, 0.5, 10.0, 30.0})
    CHECK(log1pexp(x) == doctest::Approx(std::log1p(std::exp(x))).epsilon(1e-14));
  CHECK(log1pexp(-50.0) == doctest::Approx(std::exp(-50.0)).epsilon(1e-12));
  CHECK(log1pexp(800.0) == doctest::Approx(800.0).epsilon(1e-15));
  CHECK(log1pexp(-800.0) >= 0.0);
}

TEST_CASE("normal_quantile matches the erfc-based normal CDF") {
  // Round trip through an independent CDF implementation.
  for (double p = 0.0005; p < 1.0; p += 0.0125)
    CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-12));
  for (double p : {1e-12, 1e-300, 1.0 - 1e-12})
    CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-9));
}

TEST_CASE("normal_quantile pinned values") {
  CHECK(normal_quantile(0.5) == 0.0);
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959964).epsilon(1e-6));
  CHECK(normal_quantile(0.95) == doctest::Approx(1.6448536269514722).epsilon(1e-12));
  for (double p : {0.001, 0.1, 0.3})
    CHECK(normal_quantile(p) == doctest::Approx(-normal_quantile(1.0 - p)).epsilon(1e-10));
}

TEST_CASE("normal_quantile rejects arguments outside (0,1)") {
  CHECK_THROWS_AS(normal_quantile(0.0), std::invalid_argument);
  CHECK_THROWS_AS(normal_quantile(1.0), std::invalid_argument);
  CHECK_THROWS_AS(normal_quantile(-0.5), std::invalid_argument);
  CHECK_THROWS_AS(normal_quantile(2.0), std::invalid_argument);
}
