#include <doctest.h>

#include <cmath>

#include "qbipw/errors.hpp"
#include "qbipw/estimators.hpp"
#include "qbipw/glm.hpp"
#include "qbipw/math.hpp"
#include "qbipw/rng.hpp"
#include "support/instances.hpp"

using namespace qbipw;
using qbipw::testing::random_instance;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// S_B that duplicates S_A with every design weight equal to `d`.
ProbSample duplicated(const NonProbSample& a, double d) {
  ProbSample b;
  b.X = a.X;
  b.d = Eigen::VectorXd::Constant(a.size(), d);
  b.columns = a.columns;
  return b;
}

}  // namespace

TEST_CASE("naive mean") {
  NonProbSample a;
  a.X = Eigen::MatrixXd::Zero(4, 1);
  a.y = vec({1, 2, 3, 6});
  a.columns = {"x1"};
  CHECK(naive_mean(a) == doctest::Approx(3.0).epsilon(1e-15));

  NonProbSample empty;
  empty.X = Eigen::MatrixXd::Zero(0, 1);
  empty.y = Eigen::VectorXd(0);
  CHECK_THROWS_AS(naive_mean(empty), std::invalid_argument);
}

TEST_CASE("inverse-probability weighted mean") {
  SUBCASE("worked fixed-size example") {
    CHECK(ipw_mean(vec({2, 4}), vec({0.5, 0.5}), IpwVersion::FixedN, 4.0) ==
          doctest::Approx(3.0).epsilon(1e-15));
  }
  SUBCASE("forms disagree when propensities vary") {
    const Eigen::VectorXd y = vec({2, 4});
    const Eigen::VectorXd pi = vec({0.5, 0.25});
    CHECK(ipw_mean(y, pi, IpwVersion::FixedN, 4.0) == doctest::Approx(5.0));
    CHECK(ipw_mean(y, pi, IpwVersion::Hajek) == doctest::Approx(20.0 / 6.0));
  }
  SUBCASE("constant propensity n_A/N collapses both forms to the sample mean") {
    const Eigen::VectorXd y = vec({2, 4, 9});
    const Eigen::VectorXd pi = Eigen::VectorXd::Constant(3, 3.0 / 10.0);
    CHECK(ipw_mean(y, pi, IpwVersion::FixedN, 10.0) == doctest::Approx(5.0).epsilon(1e-14));
    CHECK(ipw_mean(y, pi, IpwVersion::Hajek) == doctest::Approx(5.0).epsilon(1e-14));
  }
  SUBCASE("ratio form is exact for constant outcomes and scale-free in pi") {
    Rng rng(61);
    Eigen::VectorXd pi(6), y(6);
    for (int i = 0; i < 6; ++i) {
      pi[i] = rng.uniform_open();
      y[i] = rng.normal();
    }
    CHECK(ipw_mean(Eigen::VectorXd::Constant(6, 4.2), pi, IpwVersion::Hajek) ==
          doctest::Approx(4.2).epsilon(1e-14));
    CHECK(ipw_mean(y, pi * 0.37, IpwVersion::Hajek) ==
          doctest::Approx(ipw_mean(y, pi, IpwVersion::Hajek)).epsilon(1e-12));
  }
  SUBCASE("input validation") {
    CHECK_THROWS_AS(ipw_mean(vec({1, 2}), vec({0.5}), IpwVersion::Hajek),
                    std::invalid_argument);
    CHECK_THROWS_AS(ipw_mean(vec({1, 2}), vec({0.5, 0.0}), IpwVersion::Hajek),
                    estimation_error);
    CHECK_THROWS_AS(ipw_mean(vec({1, 2}), vec({0.5, -0.1}), IpwVersion::Hajek),
                    estimation_error);
    CHECK_THROWS_AS(ipw_mean(vec({1, 2}), vec({0.5, 0.5}), IpwVersion::FixedN, 0.0),
                    std::invalid_argument);
  }
}

TEST_CASE("quantile-balanced weighting pipeline") {
  SUBCASE("a balance spec without quantile constraints is refused") {
    auto inst = random_instance(62, 20, 30, 2);
    BalanceSpec spec;
    spec.total_columns = {0, 1};
    CHECK_THROWS_AS(qbipw_mean(inst.a, inst.b, spec, PropensityMethod::Gee),
                    std::invalid_argument);
  }

  SUBCASE("duplicated samples give constant propensities and the naive mean") {
    auto inst = random_instance(63, 40, 40, 2);
    const ProbSample b = duplicated(inst.a, 2.0);
    BalanceSpec spec;
    spec.total_columns = {0, 1};
    spec.quantile_columns = {{0, {0.25, 0.5, 0.75}}};
    for (PropensityMethod m : {PropensityMethod::Gee, PropensityMethod::Mle}) {
      const EstimateResult r = qbipw_mean(inst.a, b, spec, m);
      REQUIRE(r.fit.has_value());
      CHECK(r.fit->converged);
      CHECK(r.point == doctest::Approx(naive_mean(inst.a)).epsilon(1e-6));
      for (Eigen::Index i = 0; i < r.fit->pi_a.size(); ++i)
        CHECK(r.fit->pi_a[i] == doctest::Approx(0.5).epsilon(1e-6));
    }
  }

  SUBCASE("converged GEE fit reports constraint residuals below tolerance") {
    auto inst = random_instance(64, 60, 90, 2);
    BalanceSpec spec;
    spec.total_columns = {0, 1};
    spec.quantile_columns = {{0, {0.25, 0.5, 0.75}}, {1, {0.25, 0.5, 0.75}}};
    const EstimateResult r = qbipw_mean(inst.a, inst.b, spec, PropensityMethod::Gee);
    REQUIRE(r.fit.has_value());
    REQUIRE(r.fit->converged);
    CHECK(r.fit->constraint_residuals.maxCoeff() <= 1e-8);
    CHECK(std::isfinite(r.point));
  }
}

TEST_CASE("mass imputation through a regression model") {
  SUBCASE("exactly linear outcomes transfer exactly") {
    auto inst = random_instance(65, 30, 50, 2);
    inst.a.y = 2.0 + 3.0 * inst.a.X.col(0).array() - 0.5 * inst.a.X.col(1).array();
    const Eigen::VectorXd truth =
        2.0 + 3.0 * inst.b.X.col(0).array() - 0.5 * inst.b.X.col(1).array();
    const double expected = inst.b.d.dot(truth) / inst.b.d.sum();
    CHECK(mi_glm(inst.a, inst.b, OutcomeKind::Continuous) ==
          doctest::Approx(expected).epsilon(1e-10));
  }
  SUBCASE("constant outcomes predict the constant") {
    auto inst = random_instance(66, 25, 40, 2);
    inst.a.y.setConstant(4.25);
    CHECK(mi_glm(inst.a, inst.b, OutcomeKind::Continuous) ==
          doctest::Approx(4.25).epsilon(1e-10));
  }
  SUBCASE("covariate subset restricts the design") {
    auto inst = random_instance(67, 40, 60, 2);
    inst.a.y = 1.0 + 2.0 * inst.a.X.col(0).array();
    const Eigen::VectorXd truth = 1.0 + 2.0 * inst.b.X.col(0).array();
    CHECK(mi_glm(inst.a, inst.b, OutcomeKind::Continuous, {0}) ==
          doctest::Approx(inst.b.d.dot(truth) / inst.b.d.sum()).epsilon(1e-10));
  }
  SUBCASE("binary outcomes go through the logistic link") {
    auto inst = random_instance(68, 200, 80, 2);
    Rng rng(69);
    for (Eigen::Index i = 0; i < inst.a.size(); ++i)
      inst.a.y[i] = rng.uniform() < expit(0.3 * inst.a.X(i, 0)) ? 1.0 : 0.0;
    const double m = mi_glm(inst.a, inst.b, OutcomeKind::Binary);
    CHECK(m > 0.0);
    CHECK(m < 1.0);
  }
  SUBCASE("duplicated covariate columns are a rank failure") {
    auto inst = random_instance(70, 20, 30, 2);
    Eigen::MatrixXd xa(inst.a.X.rows(), 3);
    xa << inst.a.X, inst.a.X.col(1);
    inst.a.X = xa;
    inst.a.columns = {"x1", "x2", "x2copy"};
    Eigen::MatrixXd xb(inst.b.X.rows(), 3);
    xb << inst.b.X, inst.b.X.col(1);
    inst.b.X = xb;
    inst.b.columns = inst.a.columns;
    CHECK_THROWS_AS(mi_glm(inst.a, inst.b, OutcomeKind::Continuous),
                    identifiability_error);
  }
  SUBCASE("out-of-range covariate index") {
    auto inst = random_instance(71, 10, 10, 2);
    CHECK_THROWS_AS(mi_glm(inst.a, inst.b, OutcomeKind::Continuous, {5}),
                    std::invalid_argument);
  }
}

TEST_CASE("mass imputation by nearest neighbours") {
  NonProbSample a;
  a.X = Eigen::MatrixXd(3, 1);
  a.X << 0.0, 2.0, 4.0;
  a.y = vec({1, 2, 3});
  a.columns = {"x1"};

  ProbSample b;
  b.X = Eigen::MatrixXd(1, 1);
  b.X << 1.9;
  b.d = vec({1});
  b.columns = {"x1"};

  SUBCASE("single nearest donor") {
    CHECK(mi_nn(a, b, 1) == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("k equal to n_A always averages all donors") {
    CHECK(mi_nn(a, b, 3) == doctest::Approx(2.0).epsilon(1e-15));
    b.X << 100.0;
    CHECK(mi_nn(a, b, 3) == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("exact distance ties break toward the lowest donor row") {
    b.X << 1.0;  // equidistant from 0 and 2
    CHECK(mi_nn(a, b, 1) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("neighbour count bounds") {
    CHECK_THROWS_AS(mi_nn(a, b, 0), std::invalid_argument);
    CHECK_THROWS_AS(mi_nn(a, b, 4), std::invalid_argument);
  }
  SUBCASE("predictions are d-weighted means") {
    ProbSample two;
    two.X = Eigen::MatrixXd(2, 1);
    two.X << -1.0, 5.0;  // nearest donors: y=1 and y=3
    two.d = vec({3, 1});
    two.columns = {"x1"};
    CHECK(mi_nn(a, two, 1) == doctest::Approx((3.0 * 1 + 1.0 * 3) / 4.0).epsilon(1e-15));
  }
  SUBCASE("distances use donor-standardized covariates") {
    // Second column dominates raw distance but carries no signal once
    // standardized by its large donor spread.
    NonProbSample a2;
    a2.X = Eigen::MatrixXd(2, 2);
    a2.X << 0.0, 0.0, 1.0, 1000.0;
    a2.y = vec({10, 20});
    a2.columns = {"x1", "x2"};
    ProbSample b2;
    b2.X = Eigen::MatrixXd(1, 2);
    b2.X << 0.9, 200.0;
    b2.d = vec({1});
    b2.columns = a2.columns;
    // Raw Euclidean distance would pick donor 1 (x2 gap 200 vs 800);
    // standardized distance picks donor 2 through the x1 axis.
    const double sd1 = std::sqrt(0.5);       // sd of {0, 1}
    const double sd2 = std::sqrt(500000.0);  // sd of {0, 1000}
    const double d1 = std::pow((0.9 - 0.0) / sd1, 2) + std::pow((200.0 - 0.0) / sd2, 2);
    const double d2 = std::pow((0.9 - 1.0) / sd1, 2) + std::pow((200.0 - 1000.0) / sd2, 2);
    REQUIRE(d2 < d1);
    CHECK(mi_nn(a2, b2, 1) == doctest::Approx(20.0).epsilon(1e-15));
  }
}

TEST_CASE("doubly robust mean") {
  SUBCASE("a correct outcome model makes the residual part vanish") {
    auto inst = random_instance(72, 50, 80, 2);
    inst.a.y = 2.0 + 3.0 * inst.a.X.col(0).array() - 0.5 * inst.a.X.col(1).array();
    BalanceSpec spec;
    spec.total_columns = {0, 1};
    const EstimateResult dr =
        dr_mean(inst.a, inst.b, spec, PropensityMethod::Gee, OutcomeKind::Continuous);
    REQUIRE(dr.fit.has_value());
    REQUIRE(dr.fit->converged);
    CHECK(dr.point == doctest::Approx(mi_glm(inst.a, inst.b, OutcomeKind::Continuous))
                          .epsilon(1e-8));
  }
  SUBCASE("decomposes into model mean plus weighted residual mean") {
    auto inst = random_instance(73, 60, 90, 2);
    BalanceSpec spec;
    spec.total_columns = {0, 1};
    const EstimateResult dr =
        dr_mean(inst.a, inst.b, spec, PropensityMethod::Mle, OutcomeKind::Continuous);
    REQUIRE(dr.fit.has_value());
    REQUIRE(dr.fit->converged);

    Eigen::MatrixXd xa(inst.a.size(), 3);
    xa.col(0).setOnes();
    xa.col(1) = inst.a.X.col(0);
    xa.col(2) = inst.a.X.col(1);
    const LinearFit om = fit_linear(xa, inst.a.y);
    const Eigen::VectorXd resid = inst.a.y - xa * om.beta;
    const double expected =
        mi_glm(inst.a, inst.b, OutcomeKind::Continuous) +
        (resid.array() / dr.fit->pi_a.array()).sum() / inst.b.d.sum();
    CHECK(dr.point == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("estimator dispatcher") {
  auto inst = random_instance(74, 80, 120, 2);
  EstimatorSpec es;
  es.balance.total_columns = {0, 1};
  es.balance.quantile_columns = {{0, {}}, {1, {}}};

  SUBCASE("all ids run and produce finite points") {
    for (const std::string& id : estimator_ids()) {
      es.id = id;
      const EstimateResult r = run_point_estimator(es, inst.a, inst.b);
      CAPTURE(id);
      CHECK(std::isfinite(r.point));
      CHECK(r.estimator_id == id);
    }
    CHECK(estimator_ids().size() == 11);
  }
  SUBCASE("unknown ids are rejected") {
    es.id = "median";
    CHECK_THROWS_WITH_AS(run_point_estimator(es, inst.a, inst.b),
                         doctest::Contains("unknown estimator id"),
                         std::invalid_argument);
    es.id = "qbipw3-gee";
    CHECK_THROWS_AS(run_point_estimator(es, inst.a, inst.b), std::invalid_argument);
  }
  SUBCASE("ipw ids ignore quantile requests") {
    es.id = "ipw-gee";
    const EstimateResult with_q = run_point_estimator(es, inst.a, inst.b);
    EstimatorSpec totals = es;
    totals.balance.quantile_columns.clear();
    const EstimateResult without_q = run_point_estimator(totals, inst.a, inst.b);
    CHECK(with_q.point == doctest::Approx(without_q.point).epsilon(1e-14));
  }
  SUBCASE("qbipw ids fill quartile and decile levels") {
    es.id = "qbipw1-gee";
    const EstimateResult q1 = run_point_estimator(es, inst.a, inst.b);
    BalanceSpec quartiles = es.balance;
    quartiles.quantile_columns = {{0, {0.25, 0.5, 0.75}}, {1, {0.25, 0.5, 0.75}}};
    CHECK(q1.point ==
          doctest::Approx(qbipw_mean(inst.a, inst.b, quartiles, PropensityMethod::Gee).point)
              .epsilon(1e-12));

    es.id = "qbipw2-mle";
    const EstimateResult q2 = run_point_estimator(es, inst.a, inst.b);
    BalanceSpec deciles = es.balance;
    deciles.quantile_columns = {{0, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}},
                                {1, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}}};
    CHECK(q2.point ==
          doctest::Approx(qbipw_mean(inst.a, inst.b, deciles, PropensityMethod::Mle).point)
              .epsilon(1e-12));
  }
  SUBCASE("explicit levels are kept as given") {
    es.id = "qbipw1-gee";
    es.balance.quantile_columns = {{0, {0.5}}};
    const EstimateResult r = run_point_estimator(es, inst.a, inst.b);
    BalanceSpec median_only = es.balance;
    CHECK(r.point ==
          doctest::Approx(qbipw_mean(inst.a, inst.b, median_only, PropensityMethod::Gee).point)
              .epsilon(1e-12));
  }
  SUBCASE("intercept-only GEE makes the two ipw forms agree") {
    EstimatorSpec io;
    io.id = "ipw-gee";
    io.balance.total_columns = {};
    io.version = IpwVersion::Hajek;
    const EstimateResult hajek = run_point_estimator(io, inst.a, inst.b);
    io.version = IpwVersion::FixedN;
    io.balance.population_size = inst.b.d.sum();
    const EstimateResult fixed = run_point_estimator(io, inst.a, inst.b);
    CHECK(hajek.point == doctest::Approx(fixed.point).epsilon(1e-10));
  }
}
