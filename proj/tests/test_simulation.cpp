#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qbipw/csv.hpp"
#include "qbipw/estimators.hpp"
#include "qbipw/math.hpp"
#include "qbipw/rng.hpp"
#include "qbipw/simulation.hpp"
#include "support/instances.hpp"

using namespace qbipw;

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::filesystem::path temp_csv(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

// Maps each sample row back to its population index by scanning forward,
// which also proves rows appear in population order without repeats.
std::vector<Eigen::Index> population_indices(const PopulationFrame& frame,
                                             const Eigen::MatrixXd& X) {
  std::vector<Eigen::Index> idx;
  Eigen::Index j = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    while (j < frame.size() &&
           !(frame.x1[j] == X(i, 0) && frame.x2[j] == X(i, 1)))
      ++j;
    REQUIRE(j < frame.size());
    idx.push_back(j);
    ++j;
  }
  return idx;
}

}  // namespace

TEST_CASE("outcome and participation surfaces, pinned") {
  CHECK(linear_outcome(0, 0, 0, 0) == 1.0);
  CHECK(linear_outcome(1, 2, 0.5, -0.5) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(quadratic_outcome(1.5, 0, 0, 0) == 0.0);
  CHECK(quadratic_outcome(3.5, 2, 1, 0.5) == doctest::Approx(7.5).epsilon(1e-15));
  CHECK(linear_outcome_prob(0, 0, 0) == doctest::Approx(expit(1.0)).epsilon(1e-15));
  CHECK(quadratic_outcome_prob(1.5, 0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(participation_prob_linear(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(participation_prob_linear(2) == doctest::Approx(expit(2.0)).epsilon(1e-15));
  CHECK(participation_prob_quadratic(1.5, 2) ==
        doctest::Approx(expit(-3.0)).epsilon(1e-15));
}

TEST_CASE("scenario grid") {
  CHECK(std::string(scenario_label(1)) == "I");
  CHECK(std::string(scenario_label(4)) == "IV");
  CHECK(scenario_outcome_design(1) == OutcomeDesign::Linear);
  CHECK(scenario_outcome_design(2) == OutcomeDesign::Linear);
  CHECK(scenario_outcome_design(3) == OutcomeDesign::Quadratic);
  CHECK(scenario_outcome_design(4) == OutcomeDesign::Quadratic);
  CHECK(scenario_participation_design(1) == ParticipationDesign::Linear);
  CHECK(scenario_participation_design(2) == ParticipationDesign::Quadratic);
  CHECK(scenario_participation_design(3) == ParticipationDesign::Linear);
  CHECK(scenario_participation_design(4) == ParticipationDesign::Quadratic);
  CHECK_THROWS_AS(scenario_label(0), std::invalid_argument);
  CHECK_THROWS_AS(scenario_outcome_design(5), std::invalid_argument);
}

TEST_CASE("population frame generation") {
  const PopulationFrame frame = generate_population(20000, 7);

  SUBCASE("repeatable and seed-sensitive") {
    const PopulationFrame again = generate_population(20000, 7);
    CHECK((frame.x1.array() == again.x1.array()).all());
    CHECK((frame.y_quadratic.array() == again.y_quadratic.array()).all());
    CHECK((frame.yb_linear.array() == again.yb_linear.array()).all());
    const PopulationFrame other = generate_population(20000, 8);
    CHECK(!(frame.x1.array() == other.x1.array()).all());
  }

  SUBCASE("marginals sit at their model values") {
    CHECK(frame.x1.mean() == doctest::Approx(1.0).epsilon(0.05));
    CHECK((frame.x1.array() - frame.x1.mean()).square().mean() ==
          doctest::Approx(1.0).epsilon(0.05));
    CHECK(frame.x2.mean() == doctest::Approx(1.0).epsilon(0.05));
    CHECK(frame.x2.minCoeff() >= 0.0);
    CHECK(frame.alpha.mean() == doctest::Approx(0.0).epsilon(0.05));
    CHECK(std::abs(frame.eps.mean()) < 0.05);
  }

  SUBCASE("outcome columns are the surfaces applied to the draws") {
    for (Eigen::Index i : {Eigen::Index(0), Eigen::Index(777), Eigen::Index(19999)}) {
      CHECK(frame.y_linear[i] ==
            doctest::Approx(linear_outcome(frame.x1[i], frame.x2[i], frame.alpha[i],
                                           frame.eps[i]))
                .epsilon(1e-12));
      CHECK(frame.y_quadratic[i] ==
            doctest::Approx(quadratic_outcome(frame.x1[i], frame.x2[i],
                                              frame.alpha[i], frame.eps[i]))
                .epsilon(1e-12));
    }
    for (Eigen::Index i = 0; i < frame.size(); ++i) {
      CHECK((frame.yb_linear[i] == 0.0 || frame.yb_linear[i] == 1.0));
      if (frame.yb_quadratic[i] != 0.0) CHECK(frame.yb_quadratic[i] == 1.0);
    }
    CHECK(frame.yb_linear.mean() > 0.6);
    CHECK(frame.yb_linear.mean() < 0.98);
  }

  SUBCASE("outcome_column selects the matching vector") {
    CHECK(&outcome_column(frame, OutcomeDesign::Linear, OutcomeKind::Continuous) ==
          &frame.y_linear);
    CHECK(&outcome_column(frame, OutcomeDesign::Quadratic, OutcomeKind::Continuous) ==
          &frame.y_quadratic);
    CHECK(&outcome_column(frame, OutcomeDesign::Linear, OutcomeKind::Binary) ==
          &frame.yb_linear);
    CHECK(&outcome_column(frame, OutcomeDesign::Quadratic, OutcomeKind::Binary) ==
          &frame.yb_quadratic);
  }
}

TEST_CASE("probability sample selection") {
  const PopulationFrame frame = generate_population(2000, 9);

  SUBCASE("subsample keeps population order and constant weights") {
    const ProbSample b = select_prob(frame, 400, 11);
    REQUIRE(b.size() == 400);
    CHECK(b.columns == std::vector<std::string>{"x1", "x2"});
    CHECK((b.d.array() == 2000.0 / 400.0).all());
    CHECK(b.weight_sum() == doctest::Approx(2000.0).epsilon(1e-12));
    population_indices(frame, b.X);  // REQUIREs inside prove the mapping
  }

  SUBCASE("repeatable and seed-sensitive") {
    const ProbSample b1 = select_prob(frame, 400, 11);
    const ProbSample b2 = select_prob(frame, 400, 11);
    CHECK((b1.X.array() == b2.X.array()).all());
    const ProbSample b3 = select_prob(frame, 400, 12);
    CHECK(!(b1.X.array() == b3.X.array()).all());
  }

  SUBCASE("census keeps every unit with unit weight") {
    const ProbSample b = select_prob(frame, 2000, 13);
    REQUIRE(b.size() == 2000);
    CHECK((b.d.array() == 1.0).all());
    CHECK((b.X.col(0).array() == frame.x1.array()).all());
    CHECK((b.X.col(1).array() == frame.x2.array()).all());
  }
}

TEST_CASE("non-probability sample selection") {
  const PopulationFrame frame = generate_population(5000, 21);

  SUBCASE("participation shares sit near their design levels") {
    const NonProbSample lin = select_nonprob(frame, ParticipationDesign::Linear,
                                             OutcomeDesign::Linear,
                                             OutcomeKind::Continuous, 31);
    const double lin_share = static_cast<double>(lin.size()) / frame.size();
    CHECK(lin_share > 0.63);
    CHECK(lin_share < 0.80);

    const NonProbSample quad = select_nonprob(frame, ParticipationDesign::Quadratic,
                                              OutcomeDesign::Linear,
                                              OutcomeKind::Continuous, 32);
    const double quad_share = static_cast<double>(quad.size()) / frame.size();
    CHECK(quad_share > 0.33);
    CHECK(quad_share < 0.67);
  }

  SUBCASE("rows carry the population's covariates and outcomes") {
    const NonProbSample a = select_nonprob(frame, ParticipationDesign::Linear,
                                           OutcomeDesign::Quadratic,
                                           OutcomeKind::Continuous, 33);
    CHECK(a.columns == std::vector<std::string>{"x1", "x2"});
    const std::vector<Eigen::Index> idx = population_indices(frame, a.X);
    for (std::size_t k = 0; k < idx.size(); k += 97)
      CHECK(a.y[static_cast<Eigen::Index>(k)] == frame.y_quadratic[idx[k]]);
  }

  SUBCASE("repeatable") {
    const NonProbSample a1 = select_nonprob(frame, ParticipationDesign::Quadratic,
                                            OutcomeDesign::Linear,
                                            OutcomeKind::Binary, 34);
    const NonProbSample a2 = select_nonprob(frame, ParticipationDesign::Quadratic,
                                            OutcomeDesign::Linear,
                                            OutcomeKind::Binary, 34);
    CHECK((a1.X.array() == a2.X.array()).all());
    CHECK((a1.y.array() == a2.y.array()).all());
    for (Eigen::Index i = 0; i < a1.size(); ++i)
      CHECK((a1.y[i] == 0.0 || a1.y[i] == 1.0));
  }
}

TEST_CASE("constraint diagnostics") {
  SUBCASE("hand-computed gaps") {
    NonProbSample a;
    a.X = Eigen::MatrixXd(2, 1);
    a.X << 1.0, 2.0;
    a.y = Eigen::VectorXd::Zero(2);
    a.columns = {"x1"};
    ProbSample b;
    b.X = Eigen::MatrixXd(3, 1);
    b.X << 1.0, 2.0, 3.0;
    b.d = Eigen::VectorXd::Ones(3);
    b.columns = {"x1"};
    Eigen::VectorXd w(2);
    w << 2.0, 3.0;

    const NuMetrics nu = constraint_quality(w, a, b, {0}, {0.5});
    CHECK(nu.nu_n == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(nu.nu_tau == doctest::Approx(2.0).epsilon(1e-15));
    // B-side median 3/2 brackets to [1, 2] with theta 1/2, so the calibrated
    // mass is (2 + 3/2) / 3 = 7/6 against the level 1/2.
    CHECK(nu.nu_q == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

    const NuMetrics no_levels = constraint_quality(w, a, b, {0}, {});
    CHECK(std::isnan(no_levels.nu_q));
    CHECK(no_levels.nu_n == doctest::Approx(2.0));

    CHECK_THROWS_AS(constraint_quality(Eigen::VectorXd::Ones(3), a, b, {0}, {}),
                    std::invalid_argument);
    CHECK_THROWS_AS(constraint_quality(w, a, b, {4}, {}), std::invalid_argument);
  }

  SUBCASE("quartile-balanced GEE closes the gaps, plain likelihood does not") {
    auto inst = qbipw::testing::random_instance(91, 80, 120, 2);
    BalanceSpec spec;
    spec.total_columns = {0, 1};
    spec.quantile_columns = {{0, {0.25, 0.5, 0.75}}, {1, {0.25, 0.5, 0.75}}};
    const EstimateResult gee = qbipw_mean(inst.a, inst.b, spec, PropensityMethod::Gee);
    REQUIRE(gee.fit->converged);
    const double n = inst.b.d.sum();
    const NuMetrics nu =
        constraint_quality(*gee.fit, inst.a, inst.b, {0, 1}, {0.25, 0.5, 0.75});
    CHECK(nu.nu_n < 1e-6 * n);
    CHECK(nu.nu_tau < 1e-4);
    CHECK(nu.nu_q < 1e-4);

    const EstimateResult mle = qbipw_mean(inst.a, inst.b, spec, PropensityMethod::Mle);
    REQUIRE(mle.fit->converged);
    const NuMetrics nu_mle =
        constraint_quality(*mle.fit, inst.a, inst.b, {0, 1}, {0.25, 0.5, 0.75});
    CHECK(nu_mle.nu_n > nu.nu_n);
    CHECK(std::isfinite(nu_mle.nu_q));
  }
}

TEST_CASE("replicate summaries") {
  SUBCASE("bias, spread and the rmse identity") {
    std::vector<ReplicateEstimate> cells(4);
    for (int i = 0; i < 3; ++i) {
      cells[static_cast<std::size_t>(i)].point = 9.0 + i;
      cells[static_cast<std::size_t>(i)].usable = true;
    }
    // cells[3] stays unusable.
    const MetricRow row = summarize_estimates("x", 10.0, cells);
    CHECK(row.used == 3);
    CHECK(row.excluded == 1);
    CHECK(row.bias_x100 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(row.se_x100 == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(row.rmse_x100 == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(row.rmse_x100 * row.rmse_x100 ==
          doctest::Approx(row.bias_x100 * row.bias_x100 + row.se_x100 * row.se_x100)
              .epsilon(1e-10));
  }

  SUBCASE("coverage and length count usable replicates with intervals") {
    std::vector<ReplicateEstimate> cells(3);
    for (auto& c : cells) {
      c.point = 10.0;
      c.usable = true;
    }
    cells[0].has_ci = true;
    cells[0].ci_lower = 8.0;
    cells[0].ci_upper = 12.0;
    cells[1].has_ci = true;
    cells[1].ci_lower = 11.0;
    cells[1].ci_upper = 12.0;
    const MetricRow row = summarize_estimates("x", 10.0, cells);
    CHECK(row.ci_count == 2);
    CHECK(row.coverage_pct == doctest::Approx(50.0).epsilon(1e-12));
    CHECK(row.ci_length_x100 == doctest::Approx(250.0).epsilon(1e-12));
  }

  SUBCASE("constraint diagnostics aggregate over finite entries per field") {
    std::vector<ReplicateEstimate> cells(3);
    cells[0].has_nu = true;
    cells[0].nu.nu_n = 1.0;
    cells[0].nu.nu_q = std::numeric_limits<double>::quiet_NaN();
    cells[1].has_nu = true;
    cells[1].nu.nu_n = 3.0;
    cells[1].nu.nu_q = 5.0;
    const MetricRow row = summarize_estimates("x", 0.0, cells);
    CHECK(row.nu_count == 2);
    CHECK(row.nu_n_mean == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(row.nu_n_median == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(row.nu_q_mean == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(row.nu_q_median == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(std::isnan(row.nu_tau_mean));
  }

  SUBCASE("no usable replicates leaves the row empty") {
    std::vector<ReplicateEstimate> cells(2);
    const MetricRow row = summarize_estimates("x", 0.0, cells);
    CHECK(row.used == 0);
    CHECK(row.excluded == 2);
    CHECK(std::isnan(row.bias_x100));
    CHECK(std::isnan(row.coverage_pct));
  }
}

TEST_CASE("scenario runs") {
  ScenarioConfig config;
  config.scenario = 1;
  config.population_size = 3000;
  config.sample_size = 150;
  config.replicates = 6;
  config.seed = 424242;
  config.estimators = {"naive", "ipw-gee", "qbipw1-gee", "mi-nn"};

  const ScenarioResult result = run_scenario(config);

  SUBCASE("structure and the fixed-population truth") {
    CHECK(result.ids == config.estimators);
    REQUIRE(result.rows.size() == 4);
    REQUIRE(result.cells.size() == 4);
    for (const auto& per_id : result.cells) CHECK(per_id.size() == 6);
    const PopulationFrame pop =
        generate_population(config.population_size, Rng::derive(config.seed, 0));
    CHECK(result.truth ==
          outcome_column(pop, OutcomeDesign::Linear, OutcomeKind::Continuous).mean());
  }

  SUBCASE("repeatable, and independent of the worker count") {
    const ScenarioResult again = run_scenario(config);
    ScenarioConfig threaded = config;
    threaded.threads = 4;
    const ScenarioResult wide = run_scenario(threaded);
    for (std::size_t e = 0; e < result.cells.size(); ++e) {
      for (std::size_t r = 0; r < result.cells[e].size(); ++r) {
        const auto& c0 = result.cells[e][r];
        const auto& c1 = again.cells[e][r];
        const auto& c4 = wide.cells[e][r];
        // Bitwise equality, NaN compared through bit patterns.
        CHECK(std::memcmp(&c0.point, &c1.point, sizeof(double)) == 0);
        CHECK(std::memcmp(&c0.point, &c4.point, sizeof(double)) == 0);
        CHECK(c0.usable == c4.usable);
        CHECK(std::memcmp(&c0.ci_lower, &c4.ci_lower, sizeof(double)) == 0);
      }
    }
  }

  SUBCASE("replicate streams do not depend on the replicate count") {
    ScenarioConfig shorter = config;
    shorter.replicates = 3;
    const ScenarioResult prefix = run_scenario(shorter);
    for (std::size_t e = 0; e < prefix.cells.size(); ++e)
      for (std::size_t r = 0; r < 3; ++r) {
        const double full = result.cells[e][r].point;
        const double cut = prefix.cells[e][r].point;
        CHECK(std::memcmp(&full, &cut, sizeof(double)) == 0);
      }
  }

  SUBCASE("weighted rows carry intervals and diagnostics, naive only quantile gaps") {
    const MetricRow& naive = result.rows[0];
    const MetricRow& qb = result.rows[2];
    CHECK(naive.used == 6);
    CHECK(naive.ci_count == 0);
    CHECK(naive.nu_count == 6);
    CHECK(std::isnan(naive.nu_n_mean));
    CHECK(std::isnan(naive.nu_tau_mean));
    CHECK(std::isfinite(naive.nu_q_mean));
    if (qb.used > 0) {
      CHECK(qb.ci_count == qb.used);
      CHECK(qb.nu_count > 0);
      CHECK(std::isfinite(qb.nu_n_mean));
      CHECK(qb.nu_n_mean < 1e-3);
    }
    const MetricRow& nn = result.rows[3];
    CHECK(nn.used == 6);
    CHECK(nn.ci_count == 0);
    CHECK(nn.nu_count == 0);
  }

  SUBCASE("csv emitters are deterministic and parse back") {
    const auto p1 = temp_csv("qbipw_sim_metrics_1.csv");
    const auto p2 = temp_csv("qbipw_sim_metrics_2.csv");
    const auto pr = temp_csv("qbipw_sim_replicates.csv");
    const auto pq = temp_csv("qbipw_sim_quality.csv");
    const auto pc = temp_csv("qbipw_sim_coverage.csv");
    write_metrics_csv(result, p1.string());
    write_metrics_csv(run_scenario(config), p2.string());
    CHECK(slurp(p1) == slurp(p2));
    CHECK(slurp(p1).rfind("# qbipw ", 0) == 0);

    write_replicates_csv(result, pr.string());
    write_quality_csv(result, pq.string());
    write_coverage_csv(result, pc.string());

    const CsvTable metrics = CsvTable::read_file(p1.string());
    REQUIRE(metrics.columns.size() == 6);
    CHECK(metrics.column_index("estimator") == 0);
    CHECK(metrics.column_index("rmse_x100") == 5);
    REQUIRE(metrics.rows.size() == 4);
    CHECK(metrics.rows[0][0] == "naive");

    const CsvTable reps = CsvTable::read_file(pr.string());
    CHECK(reps.rows.size() == 4 * 6);
    const CsvTable quality = CsvTable::read_file(pq.string());
    REQUIRE(quality.rows.size() == 4);
    // The naive row stores its blanked diagnostics as nan literals.
    REQUIRE(parse_number(quality.rows[0][2]).has_value());
    CHECK(std::isnan(*parse_number(quality.rows[0][2])));
    REQUIRE(parse_number(quality.rows[0][4]).has_value());
    CHECK(std::isfinite(*parse_number(quality.rows[0][4])));

    for (const auto& p : {p1, p2, pr, pq, pc}) std::filesystem::remove(p);
  }
}

TEST_CASE("naive estimates drift upward when participation follows the outcome") {
  ScenarioConfig config;
  config.scenario = 1;
  config.population_size = 4000;
  config.sample_size = 200;
  config.replicates = 6;
  config.seed = 515151;
  config.estimators = {"naive"};
  const ScenarioResult result = run_scenario(config);
  CHECK(result.rows[0].bias_x100 > 5.0);
  CHECK(result.rows[0].bias_x100 < 40.0);
}
