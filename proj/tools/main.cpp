#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qbipw/csv.hpp"
#include "qbipw/errors.hpp"
#include "qbipw/estimators.hpp"
#include "qbipw/propensity.hpp"
#include "qbipw/quantile_calibration.hpp"
#include "qbipw/simulation.hpp"
#include "qbipw/types.hpp"
#include "qbipw/variance.hpp"
#include "qbipw/version.hpp"

namespace {

using nlohmann::json;

// Anything wrong with the invocation or the input files. Mapped to exit 1;
// estimation failures (identifiability_error, estimation_error) map to 2.
struct input_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(std::string s) {
  const auto keep = [](unsigned char c) { return std::isspace(c) == 0; };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), keep));
  s.erase(std::find_if(s.rbegin(), s.rend(), keep).base(), s.end());
  return s;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  for (auto& tok : split(text, ',')) {
    const std::string t = trim(tok);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

double need_number(const std::string& text, const std::string& what) {
  const auto v = qbipw::parse_number(trim(text));
  if (!v) throw input_error(what + ": not a number: '" + trim(text) + "'");
  return *v;
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// CSV input

qbipw::CsvTable load_table(const std::string& path) {
  try {
    return qbipw::CsvTable::read_file(path);
  } catch (const std::exception& e) {
    throw input_error(e.what());
  }
}

int need_column(const qbipw::CsvTable& t, const std::string& path, const std::string& name) {
  const int idx = t.column_index(name);
  if (idx < 0) throw input_error("column not found in " + path + ": " + name);
  return idx;
}

Eigen::VectorXd numeric_column(const qbipw::CsvTable& t, const std::string& path,
                               const std::string& name) {
  const int idx = need_column(t, path, name);
  Eigen::VectorXd out(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto v = qbipw::parse_number(t.rows[r][static_cast<std::size_t>(idx)]);
    if (!v)
      throw input_error(path + ": column " + name + ", row " + std::to_string(r + 1) +
                        ": not a number: '" + t.rows[r][static_cast<std::size_t>(idx)] + "'");
    out[static_cast<Eigen::Index>(r)] = *v;
  }
  return out;
}

// One-hot expansion of factor columns; levels are pooled over all listed
// tables, sorted, and the first level is dropped as the reference.
std::map<std::string, std::vector<std::string>> factor_levels(
    const std::vector<std::pair<const qbipw::CsvTable*, std::string>>& tables,
    const std::vector<std::string>& factors) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& name : factors) {
    std::set<std::string> values;
    for (const auto& [table, path] : tables) {
      const int idx = need_column(*table, path, name);
      for (const auto& row : table->rows) values.insert(row[static_cast<std::size_t>(idx)]);
    }
    if (values.size() < 2)
      throw input_error("factor column " + name + " has fewer than two levels");
    std::vector<std::string> levels(values.begin(), values.end());
    levels.erase(levels.begin());
    out[name] = std::move(levels);
  }
  return out;
}

struct DesignColumns {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
};

DesignColumns expand_columns(const qbipw::CsvTable& t, const std::string& path,
                             const std::vector<std::string>& x_names,
                             const std::map<std::string, std::vector<std::string>>& factors) {
  std::vector<Eigen::VectorXd> cols;
  std::vector<std::string> names;
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  for (const auto& name : x_names) {
    const auto f = factors.find(name);
    if (f == factors.end()) {
      cols.push_back(numeric_column(t, path, name));
      names.push_back(name);
      continue;
    }
    const int idx = need_column(t, path, name);
    for (const auto& level : f->second) {
      Eigen::VectorXd ind(n);
      for (Eigen::Index r = 0; r < n; ++r)
        ind[r] = t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(idx)] == level
                     ? 1.0
                     : 0.0;
      cols.push_back(std::move(ind));
      names.push_back(name + "=" + level);
    }
  }
  DesignColumns out;
  out.X.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    out.X.col(static_cast<Eigen::Index>(j)) = cols[j];
  out.names = std::move(names);
  return out;
}

// ---------------------------------------------------------------------------
// Option value parsing

// "col:0.25,0.5,0.75" entries; several columns per occurrence with ';'.
std::map<std::string, std::vector<double>> parse_quantile_specs(
    const std::vector<std::string>& specs) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& one : specs) {
    for (const auto& part : split(one, ';')) {
      if (trim(part).empty()) continue;
      const auto colon = part.find(':');
      if (colon == std::string::npos)
        throw input_error("bad --quantiles entry (want col:level,level,...): '" + trim(part) + "'");
      const std::string col = trim(part.substr(0, colon));
      if (col.empty()) throw input_error("bad --quantiles entry: empty column name");
      auto& levels = out[col];
      for (const auto& tok : split(part.substr(colon + 1), ',')) {
        const double a = need_number(tok, "--quantiles level");
        if (!(a > 0.0 && a < 1.0))
          throw input_error("quantile level must lie in (0,1): " + trim(tok));
        levels.push_back(a);
      }
    }
  }
  for (auto& [col, levels] : out) {
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    if (levels.empty()) throw input_error("no quantile levels given for column " + col);
  }
  return out;
}

// "x1:123.4,x2:56.7" entries.
std::vector<std::pair<std::string, double>> parse_totals(const std::vector<std::string>& specs) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& one : specs) {
    for (const auto& part : split(one, ',')) {
      if (trim(part).empty()) continue;
      const auto colon = part.find(':');
      if (colon == std::string::npos)
        throw input_error("bad --totals entry (want col:value): '" + trim(part) + "'");
      const std::string col = trim(part.substr(0, colon));
      if (col.empty()) throw input_error("bad --totals entry: empty column name");
      out.emplace_back(col, need_number(part.substr(colon + 1), "--totals value"));
    }
  }
  return out;
}

struct QuantileTarget {
  std::string column;
  double level = 0.0;
  double value = 0.0;
};

// "x1:0.25=1.6,0.5=2.0" per column; several columns per occurrence with ';'.
std::vector<QuantileTarget> parse_quantile_targets(const std::vector<std::string>& specs) {
  std::vector<QuantileTarget> out;
  for (const auto& one : specs) {
    for (const auto& group : split(one, ';')) {
      if (trim(group).empty()) continue;
      const auto colon = group.find(':');
      if (colon == std::string::npos)
        throw input_error("bad --quantile-targets entry (want col:level=value,...): '" +
                          trim(group) + "'");
      const std::string col = trim(group.substr(0, colon));
      if (col.empty()) throw input_error("bad --quantile-targets entry: empty column name");
      for (const auto& pair : split(group.substr(colon + 1), ',')) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos)
          throw input_error("bad quantile target (want level=value): '" + trim(pair) + "'");
        QuantileTarget qt;
        qt.column = col;
        qt.level = need_number(pair.substr(0, eq), "quantile target level");
        qt.value = need_number(pair.substr(eq + 1), "quantile target value");
        if (!(qt.level > 0.0 && qt.level < 1.0))
          throw input_error("quantile level must lie in (0,1): " + fmt_g(qt.level));
        out.push_back(qt);
      }
    }
  }
  return out;
}

int parse_scenario(const std::string& s) {
  static const std::map<std::string, int> table = {{"I", 1},  {"II", 2},  {"III", 3},
                                                   {"IV", 4}, {"1", 1},   {"2", 2},
                                                   {"3", 3},  {"4", 4}};
  const auto it = table.find(s);
  if (it == table.end())
    throw input_error("unknown scenario: " + s + " (want I, II, III or IV)");
  return it->second;
}

qbipw::OutcomeKind parse_outcome(const std::string& s) {
  if (s == "continuous") return qbipw::OutcomeKind::Continuous;
  if (s == "binary") return qbipw::OutcomeKind::Binary;
  throw input_error("unknown --outcome: " + s + " (want continuous or binary)");
}

int resolve_threads(int from_cli) {
  if (from_cli > 0) return from_cli;
  if (const char* env = std::getenv("QBIPW_THREADS")) {
    const auto v = qbipw::parse_number(env);
    if (v && *v >= 1.0) return static_cast<int>(*v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Accepts a full estimator id or a family name combined with --method.
std::string resolve_estimator_id(const std::string& estimator, const std::string& method,
                                 bool method_given) {
  if (method != "mle" && method != "gee")
    throw input_error("unknown --method: " + method + " (want mle or gee)");
  if (estimator == "naive" || estimator == "mi-glm" || estimator == "mi-nn") return estimator;
  const auto& ids = qbipw::estimator_ids();
  if (std::find(ids.begin(), ids.end(), estimator) != ids.end()) {
    if (method_given && !estimator.ends_with("-" + method))
      throw input_error("--method " + method + " contradicts estimator id " + estimator);
    return estimator;
  }
  if (estimator == "ipw" || estimator == "qbipw1" || estimator == "qbipw2" || estimator == "dr")
    return estimator + "-" + method;
  throw input_error("unknown estimator: " + estimator);
}

std::optional<std::string> method_of(const std::string& id) {
  if (id.ends_with("-mle")) return "mle";
  if (id.ends_with("-gee")) return "gee";
  return std::nullopt;
}

std::vector<double> union_levels(const qbipw::BalanceSpec& balance) {
  std::vector<double> out;
  for (const auto& q : balance.quantile_columns)
    out.insert(out.end(), q.levels.begin(), q.levels.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// The dispatcher fills default levels into empty quantile requests and drops
// quantile columns for plain ipw and dr; this mirrors that so the design used
// for variance and diagnostics matches the fitted one.
qbipw::BalanceSpec effective_balance(const std::string& id, qbipw::BalanceSpec balance) {
  if (id.starts_with("ipw") || id.starts_with("dr")) {
    balance.quantile_columns.clear();
    return balance;
  }
  std::vector<double> fill;
  if (id.starts_with("qbipw1")) fill = {0.25, 0.5, 0.75};
  if (id.starts_with("qbipw2")) fill = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  if (!fill.empty())
    for (auto& q : balance.quantile_columns)
      if (q.levels.empty()) q.levels = fill;
  return balance;
}

// ---------------------------------------------------------------------------
// Config file merge: command line beats file, file beats defaults.

struct ConfigBinding {
  CLI::Option* option = nullptr;
  std::string key;
  std::function<void(const json&)> apply;
};

void merge_config(const std::string& path, const std::vector<ConfigBinding>& bindings) {
  std::ifstream in(path);
  if (!in) throw input_error("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw input_error("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw input_error("config file must hold a JSON object: " + path);
  std::set<std::string> known;
  for (const auto& b : bindings) known.insert(b.key);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (known.count(it.key()) == 0)
      throw input_error("unknown config key in " + path + ": " + it.key());
  for (const auto& b : bindings) {
    if (b.option->count() > 0 || !j.contains(b.key)) continue;
    try {
      b.apply(j.at(b.key));
    } catch (const json::exception& e) {
      throw input_error("config key " + b.key + ": " + e.what());
    }
  }
}

json string_or_list(const json& v, std::vector<std::string>& target) {
  if (v.is_string()) {
    target.push_back(v.get<std::string>());
  } else if (v.is_array()) {
    for (const auto& e : v) target.push_back(e.get<std::string>());
  } else {
    throw input_error("expected a string or a list of strings");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Sample pair assembly shared by estimate and diagnose

struct PairArgs {
  std::string nonprob, prob, y, x, weight, strata, factor;
  std::vector<std::string> quantiles;
  double pop_size = 0.0;
};

struct PairInputs {
  qbipw::NonProbSample a;
  qbipw::ProbSample b;
  qbipw::BalanceSpec balance;
  std::vector<std::string> x_names;  // as requested
  std::vector<std::string> names;    // assembled design columns
};

PairInputs load_pair(const PairArgs& args) {
  if (args.nonprob.empty()) throw input_error("--nonprob is required");
  if (args.prob.empty()) throw input_error("--prob is required");
  if (args.y.empty()) throw input_error("--y is required");
  if (args.x.empty()) throw input_error("--x is required");
  if (args.weight.empty()) throw input_error("weight column required for probability sample");

  const qbipw::CsvTable ta = load_table(args.nonprob);
  const qbipw::CsvTable tb = load_table(args.prob);
  if (ta.rows.empty()) throw input_error("non-probability sample is empty: " + args.nonprob);
  if (tb.rows.empty()) throw input_error("probability sample is empty: " + args.prob);

  PairInputs out;
  out.x_names = split_list(args.x);
  if (out.x_names.empty()) throw input_error("--x needs at least one column");

  const std::vector<std::string> factors = split_list(args.factor);
  for (const auto& f : factors)
    if (std::find(out.x_names.begin(), out.x_names.end(), f) == out.x_names.end())
      throw input_error("--factor column must also appear in --x: " + f);
  const auto levels_map =
      factor_levels({{&ta, args.nonprob}, {&tb, args.prob}}, factors);

  const auto qspecs = parse_quantile_specs(args.quantiles);
  for (const auto& [col, levels] : qspecs) {
    (void)levels;
    if (levels_map.count(col) > 0)
      throw input_error("quantile constraints need a numeric column, got factor: " + col);
  }

  DesignColumns xa = expand_columns(ta, args.nonprob, out.x_names, levels_map);
  DesignColumns xb = expand_columns(tb, args.prob, out.x_names, levels_map);
  out.names = xa.names;

  std::vector<int> total_columns(out.names.size());
  for (std::size_t j = 0; j < out.names.size(); ++j) total_columns[j] = static_cast<int>(j);

  // Quantile-only columns ride along at the end of X but carry no total.
  std::vector<Eigen::VectorXd> extra_a, extra_b;
  for (const auto& [col, levels] : qspecs) {
    (void)levels;
    if (std::find(out.names.begin(), out.names.end(), col) == out.names.end()) {
      extra_a.push_back(numeric_column(ta, args.nonprob, col));
      extra_b.push_back(numeric_column(tb, args.prob, col));
      out.names.push_back(col);
    }
  }

  const auto na = static_cast<Eigen::Index>(ta.rows.size());
  const auto nb = static_cast<Eigen::Index>(tb.rows.size());
  out.a.X.resize(na, static_cast<Eigen::Index>(out.names.size()));
  out.b.X.resize(nb, static_cast<Eigen::Index>(out.names.size()));
  out.a.X.leftCols(xa.X.cols()) = xa.X;
  out.b.X.leftCols(xb.X.cols()) = xb.X;
  for (std::size_t j = 0; j < extra_a.size(); ++j) {
    out.a.X.col(xa.X.cols() + static_cast<Eigen::Index>(j)) = extra_a[j];
    out.b.X.col(xb.X.cols() + static_cast<Eigen::Index>(j)) = extra_b[j];
  }
  out.a.columns = out.names;
  out.b.columns = out.names;
  out.a.y = numeric_column(ta, args.nonprob, args.y);
  out.b.d = numeric_column(tb, args.prob, args.weight);
  if ((out.b.d.array() <= 0.0).any())
    throw input_error("design weights must be positive: column " + args.weight);

  if (!args.strata.empty()) {
    const Eigen::VectorXd raw = numeric_column(tb, args.prob, args.strata);
    Eigen::VectorXi strata(nb);
    for (Eigen::Index i = 0; i < nb; ++i) {
      if (raw[i] != std::floor(raw[i]))
        throw input_error("stratum labels must be integers: column " + args.strata);
      strata[i] = static_cast<int>(raw[i]);
    }
    out.b.strata = strata;
  }

  out.balance.total_columns = total_columns;
  if (args.pop_size > 0.0) out.balance.population_size = args.pop_size;
  for (const auto& [col, levels] : qspecs) {
    qbipw::QuantileRequest q;
    q.column = static_cast<int>(
        std::find(out.names.begin(), out.names.end(), col) - out.names.begin());
    q.levels = levels;
    out.balance.quantile_columns.push_back(q);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Calibration constraint system shared by calibrate and diagnose --weights

struct ConstraintSystem {
  Eigen::MatrixXd Z;
  Eigen::VectorXd targets;
  std::vector<std::string> labels;
  double population_size = 0.0;
};

ConstraintSystem build_constraint_system(const qbipw::CsvTable& t, const std::string& path,
                                         const Eigen::VectorXd& d,
                                         const std::vector<std::string>& totals_specs,
                                         const std::vector<std::string>& qtarget_specs,
                                         double pop_size_flag) {
  const auto totals = parse_totals(totals_specs);
  const auto qtargets = parse_quantile_targets(qtarget_specs);
  if (totals.empty() && qtargets.empty())
    throw input_error("nothing to calibrate: give --totals and/or --quantile-targets");

  ConstraintSystem sys;
  sys.population_size = pop_size_flag > 0.0 ? pop_size_flag : d.sum();
  const auto n = static_cast<Eigen::Index>(t.rows.size());

  std::vector<Eigen::VectorXd> cols;
  std::vector<double> targets;

  // Quantile targets bring the population-size row with them; an explicit
  // --pop-size adds it even without quantile targets.
  if (!qtargets.empty()) {
    std::vector<std::string> qcols;
    for (const auto& qt : qtargets)
      if (std::find(qcols.begin(), qcols.end(), qt.column) == qcols.end())
        qcols.push_back(qt.column);
    Eigen::MatrixXd xq(n, static_cast<Eigen::Index>(qcols.size()));
    for (std::size_t j = 0; j < qcols.size(); ++j)
      xq.col(static_cast<Eigen::Index>(j)) = numeric_column(t, path, qcols[j]);

    std::vector<qbipw::QuantileConstraint> constraints;
    for (const auto& qt : qtargets) {
      qbipw::QuantileConstraint c;
      c.column = static_cast<int>(std::find(qcols.begin(), qcols.end(), qt.column) -
                                  qcols.begin());
      c.alpha = qt.level;
      const Eigen::VectorXd values = xq.col(c.column);
      c.brk = qbipw::bracket_at(values, qt.value);
      constraints.push_back(c);
    }
    const Eigen::MatrixXd am = qbipw::build_a_matrix(xq, constraints, sys.population_size);
    const Eigen::VectorXd at = qbipw::a_targets(constraints, sys.population_size);
    for (Eigen::Index j = 0; j < am.cols(); ++j) {
      cols.push_back(am.col(j));
      targets.push_back(at[j]);
    }
    sys.labels.push_back("(N)");
    for (const auto& qt : qtargets) sys.labels.push_back(qt.column + "@q" + fmt_g(qt.level));
  } else if (pop_size_flag > 0.0) {
    cols.push_back(Eigen::VectorXd::Ones(n));
    targets.push_back(sys.population_size);
    sys.labels.push_back("(N)");
  }

  for (const auto& [name, value] : totals) {
    cols.push_back(numeric_column(t, path, name));
    targets.push_back(value);
    sys.labels.push_back(name);
  }

  sys.Z.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    sys.Z.col(static_cast<Eigen::Index>(j)) = cols[j];
  sys.targets = Eigen::Map<const Eigen::VectorXd>(targets.data(),
                                                  static_cast<Eigen::Index>(targets.size()));
  return sys;
}

void print_achieved(std::FILE* out, const ConstraintSystem& sys, const Eigen::VectorXd& w) {
  std::fprintf(out, "constraint,target,achieved,gap\n");
  for (Eigen::Index j = 0; j < sys.Z.cols(); ++j) {
    const double achieved = sys.Z.col(j).dot(w);
    std::fprintf(out, "%s,%.17g,%.17g,%.17g\n", sys.labels[static_cast<std::size_t>(j)].c_str(),
                 sys.targets[j], achieved, achieved - sys.targets[j]);
  }
}

// ---------------------------------------------------------------------------
// estimate

struct EstimateArgs {
  PairArgs pair;
  std::string estimator = "qbipw1";
  std::string method = "gee";
  bool method_given = false;
  std::string variance;  // empty: analytic when the estimator carries a fit
  int boot_reps = 500;
  std::uint64_t seed = 1;
  std::string outcome = "continuous";
  int knn = 5;
  int threads = 0;
  std::string out;
};

int run_estimate(const EstimateArgs& args) {
  const PairInputs in = load_pair(args.pair);
  const std::string id = resolve_estimator_id(args.estimator, args.method, args.method_given);
  const bool fit_based = id.starts_with("ipw") || id.starts_with("qbipw") || id.starts_with("dr");
  const bool analytic_ok = id.starts_with("ipw") || id.starts_with("qbipw");

  qbipw::BalanceSpec balance = in.balance;
  // qbipw without --quantiles: every non-factor covariate gets the default
  // levels of the estimator family.
  if (id.starts_with("qbipw") && balance.quantile_columns.empty()) {
    for (int j : balance.total_columns)
      if (in.names[static_cast<std::size_t>(j)].find('=') == std::string::npos)
        balance.quantile_columns.push_back({j, {}});
    if (balance.quantile_columns.empty())
      throw input_error("qbipw needs at least one numeric covariate for quantile constraints");
  }

  std::string variance = args.variance;
  if (variance.empty()) variance = analytic_ok ? "analytic" : "none";
  if (variance != "analytic" && variance != "bootstrap" && variance != "none")
    throw input_error("unknown --variance: " + variance + " (want analytic, bootstrap or none)");
  if (variance == "analytic" && !analytic_ok)
    throw input_error("analytic variance is only available for ipw and qbipw estimators; "
                      "use --variance bootstrap");

  qbipw::EstimatorSpec spec;
  spec.id = id;
  spec.balance = balance;
  spec.outcome = parse_outcome(args.outcome);
  spec.nn_neighbors = args.knn;

  const qbipw::EstimateResult result = qbipw::run_point_estimator(spec, in.a, in.b);
  const qbipw::BalanceSpec effective = effective_balance(id, balance);

  std::optional<double> se;
  std::optional<std::pair<double, double>> ci;
  std::vector<std::string> notes = result.notes;
  json boot_info;

  if (variance == "analytic" && result.fit) {
    if (result.fit->converged) {
      const qbipw::Design design = qbipw::build_design(in.a, in.b, effective);
      const double var = qbipw::sandwich_variance(result.point, *result.fit, in.a, in.b, design);
      se = std::sqrt(std::max(var, 0.0));
      ci = qbipw::normal_ci(result.point, *se);
    } else {
      notes.push_back("analytic variance skipped: fit did not converge");
    }
  } else if (variance == "bootstrap") {
    qbipw::BootstrapOptions bo;
    bo.replicates = args.boot_reps;
    bo.seed = args.seed;
    bo.threads = resolve_threads(args.threads);
    const auto one = [&spec](const qbipw::NonProbSample& ra, const qbipw::ProbSample& rb) {
      const qbipw::EstimateResult r = qbipw::run_point_estimator(spec, ra, rb);
      if (r.fit && !r.fit->converged)
        throw qbipw::estimation_error("replicate fit did not converge: " + r.fit->message);
      return r.point;
    };
    const qbipw::BootstrapResult br = qbipw::bootstrap_variance(one, in.a, in.b, bo);
    se = br.se;
    ci = std::make_pair(br.ci_lower, br.ci_upper);
    boot_info["replicates"] = br.replicates;
    boot_info["failures"] = br.failures;
  }

  json out;
  out["version"] = qbipw::version;
  out["command"] = "estimate";
  json cfg;
  cfg["nonprob"] = args.pair.nonprob;
  cfg["prob"] = args.pair.prob;
  cfg["y"] = args.pair.y;
  cfg["x"] = in.x_names;
  cfg["columns"] = in.names;
  cfg["weight"] = args.pair.weight;
  cfg["estimator"] = id;
  if (const auto m = method_of(id)) cfg["method"] = *m;
  cfg["variance"] = variance;
  cfg["outcome"] = args.outcome;
  cfg["seed"] = args.seed;
  if (variance == "bootstrap") cfg["boot_reps"] = args.boot_reps;
  if (balance.population_size) cfg["pop_size"] = *balance.population_size;
  json quantiles = json::object();
  for (const auto& q : effective.quantile_columns)
    quantiles[in.names[static_cast<std::size_t>(q.column)]] = q.levels;
  cfg["quantiles"] = quantiles;
  out["config"] = cfg;
  out["estimator_id"] = id;
  out["point"] = result.point;
  if (se) out["se"] = *se;
  if (ci) out["ci"] = {{"lower", ci->first}, {"upper", ci->second}, {"level", 0.95}};
  if (!boot_info.is_null()) out["bootstrap"] = boot_info;

  if (result.fit) {
    const auto& fit = *result.fit;
    json conv;
    conv["converged"] = fit.converged;
    conv["iterations"] = fit.iterations;
    conv["residual_norm"] = fit.residual_norm;
    conv["message"] = fit.message;
    conv["constraint_residuals"] = std::vector<double>(
        fit.constraint_residuals.data(),
        fit.constraint_residuals.data() + fit.constraint_residuals.size());
    out["convergence"] = conv;
    const qbipw::NuMetrics nu = qbipw::constraint_quality(
        fit, in.a, in.b, effective.total_columns, union_levels(effective));
    out["nu"] = {{"nu_n", nu.nu_n}, {"nu_q", nu.nu_q}, {"nu_tau", nu.nu_tau}};
  }
  if (!notes.empty()) out["notes"] = notes;

  const std::string text = out.dump(2) + "\n";
  if (args.out.empty()) {
    std::cout << text;
  } else {
    std::ofstream f(args.out);
    if (!f) throw input_error("cannot write " + args.out);
    f << text;
  }
  const bool failed = fit_based && result.fit && !result.fit->converged;
  return failed ? 2 : 0;
}

// ---------------------------------------------------------------------------
// simulate

struct SimulateArgs {
  std::string scenario = "I";
  std::string outcome = "continuous";
  std::string scale = "desk";
  long long reps = 0;
  long long pop_size = 0;
  long long sample_size = 0;
  std::uint64_t seed = 20240501;
  int threads = 0;
  std::string estimators;
  std::string out_dir = ".";
  bool no_analytic_ci = false;
  int knn = 5;
};

int run_simulate(const SimulateArgs& args) {
  qbipw::ScenarioConfig cfg;
  cfg.scenario = parse_scenario(args.scenario);
  cfg.outcome = parse_outcome(args.outcome);
  if (args.scale == "desk") {
    cfg.population_size = 20000;
    cfg.sample_size = 500;
    cfg.replicates = 100;
  } else if (args.scale == "paper") {
    cfg.population_size = 100000;
    cfg.sample_size = 1000;
    cfg.replicates = 500;
  } else {
    throw input_error("unknown --scale: " + args.scale + " (want desk or paper)");
  }
  if (args.pop_size > 0) cfg.population_size = args.pop_size;
  if (args.sample_size > 0) cfg.sample_size = args.sample_size;
  if (args.reps > 0) cfg.replicates = static_cast<int>(args.reps);
  cfg.seed = args.seed;
  cfg.threads = resolve_threads(args.threads);
  cfg.analytic_ci = !args.no_analytic_ci;
  cfg.nn_neighbors = args.knn;
  if (!args.estimators.empty()) {
    const auto& known = qbipw::estimator_ids();
    for (const auto& id : split_list(args.estimators)) {
      if (std::find(known.begin(), known.end(), id) == known.end())
        throw input_error("unknown estimator id: " + id);
      cfg.estimators.push_back(id);
    }
  }

  const qbipw::ScenarioResult result = qbipw::run_scenario(cfg);

  std::error_code ec;
  std::filesystem::create_directories(args.out_dir, ec);
  const std::string prefix = args.out_dir + "/qbipw_scenario_" +
                             qbipw::scenario_label(cfg.scenario) + "_" + args.outcome + "_";
  qbipw::write_metrics_csv(result, prefix + "metrics.csv");
  qbipw::write_coverage_csv(result, prefix + "coverage.csv");
  qbipw::write_quality_csv(result, prefix + "quality.csv");
  qbipw::write_replicates_csv(result, prefix + "replicates.csv");

  std::printf("# qbipw %s\n", qbipw::version);
  std::printf("# scenario=%s outcome=%s population=%lld sample=%lld replicates=%d seed=%llu\n",
              qbipw::scenario_label(cfg.scenario), args.outcome.c_str(),
              static_cast<long long>(cfg.population_size),
              static_cast<long long>(cfg.sample_size), cfg.replicates,
              static_cast<unsigned long long>(cfg.seed));
  std::printf("# truth=%.17g\n", result.truth);
  std::printf("%-12s %10s %10s %10s %10s %10s %6s %6s\n", "estimator", "bias_x100", "se_x100",
              "rmse_x100", "cover_pct", "len_x100", "used", "excl");
  const auto cell = [](double v) {
    char buf[24];
    if (std::isnan(v)) {
      std::snprintf(buf, sizeof buf, "%10s", "--");
    } else {
      std::snprintf(buf, sizeof buf, "%10.2f", v);
    }
    return std::string(buf);
  };
  for (const auto& row : result.rows) {
    std::printf("%-12s %s %s %s %s %s %6d %6d\n", row.id.c_str(), cell(row.bias_x100).c_str(),
                cell(row.se_x100).c_str(), cell(row.rmse_x100).c_str(),
                cell(row.coverage_pct).c_str(), cell(row.ci_length_x100).c_str(), row.used,
                row.excluded);
  }
  for (const char* leaf : {"metrics.csv", "coverage.csv", "quality.csv", "replicates.csv"})
    std::printf("wrote %s%s\n", prefix.c_str(), leaf);
  return 0;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::string sample;
  std::string weight;
  std::vector<std::string> totals;
  std::vector<std::string> quantile_targets;
  double pop_size = 0.0;
  std::string out = "calibrated_weights.csv";
};

int run_calibrate(const CalibrateArgs& args) {
  if (args.sample.empty()) throw input_error("--sample is required");
  if (args.weight.empty()) throw input_error("weight column required for probability sample");
  const qbipw::CsvTable t = load_table(args.sample);
  if (t.rows.empty()) throw input_error("sample is empty: " + args.sample);
  const Eigen::VectorXd d = numeric_column(t, args.sample, args.weight);
  if ((d.array() <= 0.0).any())
    throw input_error("design weights must be positive: column " + args.weight);

  const ConstraintSystem sys = build_constraint_system(t, args.sample, d, args.totals,
                                                       args.quantile_targets, args.pop_size);
  const Eigen::VectorXd w = qbipw::calibrate_to_constraints(d, sys.Z, sys.targets);

  std::printf("# qbipw %s\n", qbipw::version);
  std::printf("# calibrate sample=%s weight=%s pop_size=%.17g out=%s\n", args.sample.c_str(),
              args.weight.c_str(), sys.population_size, args.out.c_str());
  print_achieved(stdout, sys, w);

  std::FILE* f = std::fopen(args.out.c_str(), "w");
  if (!f) throw input_error("cannot write " + args.out);
  std::fprintf(f, "# qbipw %s\n", qbipw::version);
  std::fprintf(f, "# calibrate sample=%s weight=%s pop_size=%.17g\n", args.sample.c_str(),
               args.weight.c_str(), sys.population_size);
  std::fprintf(f, "row,d,w\n");
  for (Eigen::Index i = 0; i < w.size(); ++i)
    std::fprintf(f, "%lld,%.17g,%.17g\n", static_cast<long long>(i), d[i], w[i]);
  std::fclose(f);
  return 0;
}

// ---------------------------------------------------------------------------
// diagnose

struct DiagnoseArgs {
  PairArgs pair;
  std::string method = "gee";
  // weights mode
  std::string weights;
  std::string sample;
  std::string weight;
  std::vector<std::string> totals;
  std::vector<std::string> quantile_targets;
  double pop_size = 0.0;
};

void print_verdict(const char* name, const qbipw::GramVerdict& v,
                   const std::vector<std::string>& labels) {
  if (v.ok) {
    std::printf("%s: ok, rank %d of %d\n", name, v.rank, v.dimension);
    return;
  }
  std::string cols;
  for (int c : v.dependent_columns) {
    if (!cols.empty()) cols += ", ";
    cols += labels[static_cast<std::size_t>(c)];
  }
  std::printf("%s: FAIL, rank %d of %d, nullity %d, dependent columns: %s\n", name, v.rank,
              v.dimension, v.nullity(), cols.c_str());
}

int run_diagnose_weights(const DiagnoseArgs& args) {
  if (args.sample.empty()) throw input_error("--weights needs --sample");
  if (args.weight.empty()) throw input_error("weight column required for probability sample");
  const qbipw::CsvTable t = load_table(args.sample);
  if (t.rows.empty()) throw input_error("sample is empty: " + args.sample);
  const Eigen::VectorXd d = numeric_column(t, args.sample, args.weight);

  const qbipw::CsvTable wt = load_table(args.weights);
  const Eigen::VectorXd w = numeric_column(wt, args.weights, "w");
  if (w.size() != static_cast<Eigen::Index>(t.rows.size()))
    throw input_error("weights file and sample disagree on row count");

  const ConstraintSystem sys = build_constraint_system(t, args.sample, d, args.totals,
                                                       args.quantile_targets, args.pop_size);
  std::printf("# qbipw %s\n", qbipw::version);
  std::printf("# diagnose weights=%s sample=%s pop_size=%.17g\n", args.weights.c_str(),
              args.sample.c_str(), sys.population_size);
  print_achieved(stdout, sys, w);
  std::printf("errors: none\n");
  return 0;
}

int run_diagnose(const DiagnoseArgs& args) {
  if (!args.weights.empty()) return run_diagnose_weights(args);

  const PairInputs in = load_pair(args.pair);
  if (args.method != "mle" && args.method != "gee")
    throw input_error("unknown --method: " + args.method + " (want mle or gee)");
  const bool gee = args.method == "gee";

  const qbipw::Design design = qbipw::build_design(in.a, in.b, in.balance);
  std::printf("# qbipw %s\n", qbipw::version);
  std::printf("# diagnose nonprob=%s prob=%s y=%s x=%s weight=%s method=%s\n",
              args.pair.nonprob.c_str(), args.pair.prob.c_str(), args.pair.y.c_str(),
              args.pair.x.c_str(), args.pair.weight.c_str(), args.method.c_str());

  const qbipw::GramVerdict b1 =
      qbipw::check_identifiability(design.za, qbipw::IdentCondition::B1);
  const qbipw::GramVerdict b2 =
      qbipw::check_identifiability(design.zb, qbipw::IdentCondition::B2);
  print_verdict("B1", b1, design.labels);
  print_verdict("B2", b2, design.labels);
  std::printf("method: %s\n", args.method.c_str());

  const qbipw::GramVerdict& needed = gee ? b1 : b2;
  if (!needed.ok) {
    std::printf("fit: skipped (%s fails)\n", gee ? "B1" : "B2");
    std::printf("errors: none\n");
    return 0;
  }

  const qbipw::PropensityFit fit = gee ? qbipw::solve_gee(design.za, design.zb, in.b.d)
                                       : qbipw::solve_mle(design.za, design.zb, in.b.d);
  std::printf("converged: %s (%d iterations, residual %.10g)\n", fit.converged ? "yes" : "no",
              fit.iterations, fit.residual_norm);
  if (!fit.message.empty()) std::printf("solver message: %s\n", fit.message.c_str());

  const qbipw::NuMetrics nu = qbipw::constraint_quality(fit, in.a, in.b,
                                                        in.balance.total_columns,
                                                        union_levels(in.balance));
  std::printf("nu_n: %.10g\n", nu.nu_n);
  std::printf("nu_q: %.10g\n", nu.nu_q);
  std::printf("nu_tau: %.10g\n", nu.nu_tau);
  std::printf("errors: none\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"quantile-balancing inverse probability weighting"};
  app.require_subcommand(1);

  EstimateArgs ea;
  std::string ea_config;
  auto* est = app.add_subcommand(
      "estimate", "point estimate with optional variance for one sample pair");
  std::vector<ConfigBinding> est_bind;
  {
    auto* o = est->add_option("--nonprob", ea.pair.nonprob, "non-probability sample CSV");
    est_bind.push_back({o, "nonprob", [&](const json& v) { ea.pair.nonprob = v.get<std::string>(); }});
    o = est->add_option("--prob", ea.pair.prob, "probability sample CSV");
    est_bind.push_back({o, "prob", [&](const json& v) { ea.pair.prob = v.get<std::string>(); }});
    o = est->add_option("--y", ea.pair.y, "outcome column in the non-probability sample");
    est_bind.push_back({o, "y", [&](const json& v) { ea.pair.y = v.get<std::string>(); }});
    o = est->add_option("--x", ea.pair.x, "comma-separated covariate columns in both samples");
    est_bind.push_back({o, "x", [&](const json& v) { ea.pair.x = v.get<std::string>(); }});
    o = est->add_option("--weight", ea.pair.weight, "design weight column in the probability sample");
    est_bind.push_back({o, "weight", [&](const json& v) { ea.pair.weight = v.get<std::string>(); }});
    o = est->add_option("--strata", ea.pair.strata, "stratum column for the bootstrap");
    est_bind.push_back({o, "strata", [&](const json& v) { ea.pair.strata = v.get<std::string>(); }});
    o = est->add_option("--factor", ea.pair.factor,
                        "comma-separated --x columns expanded to one-hot indicators");
    est_bind.push_back({o, "factor", [&](const json& v) { ea.pair.factor = v.get<std::string>(); }});
    o = est->add_option("--quantiles", ea.pair.quantiles,
                        "quantile constraints, e.g. x2:0.25,0.5,0.75");
    est_bind.push_back({o, "quantiles", [&](const json& v) { string_or_list(v, ea.pair.quantiles); }});
    o = est->add_option("--pop-size", ea.pair.pop_size, "known population size");
    est_bind.push_back({o, "pop-size", [&](const json& v) { ea.pair.pop_size = v.get<double>(); }});
    o = est->add_option("--estimator", ea.estimator,
                        "estimator id or family (naive, ipw, qbipw1, qbipw2, mi-glm, mi-nn, dr)");
    est_bind.push_back({o, "estimator", [&](const json& v) { ea.estimator = v.get<std::string>(); }});
    o = est->add_option("--method", ea.method, "propensity method: mle or gee");
    auto* o_method = o;
    est_bind.push_back({o, "method", [&](const json& v) {
                          ea.method = v.get<std::string>();
                          ea.method_given = true;
                        }});
    o = est->add_option("--variance", ea.variance, "analytic, bootstrap or none");
    est_bind.push_back({o, "variance", [&](const json& v) { ea.variance = v.get<std::string>(); }});
    o = est->add_option("--boot-reps", ea.boot_reps, "bootstrap replicates")->check(CLI::PositiveNumber);
    est_bind.push_back({o, "boot-reps", [&](const json& v) { ea.boot_reps = v.get<int>(); }});
    o = est->add_option("--seed", ea.seed, "bootstrap seed");
    est_bind.push_back({o, "seed", [&](const json& v) { ea.seed = v.get<std::uint64_t>(); }});
    o = est->add_option("--outcome", ea.outcome, "continuous or binary");
    est_bind.push_back({o, "outcome", [&](const json& v) { ea.outcome = v.get<std::string>(); }});
    o = est->add_option("--knn", ea.knn, "neighbours for mi-nn")->check(CLI::PositiveNumber);
    est_bind.push_back({o, "knn", [&](const json& v) { ea.knn = v.get<int>(); }});
    o = est->add_option("--threads", ea.threads, "bootstrap worker threads");
    est_bind.push_back({o, "threads", [&](const json& v) { ea.threads = v.get<int>(); }});
    o = est->add_option("--out", ea.out, "write the JSON result here instead of stdout");
    est_bind.push_back({o, "out", [&](const json& v) { ea.out = v.get<std::string>(); }});
    est->add_option("--config", ea_config, "JSON file with defaults for the options above");
    est->callback([&, o_method] { ea.method_given = ea.method_given || o_method->count() > 0; });
  }

  SimulateArgs sa;
  std::string sa_config;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo study over the built-in scenarios");
  std::vector<ConfigBinding> sim_bind;
  {
    auto* o = sim->add_option("--scenario", sa.scenario, "I, II, III or IV");
    sim_bind.push_back({o, "scenario", [&](const json& v) { sa.scenario = v.get<std::string>(); }});
    o = sim->add_option("--outcome", sa.outcome, "continuous or binary");
    sim_bind.push_back({o, "outcome", [&](const json& v) { sa.outcome = v.get<std::string>(); }});
    o = sim->add_option("--scale", sa.scale, "desk (20000/500/100) or paper (100000/1000/500)");
    sim_bind.push_back({o, "scale", [&](const json& v) { sa.scale = v.get<std::string>(); }});
    o = sim->add_option("--reps", sa.reps, "replicates");
    sim_bind.push_back({o, "reps", [&](const json& v) { sa.reps = v.get<long long>(); }});
    o = sim->add_option("--pop-size", sa.pop_size, "population size");
    sim_bind.push_back({o, "pop-size", [&](const json& v) { sa.pop_size = v.get<long long>(); }});
    o = sim->add_option("--sample-size", sa.sample_size, "probability sample size");
    sim_bind.push_back({o, "sample-size", [&](const json& v) { sa.sample_size = v.get<long long>(); }});
    o = sim->add_option("--seed", sa.seed, "master seed");
    sim_bind.push_back({o, "seed", [&](const json& v) { sa.seed = v.get<std::uint64_t>(); }});
    o = sim->add_option("--threads", sa.threads, "worker threads (never changes results)");
    sim_bind.push_back({o, "threads", [&](const json& v) { sa.threads = v.get<int>(); }});
    o = sim->add_option("--estimators", sa.estimators, "comma-separated estimator ids (default all)");
    sim_bind.push_back({o, "estimators", [&](const json& v) { sa.estimators = v.get<std::string>(); }});
    o = sim->add_option("--out-dir", sa.out_dir, "directory for the CSV outputs");
    sim_bind.push_back({o, "out-dir", [&](const json& v) { sa.out_dir = v.get<std::string>(); }});
    o = sim->add_flag("--no-analytic-ci", sa.no_analytic_ci, "skip sandwich intervals");
    sim_bind.push_back({o, "no-analytic-ci", [&](const json& v) { sa.no_analytic_ci = v.get<bool>(); }});
    o = sim->add_option("--knn", sa.knn, "neighbours for mi-nn")->check(CLI::PositiveNumber);
    sim_bind.push_back({o, "knn", [&](const json& v) { sa.knn = v.get<int>(); }});
    sim->add_option("--config", sa_config, "JSON file with defaults for the options above");
  }

  CalibrateArgs ca;
  std::string ca_config;
  auto* cal = app.add_subcommand("calibrate", "adjust design weights to totals and quantiles");
  std::vector<ConfigBinding> cal_bind;
  {
    auto* o = cal->add_option("--sample", ca.sample, "probability sample CSV");
    cal_bind.push_back({o, "sample", [&](const json& v) { ca.sample = v.get<std::string>(); }});
    o = cal->add_option("--weight", ca.weight, "design weight column");
    cal_bind.push_back({o, "weight", [&](const json& v) { ca.weight = v.get<std::string>(); }});
    o = cal->add_option("--totals", ca.totals, "total targets, e.g. x1:123.4,x2:56.7");
    cal_bind.push_back({o, "totals", [&](const json& v) { string_or_list(v, ca.totals); }});
    o = cal->add_option("--quantile-targets", ca.quantile_targets,
                        "quantile targets, e.g. x1:0.25=1.6,0.5=2.0");
    cal_bind.push_back({o, "quantile-targets",
                        [&](const json& v) { string_or_list(v, ca.quantile_targets); }});
    o = cal->add_option("--pop-size", ca.pop_size, "population size (default: sum of weights)");
    cal_bind.push_back({o, "pop-size", [&](const json& v) { ca.pop_size = v.get<double>(); }});
    o = cal->add_option("--out", ca.out, "weights CSV path");
    cal_bind.push_back({o, "out", [&](const json& v) { ca.out = v.get<std::string>(); }});
    cal->add_option("--config", ca_config, "JSON file with defaults for the options above");
  }

  DiagnoseArgs da;
  std::string da_config;
  auto* diag = app.add_subcommand("diagnose", "identifiability and constraint diagnostics");
  std::vector<ConfigBinding> diag_bind;
  {
    auto* o = diag->add_option("--nonprob", da.pair.nonprob, "non-probability sample CSV");
    diag_bind.push_back({o, "nonprob", [&](const json& v) { da.pair.nonprob = v.get<std::string>(); }});
    o = diag->add_option("--prob", da.pair.prob, "probability sample CSV");
    diag_bind.push_back({o, "prob", [&](const json& v) { da.pair.prob = v.get<std::string>(); }});
    o = diag->add_option("--y", da.pair.y, "outcome column");
    diag_bind.push_back({o, "y", [&](const json& v) { da.pair.y = v.get<std::string>(); }});
    o = diag->add_option("--x", da.pair.x, "comma-separated covariate columns");
    diag_bind.push_back({o, "x", [&](const json& v) { da.pair.x = v.get<std::string>(); }});
    o = diag->add_option("--weight", da.pair.weight, "design weight column");
    diag_bind.push_back({o, "weight", [&](const json& v) {
                           da.pair.weight = v.get<std::string>();
                           da.weight = da.pair.weight;
                         }});
    o = diag->add_option("--factor", da.pair.factor, "factor columns within --x");
    diag_bind.push_back({o, "factor", [&](const json& v) { da.pair.factor = v.get<std::string>(); }});
    o = diag->add_option("--quantiles", da.pair.quantiles, "quantile constraints");
    diag_bind.push_back({o, "quantiles", [&](const json& v) { string_or_list(v, da.pair.quantiles); }});
    o = diag->add_option("--pop-size", da.pair.pop_size, "known population size");
    diag_bind.push_back({o, "pop-size", [&](const json& v) {
                           da.pair.pop_size = v.get<double>();
                           da.pop_size = da.pair.pop_size;
                         }});
    o = diag->add_option("--method", da.method, "propensity method: mle or gee");
    diag_bind.push_back({o, "method", [&](const json& v) { da.method = v.get<std::string>(); }});
    o = diag->add_option("--weights", da.weights,
                         "calibrated weights CSV; switches to the achieved-vs-target table");
    diag_bind.push_back({o, "weights", [&](const json& v) { da.weights = v.get<std::string>(); }});
    o = diag->add_option("--sample", da.sample, "sample CSV for --weights mode");
    diag_bind.push_back({o, "sample", [&](const json& v) { da.sample = v.get<std::string>(); }});
    o = diag->add_option("--totals", da.totals, "total targets for --weights mode");
    diag_bind.push_back({o, "totals", [&](const json& v) { string_or_list(v, da.totals); }});
    o = diag->add_option("--quantile-targets", da.quantile_targets,
                         "quantile targets for --weights mode");
    diag_bind.push_back({o, "quantile-targets",
                         [&](const json& v) { string_or_list(v, da.quantile_targets); }});
    diag->add_option("--config", da_config, "JSON file with defaults for the options above");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (est->parsed()) {
      if (!ea_config.empty()) merge_config(ea_config, est_bind);
      return run_estimate(ea);
    }
    if (sim->parsed()) {
      if (!sa_config.empty()) merge_config(sa_config, sim_bind);
      return run_simulate(sa);
    }
    if (cal->parsed()) {
      if (!ca_config.empty()) merge_config(ca_config, cal_bind);
      return run_calibrate(ca);
    }
    if (diag->parsed()) {
      if (!da_config.empty()) merge_config(da_config, diag_bind);
      da.weight = da.pair.weight;
      da.pop_size = da.pair.pop_size;
      return run_diagnose(da);
    }
  } catch (const qbipw::identifiability_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const qbipw::estimation_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const input_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
