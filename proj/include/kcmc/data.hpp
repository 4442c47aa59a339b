#pragma once

#include "kcmc/types.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace kcmc {

/// The observable part of a logged bandit dataset: (Y, T, X). Estimators only
/// ever receive this type, so simulator ground truth cannot leak into them.
struct Observations {
  Vector rewards;
  std::vector<int> actions;
  Matrix covariates;  // n x p
  int num_actions = 2;

  Index size() const { return rewards.size(); }
  Index dim() const { return covariates.cols(); }

  void validate() const {
    const Index n = rewards.size();
    if (n < 1) throw Error("dataset must contain at least one row");
    if (static_cast<Index>(actions.size()) != n || covariates.rows() != n)
      throw Error("rewards, actions and covariates must have the same number of rows");
    for (std::size_t i = 0; i < actions.size(); ++i)
      if (actions[i] < 0 || actions[i] >= num_actions)
        throw Error("action " + std::to_string(actions[i]) + " at row " + std::to_string(i + 1) +
                    " is outside {0.." + std::to_string(num_actions - 1) + "}");
    if (!rewards.allFinite() || !covariates.allFinite()) throw Error("dataset contains non-finite values");
  }

  /// Row subset in the given order.
  Observations subset(const std::vector<Index>& rows) const {
    Observations out;
    out.num_actions = num_actions;
    out.rewards.resize(static_cast<Index>(rows.size()));
    out.covariates.resize(static_cast<Index>(rows.size()), dim());
    out.actions.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      out.rewards[static_cast<Index>(k)] = rewards[rows[k]];
      out.actions[k] = actions[static_cast<std::size_t>(rows[k])];
      out.covariates.row(static_cast<Index>(k)) = covariates.row(rows[k]);
    }
    return out;
  }
};

/// Simulator-only fields. Only oracles and tests may read these.
struct Truth {
  std::vector<int> u;
  Vector y0;
  Vector y1;
  Vector propensity_confounded;  // e(X, U) = P(T=1 | X, U)
  Vector propensity_nominal;     // e(X)
};

struct LoggedDataset {
  Observations obs;
  std::optional<Truth> truth;

  Index size() const { return obs.size(); }

  LoggedDataset subset(const std::vector<Index>& rows) const {
    LoggedDataset out{obs.subset(rows), std::nullopt};
    if (truth) {
      Truth t;
      const auto m = static_cast<Index>(rows.size());
      t.y0.resize(m);
      t.y1.resize(m);
      t.propensity_confounded.resize(m);
      t.propensity_nominal.resize(m);
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const Index i = rows[k];
        t.u.push_back(truth->u[static_cast<std::size_t>(i)]);
        t.y0[static_cast<Index>(k)] = truth->y0[i];
        t.y1[static_cast<Index>(k)] = truth->y1[i];
        t.propensity_confounded[static_cast<Index>(k)] = truth->propensity_confounded[i];
        t.propensity_nominal[static_cast<Index>(k)] = truth->propensity_nominal[i];
      }
      out.truth = std::move(t);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// CSV

struct CsvSchema {
  std::string reward_column = "y";
  std::string action_column = "t";
  std::vector<std::string> covariate_columns;  // empty: every other column
  int num_actions = 2;
};

struct CsvReport {
  Index rows = 0;
  std::vector<std::string> covariate_columns;
};

struct CsvLoadResult {
  LoggedDataset data;
  CsvReport report;
};

namespace detail {

inline std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline double parse_number(const std::string& cell, std::size_t row, const std::string& column) {
  const std::string s = trim(cell);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw Error("non-numeric cell '" + s + "' at row " + std::to_string(row) + ", column '" + column + "'");
  return value;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline CsvLoadResult load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) throw Error("empty file '" + path + "'");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = detail::split_commas(line);
  for (auto& h : header) h = detail::trim(h);

  auto find_column = [&](const std::string& name) -> std::size_t {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    throw Error("missing column '" + name + "' in '" + path + "'");
  };
  const std::size_t ycol = find_column(schema.reward_column);
  const std::size_t tcol = find_column(schema.action_column);
  std::vector<std::size_t> xcols;
  CsvReport report;
  if (schema.covariate_columns.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (j != ycol && j != tcol) {
        xcols.push_back(j);
        report.covariate_columns.push_back(header[j]);
      }
  } else {
    for (const auto& c : schema.covariate_columns) {
      xcols.push_back(find_column(c));
      report.covariate_columns.push_back(c);
    }
  }

  std::vector<double> ys;
  std::vector<int> ts;
  std::vector<std::vector<double>> xs;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size())
      throw Error("row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " cells, expected " +
                  std::to_string(header.size()));
    ys.push_back(detail::parse_number(cells[ycol], row, header[ycol]));
    const double t = detail::parse_number(cells[tcol], row, header[tcol]);
    if (t != std::floor(t) || t < 0 || t >= schema.num_actions)
      throw Error("action value " + detail::trim(cells[tcol]) + " at row " + std::to_string(row) +
                  " is outside the declared " + std::to_string(schema.num_actions) + " actions");
    ts.push_back(static_cast<int>(t));
    std::vector<double> x;
    for (auto j : xcols) x.push_back(detail::parse_number(cells[j], row, header[j]));
    xs.push_back(std::move(x));
  }
  if (ys.empty()) throw Error("no data rows in '" + path + "'");

  LoggedDataset data;
  const auto n = static_cast<Index>(ys.size());
  data.obs.num_actions = schema.num_actions;
  data.obs.rewards = Eigen::Map<Vector>(ys.data(), n);
  data.obs.actions = std::move(ts);
  data.obs.covariates.resize(n, static_cast<Index>(xcols.size()));
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < static_cast<Index>(xcols.size()); ++j)
      data.obs.covariates(i, j) = xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  data.obs.validate();
  report.rows = n;
  return {std::move(data), std::move(report)};
}

/// Writes observables as `y,t,x1..xp` with 17 significant digits.
inline void write_csv(const std::string& path, const Observations& obs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "y,t";
  for (Index j = 0; j < obs.dim(); ++j) out << ",x" << (j + 1);
  out << "\n";
  for (Index i = 0; i < obs.size(); ++i) {
    out << detail::format_double(obs.rewards[i]) << "," << obs.actions[static_cast<std::size_t>(i)];
    for (Index j = 0; j < obs.dim(); ++j) out << "," << detail::format_double(obs.covariates(i, j));
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// JSON interchange: {"rewards","actions","covariates","truth"?}

inline nlohmann::json to_json(const LoggedDataset& d) {
  using nlohmann::json;
  json j;
  j["rewards"] = std::vector<double>(d.obs.rewards.data(), d.obs.rewards.data() + d.size());
  j["actions"] = d.obs.actions;
  json rows = json::array();
  for (Index i = 0; i < d.size(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(d.obs.dim()));
    for (Index k = 0; k < d.obs.dim(); ++k) r[static_cast<std::size_t>(k)] = d.obs.covariates(i, k);
    rows.push_back(r);
  }
  j["covariates"] = rows;
  j["num_actions"] = d.obs.num_actions;
  if (d.truth) {
    auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    j["truth"] = {{"u", d.truth->u},
                  {"y0", vec(d.truth->y0)},
                  {"y1", vec(d.truth->y1)},
                  {"propensity_confounded", vec(d.truth->propensity_confounded)},
                  {"propensity_nominal", vec(d.truth->propensity_nominal)}};
  }
  return j;
}

inline LoggedDataset dataset_from_json(const nlohmann::json& j) {
  LoggedDataset d;
  const auto ys = j.at("rewards").get<std::vector<double>>();
  const auto n = static_cast<Index>(ys.size());
  d.obs.rewards = Eigen::Map<const Vector>(ys.data(), n);
  d.obs.actions = j.at("actions").get<std::vector<int>>();
  d.obs.num_actions = j.value("num_actions", 2);
  const auto rows = j.at("covariates").get<std::vector<std::vector<double>>>();
  const Index p = rows.empty() ? 0 : static_cast<Index>(rows.front().size());
  d.obs.covariates.resize(static_cast<Index>(rows.size()), p);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Index>(rows[i].size()) != p) throw Error("ragged covariate rows in JSON dataset");
    for (Index k = 0; k < p; ++k) d.obs.covariates(static_cast<Index>(i), k) = rows[i][static_cast<std::size_t>(k)];
  }
  d.obs.validate();
  if (j.contains("truth")) {
    const auto& t = j["truth"];
    auto vec = [&](const char* key) {
      const auto v = t.at(key).get<std::vector<double>>();
      return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())));
    };
    d.truth = Truth{t.at("u").get<std::vector<int>>(), vec("y0"), vec("y1"), vec("propensity_confounded"),
                    vec("propensity_nominal")};
  }
  return d;
}

}  // namespace kcmc
