#pragma once

// Sweeps, learning runs and result tables behind the command-line tool.

#include "kcmc/estimators.hpp"
#include "kcmc/learning.hpp"
#include "kcmc/synthetic.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace kcmc {

struct RunConfig {
  std::string command = "bounds";
  Index n = 500;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<double> grid;  // empty: the family default
  std::string model = "box:GAMMA=1.5";
  std::vector<std::string> specs{"zsb", "qb", "kcmc:hard,D=100", "kcmc:gp,D=100,alpha=0.05"};
  std::string out = "results.csv";
  int workers = 1;
  std::string direction = "both";
  std::string csv;  // external data instead of the simulator
  CsvSchema schema;
  std::string policy = "nominal";
  std::vector<std::string> components{"always0", "always1", "nominal"};
  double holdout = 0.5;
  Index mc = 100000;
  bool timings = false;

  std::vector<Direction> directions() const {
    if (direction == "both") return {Direction::lower, Direction::upper};
    return {parse_direction(direction)};
  }

  /// The sweep values, defaulting by model family.
  std::vector<double> sweep() const {
    if (!grid.empty()) return grid;
    const auto m = parse_sensitivity_model(model);
    if (m.box) return {1.0, 1.5, 2.0, 3.0};
    return {0.0, 0.005, 0.01, 0.05, 0.1};
  }

  /// The configured model with its sweep parameter replaced.
  SensitivityModel model_at(double value) const {
    auto m = parse_sensitivity_model(model);
    if (m.box) m.box->gamma_odds = value;
    else m.fdiv->budget = value;
    m.validate();
    return m;
  }

  void validate() const {
    if (n < 1) throw Error("n must be at least 1");
    if (seeds.empty()) throw Error("at least one seed is required");
    if (workers < 1) throw Error("workers must be at least 1");
    if (command == "bounds") {
      const auto g = sweep();
      if (g.empty()) throw Error("the sweep grid is empty");
      const auto m = parse_sensitivity_model(model);
      for (double v : g) {
        if (m.box && !(v >= 1.0)) throw Error("Gamma grid values must be >= 1");
        if (!m.box && !(v >= 0.0)) throw Error("budget grid values must be >= 0");
      }
      if (specs.empty()) throw Error("at least one constraint spec is required");
      for (const auto& s : specs) (void)parse_spec_request(s);
    }
    (void)directions();
  }
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

/// "0-9" or "1,4,7".
inline std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& part : detail::split(s, ',')) {
    const auto dash = part.find('-');
    try {
      if (dash != std::string::npos && dash > 0) {
        const auto a = std::stoull(part.substr(0, dash));
        const auto b = std::stoull(part.substr(dash + 1));
        if (b < a) throw Error("");
        for (auto k = a; k <= b; ++k) out.push_back(k);
      } else {
        out.push_back(std::stoull(part));
      }
    } catch (...) {
      throw Error("cannot parse seed list '" + s + "'");
    }
  }
  return out;
}

inline std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : detail::split(s, ',')) out.push_back(detail::parse_real(part, "grid"));
  return out;
}

/// Applies one key=value setting; keys match the long flag names.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "command") c.command = value;
  else if (key == "n") c.n = static_cast<Index>(detail::parse_real(value, key));
  else if (key == "seeds") c.seeds = parse_seeds(value);
  else if (key == "grid") c.grid = parse_grid(value);
  else if (key == "model") c.model = value;
  else if (key == "spec") c.specs = detail::split(value, ';');
  else if (key == "out") c.out = value;
  else if (key == "workers") c.workers = static_cast<int>(detail::parse_real(value, key));
  else if (key == "direction") c.direction = value;
  else if (key == "csv") c.csv = value;
  else if (key == "reward_column") c.schema.reward_column = value;
  else if (key == "action_column") c.schema.action_column = value;
  else if (key == "covariate_columns") c.schema.covariate_columns = detail::split(value, ',');
  else if (key == "policy") c.policy = value;
  else if (key == "components") c.components = detail::split(value, ',');
  else if (key == "holdout") c.holdout = detail::parse_real(value, key);
  else if (key == "mc") c.mc = static_cast<Index>(detail::parse_real(value, key));
  else if (key == "timings") c.timings = value == "1" || value == "true";
  else throw Error("unknown configuration key '" + key + "'");
}

/// Flat `key = value` file; '#' starts a comment.
inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(path + ":" + std::to_string(lineno) + ": expected key = value");
    apply_setting(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  return base;
}

struct ResultRow {
  std::string method;
  Direction direction = Direction::lower;
  double sensitivity_param = 0.0;
  std::uint64_t seed = 0;
  Index n = 0;
  double value = 0.0;
  double gap = 0.0;
  double runtime_ms = 0.0;
};

struct CellFailure {
  std::uint64_t seed = 0;
  std::string method;
  std::string direction;
  double sensitivity_param = 0.0;
  std::string message;
};

struct BoundsResult {
  std::vector<ResultRow> rows;
  std::vector<CellFailure> failures;
};

inline const char* kResultsHeader = "method,direction,sensitivity_param,seed,n,value,gap,runtime_ms";

inline std::string format_row(const ResultRow& r) {
  std::ostringstream s;
  s << r.method << ',' << to_string(r.direction) << ',' << detail::format_double(r.sensitivity_param) << ',' << r.seed
    << ',' << r.n << ',' << detail::format_double(r.value) << ',' << detail::format_double(r.gap) << ','
    << detail::format_double(r.runtime_ms);
  return s.str();
}

inline void write_results_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << kResultsHeader << '\n';
  for (const auto& r : rows) out << format_row(r) << '\n';
}

inline std::vector<ResultRow> read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kResultsHeader) throw Error("'" + path + "' is not a results table");
  std::vector<ResultRow> rows;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != 8) throw Error("results row has " + std::to_string(cells.size()) + " cells");
    ResultRow r;
    r.method = cells[0];
    r.direction = parse_direction(cells[1]);
    r.sensitivity_param = std::stod(cells[2]);
    r.seed = std::stoull(cells[3]);
    r.n = static_cast<Index>(std::stoll(cells[4]));
    r.value = std::stod(cells[5]);
    r.gap = std::stod(cells[6]);
    r.runtime_ms = std::stod(cells[7]);
    rows.push_back(r);
  }
  return rows;
}

/// Mean and standard deviation per (method, direction, parameter).
inline void write_summary_csv(const std::string& path, const std::vector<ResultRow>& rows) {
  std::map<std::tuple<std::string, std::string, double>, std::vector<double>> cells;
  for (const auto& r : rows)
    if (std::isfinite(r.value)) cells[{r.method, to_string(r.direction), r.sensitivity_param}].push_back(r.value);
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path + "'");
  out << "method,direction,sensitivity_param,count,mean,sd\n";
  for (const auto& [key, v] : cells) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    const double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << detail::format_double(std::get<2>(key)) << ','
        << v.size() << ',' << detail::format_double(m) << ',' << detail::format_double(sd) << '\n';
  }
}

/// Runs `task(k)` for k in [0, count) on up to `workers` threads.
template <class Task>
void parallel_for(std::size_t count, int workers, Task&& task) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || count <= 1) {
    for (std::size_t k = 0; k < count; ++k) task(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(w, count); ++t)
    pool.emplace_back([&] {
      for (std::size_t k = next++; k < count; k = next++) task(k);
    });
  for (auto& th : pool) th.join();
}

inline std::string replace_extension(const std::string& path, const std::string& ext) {
  const auto slash = path.find_last_of('/');
  const auto dot = path.find_last_of('.');
  if (dot != std::string::npos && (slash == std::string::npos || dot > slash)) return path.substr(0, dot) + ext;
  return path + ext;
}

struct PreparedData {
  LoggedDataset data;
  PropensityEstimate prop;
};

inline PreparedData prepare_data(const RunConfig& cfg, std::uint64_t seed) {
  PreparedData p;
  if (cfg.csv.empty()) p.data = generate_synthetic(cfg.n, seed);
  else p.data = load_csv(cfg.csv, cfg.schema).data;
  p.prop = zsb_rescale(fit_logistic_propensity(p.data.obs), p.data.obs);
  return p;
}

inline bool needs_kernel(const SpecRequest& r) {
  return r.kind == SpecRequest::Kind::hard || r.kind == SpecRequest::Kind::gp ||
         r.kind == SpecRequest::Kind::gp_full;
}

inline BoundsResult run_bounds(const RunConfig& cfg) {
  cfg.validate();
  std::vector<SpecRequest> reqs;
  for (const auto& s : cfg.specs) reqs.push_back(parse_spec_request(s));
  const auto grid = cfg.sweep();
  const auto dirs = cfg.directions();
  const Policy policy = policies::by_name(cfg.policy);
  const std::vector<std::uint64_t> seeds = cfg.csv.empty() ? cfg.seeds : std::vector<std::uint64_t>{0};

  std::vector<BoundsResult> per_seed(seeds.size());
  parallel_for(seeds.size(), cfg.workers, [&](std::size_t k) {
    auto& res = per_seed[k];
    const auto seed = seeds[k];
    std::optional<PreparedData> prep;
    std::optional<KernelContext> ctx;
    std::string setup_error;
    try {
      prep = prepare_data(cfg, seed);
      Index max_rank = 0;
      for (const auto& r : reqs)
        if (needs_kernel(r)) max_rank = std::max(max_rank, r.kind == SpecRequest::Kind::gp_full ? Index{1} : r.D);
      if (max_rank > 0) ctx = make_kernel_context(prep->data.obs, max_rank);
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    for (double g : grid) {
      for (const auto& r : reqs) {
        for (Direction d : dirs) {
          ResultRow row;
          row.method = r.method();
          row.direction = d;
          row.sensitivity_param = g;
          row.seed = seed;
          row.n = prep ? prep->data.size() : cfg.n;
          row.value = std::numeric_limits<double>::quiet_NaN();
          row.gap = std::numeric_limits<double>::quiet_NaN();
          std::string failure = setup_error;
          if (prep) {
            try {
              const auto t0 = std::chrono::steady_clock::now();
              const auto b = estimate_bound(r, prep->data.obs, prep->prop, policy, cfg.model_at(g), d,
                                            ctx ? &*ctx : nullptr);
              const auto t1 = std::chrono::steady_clock::now();
              row.value = b.value;
              row.gap = b.gap;
              if (cfg.timings) row.runtime_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
              if (!b.converged) failure = "not certified: " + b.message;
            } catch (const std::exception& e) {
              failure = e.what();
            }
          }
          if (!failure.empty()) res.failures.push_back({seed, row.method, to_string(d), g, failure});
          res.rows.push_back(row);
        }
      }
    }
  });
  BoundsResult all;
  for (auto& r : per_seed) {
    all.rows.insert(all.rows.end(), r.rows.begin(), r.rows.end());
    all.failures.insert(all.failures.end(), r.failures.begin(), r.failures.end());
  }
  return all;
}

struct LearnRun {
  std::uint64_t seed = 0;
  LearnResult result;
  HoldoutReport holdout;
  std::optional<MonteCarloValue> truth;
  std::string error;
};

inline std::vector<std::string> trace_csv_lines(const std::vector<LearnRun>& runs) {
  std::vector<std::string> lines{"seed,iteration,train_bound"};
  for (const auto& run : runs)
    for (std::size_t it = 0; it < run.result.trace.size(); ++it)
      lines.push_back(std::to_string(run.seed) + "," + std::to_string(it) + "," +
                      detail::format_double(run.result.trace[it]));
  return lines;
}

inline std::vector<LearnRun> run_learn(const RunConfig& cfg) {
  cfg.validate();
  const auto model = parse_sensitivity_model(cfg.model);
  const SpecRequest req = parse_spec_request(cfg.specs.empty() ? "kcmc:hard,D=100" : cfg.specs.front());
  std::vector<Policy> comps;
  for (const auto& name : cfg.components) comps.push_back(policies::by_name(name));
  if (!(cfg.holdout > 0.0 && cfg.holdout < 1.0)) throw Error("holdout fraction must lie in (0,1)");
  const std::vector<std::uint64_t> seeds = cfg.csv.empty() ? cfg.seeds : std::vector<std::uint64_t>{0};

  std::vector<LearnRun> runs(seeds.size());
  parallel_for(seeds.size(), cfg.workers, [&](std::size_t k) {
    auto& run = runs[k];
    run.seed = seeds[k];
    try {
      LoggedDataset data;
      if (cfg.csv.empty()) data = generate_synthetic(cfg.n, run.seed);
      else data = load_csv(cfg.csv, cfg.schema).data;
      const Index n = data.size();
      std::vector<Index> perm(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), Index{0});
      auto rng = make_stream(run.seed, Stream::split);
      for (Index i = n - 1; i > 0; --i) {
        const auto j = std::min(i, static_cast<Index>(rng.uniform() * static_cast<double>(i + 1)));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
      }
      const auto n_test = static_cast<std::size_t>(std::llround(cfg.holdout * static_cast<double>(n)));
      std::vector<Index> train(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(n_test));
      std::vector<Index> test(perm.end() - static_cast<std::ptrdiff_t>(n_test), perm.end());
      std::sort(train.begin(), train.end());
      std::sort(test.begin(), test.end());
      const auto tr = data.obs.subset(train);
      const auto te = data.obs.subset(test);
      const auto prop = zsb_rescale(fit_logistic_propensity(tr), tr);
      std::optional<KernelContext> ctx;
      if (needs_kernel(req)) ctx = make_kernel_context(tr, req.D);
      const Policy any = comps.front();
      const KcmcSpec spec = build_spec(req, tr, prop, any, model, Direction::lower, ctx ? &*ctx : nullptr);
      run.result = learn_mixture(tr, prop, model, spec, comps);
      const MixturePolicy mix(comps, run.result.beta);
      run.holdout = evaluate_learned(mix, te, model, req, run.result.bound);
      if (cfg.csv.empty()) run.truth = true_policy_value(mix.as_policy(), cfg.mc, run.seed + 1000003);
    } catch (const std::exception& e) {
      run.error = e.what();
    }
  });
  return runs;
}

inline nlohmann::json learn_report_json(const RunConfig& cfg, const std::vector<LearnRun>& runs) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& run : runs) {
    nlohmann::json r;
    r["seed"] = run.seed;
    if (!run.error.empty()) {
      r["error"] = run.error;
    } else {
      r["policy"] = learned_policy_json(cfg.components, run.result, run.holdout);
      if (run.truth) r["mc_truth"] = {{"value", run.truth->value}, {"std_error", run.truth->std_error}};
    }
    j.push_back(r);
  }
  return j;
}

}  // namespace kcmc
