// kcmc: sensitivity bounds for off-policy values under unobserved confounding.

#include "kcmc/experiment.hpp"
#include "kcmc/selfcheck.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

struct Flags {
  std::string config;
  std::string n, seeds, grid, model, out, workers, direction, csv, policy, components, holdout, mc;
  std::string reward_column, action_column, covariate_columns;
  std::vector<std::string> specs;
  bool timings = false;
};

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "key = value configuration file");
  app->add_option("--n", f.n, "sample size");
  app->add_option("--seeds", f.seeds, "seed range 0-9 or list 1,2,3");
  app->add_option("--model", f.model, "sensitivity model, e.g. box:GAMMA=1.5 or f:KIND=kl,GAMMA_BUDGET=0.05");
  app->add_option("--out", f.out, "output path");
  app->add_option("--workers", f.workers, "parallel workers");
  app->add_option("--csv", f.csv, "observational CSV instead of simulated data");
  app->add_option("--reward-column", f.reward_column, "reward column name");
  app->add_option("--action-column", f.action_column, "action column name");
  app->add_option("--covariate-columns", f.covariate_columns, "comma separated covariate columns");
}

kcmc::RunConfig resolve(const std::string& command, const Flags& f) {
  kcmc::RunConfig c;
  if (!f.config.empty()) c = kcmc::load_config(f.config, c);
  c.command = command;
  auto set = [&](const char* key, const std::string& v) {
    if (!v.empty()) kcmc::apply_setting(c, key, v);
  };
  set("n", f.n);
  set("seeds", f.seeds);
  set("grid", f.grid);
  set("model", f.model);
  set("out", f.out);
  set("workers", f.workers);
  set("direction", f.direction);
  set("csv", f.csv);
  set("policy", f.policy);
  set("components", f.components);
  set("holdout", f.holdout);
  set("mc", f.mc);
  set("reward_column", f.reward_column);
  set("action_column", f.action_column);
  set("covariate_columns", f.covariate_columns);
  if (!f.specs.empty()) c.specs = f.specs;
  if (f.timings) c.timings = true;
  return c;
}

int cmd_simulate(const kcmc::RunConfig& c) {
  const auto data = kcmc::generate_synthetic(c.n, c.seeds.front());
  if (c.out.size() > 5 && c.out.substr(c.out.size() - 5) == ".json") {
    std::ofstream out(c.out);
    if (!out) throw kcmc::Error("cannot write '" + c.out + "'");
    out << kcmc::to_json(data).dump(2) << '\n';
  } else {
    kcmc::write_csv(c.out, data.obs);
  }
  std::printf("wrote %lld samples to %s\n", static_cast<long long>(data.size()), c.out.c_str());
  return 0;
}

int cmd_bounds(const kcmc::RunConfig& c) {
  const auto res = kcmc::run_bounds(c);
  kcmc::write_results_csv(c.out, res.rows);
  const auto summary = kcmc::replace_extension(c.out, ".summary.csv");
  kcmc::write_summary_csv(summary, res.rows);
  std::printf("wrote %zu rows to %s and %s\n", res.rows.size(), c.out.c_str(), summary.c_str());
  for (const auto& f : res.failures)
    std::fprintf(stderr, "failed: seed=%llu method=%s direction=%s param=%g: %s\n",
                 static_cast<unsigned long long>(f.seed), f.method.c_str(), f.direction.c_str(), f.sensitivity_param,
                 f.message.c_str());
  return res.failures.empty() ? 0 : 1;
}

int cmd_learn(const kcmc::RunConfig& c) {
  const auto runs = kcmc::run_learn(c);
  {
    std::ofstream out(c.out);
    if (!out) throw kcmc::Error("cannot write '" + c.out + "'");
    for (const auto& line : kcmc::trace_csv_lines(runs)) out << line << '\n';
  }
  const auto report = kcmc::replace_extension(c.out, ".json");
  std::ofstream(report) << kcmc::learn_report_json(c, runs).dump(2) << '\n';
  int failed = 0;
  for (const auto& r : runs) {
    if (!r.error.empty()) {
      std::fprintf(stderr, "failed: seed=%llu: %s\n", static_cast<unsigned long long>(r.seed), r.error.c_str());
      ++failed;
      continue;
    }
    std::printf("seed %llu: train %.6f  holdout %.6f", static_cast<unsigned long long>(r.seed),
                r.holdout.train_bound, r.holdout.test_bound);
    if (r.truth) std::printf("  truth %.6f", r.truth->value);
    std::printf("\n");
  }
  std::printf("wrote %s and %s\n", c.out.c_str(), report.c_str());
  return failed ? 1 : 0;
}

int cmd_selfcheck() {
  const auto results = kcmc::run_selfcheck();
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-28s max_error=%-12.3e tol=%-10.1e %s\n", r.name.c_str(), r.max_error, r.tolerance,
                r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confounding-robust bounds on policy values"};
  app.require_subcommand(1);
  Flags f;

  auto* simulate = app.add_subcommand("simulate", "write a synthetic observational dataset");
  add_common(simulate, f);

  auto* bounds = app.add_subcommand("bounds", "sweep bounds over a sensitivity grid");
  add_common(bounds, f);
  bounds->add_option("--grid", f.grid, "comma separated Gamma or budget values");
  bounds->add_option("--spec", f.specs, "constraint spec, repeatable: zsb, qb, kcmc:hard,D=100, kcmc:gp,D=100");
  bounds->add_option("--direction", f.direction, "lower, upper or both");
  bounds->add_option("--policy", f.policy, "evaluation policy name");
  bounds->add_flag("--timings", f.timings, "record wall-clock runtime per cell");

  auto* learn = app.add_subcommand("learn", "learn a mixture policy maximizing the lower bound");
  add_common(learn, f);
  learn->add_option("--spec", f.specs, "constraint spec");
  learn->add_option("--components", f.components, "comma separated component policies");
  learn->add_option("--holdout", f.holdout, "holdout fraction");
  learn->add_option("--mc", f.mc, "Monte Carlo draws for the true value");

  app.add_subcommand("selfcheck", "compare numerical kernels against brute-force references");

  CLI11_PARSE(app, argc, argv);
  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "selfcheck") return cmd_selfcheck();
    auto c = resolve(name, f);
    if (name == "simulate" && f.out.empty() && f.config.empty()) c.out = "data.csv";
    if (name == "learn" && f.out.empty() && f.config.empty()) c.out = "learn.csv";
    c.validate();
    if (name == "simulate") return cmd_simulate(c);
    if (name == "bounds") return cmd_bounds(c);
    return cmd_learn(c);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
