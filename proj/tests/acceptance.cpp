// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on failure.

#include "kcmc/experiment.hpp"
#include "kcmc/oracles.hpp"
#include "kcmc/selfcheck.hpp"
#include "primal_oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace kcmc;

namespace {

// Tolerances and limits, one block per criterion.
constexpr double kCollapseTol = 1e-6;
constexpr double kCollapseSeconds = 10.0;
constexpr double kNestingTol = 1e-9;
constexpr double kStrictMargin = 1e-6;
constexpr double kSharpnessSeconds = 300.0;
constexpr double kMonotoneTol = 1e-7;
constexpr double kGridConjugateTol = 1e-3;
constexpr double kFAtOneTol = 1e-12;
constexpr double kFlatLevelTol = 1e-6;
constexpr double kCatalogSeconds = 30.0;
constexpr double kOracleRelTol = 1e-5;
constexpr double kGapRelTol = 1e-5;
constexpr double kCertifySeconds = 120.0;
constexpr double kGradientRelTol = 1e-4;
constexpr double kAugmentTol = 1e-9;
constexpr double kTrendSeconds = 900.0;
constexpr double kVertexTol = 1e-5;
constexpr double kHoldoutTol = 1e-6;

struct Outcome {
  bool passed = true;
  std::string detail;
};

double rel(double a, double b) { return std::abs(a - b) / (1.0 + std::abs(b)); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct Prepared {
  LoggedDataset data;
  PropensityEstimate raw;
  PropensityEstimate prop;
};

Prepared prepare(Index n, std::uint64_t seed) {
  Prepared p;
  p.data = generate_synthetic(n, seed);
  p.raw = fit_logistic_propensity(p.data.obs);
  p.prop = zsb_rescale(p.raw, p.data.obs);
  return p;
}

// 1. Gamma = 1 collapses every method onto the Hajek estimate.
Outcome unconfounded_collapse() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = prepare(500, 0);
  const auto pol = policies::nominal();
  const double hajek = hajek_estimate(p.data.obs, p.raw, pol);
  const auto ctx = make_kernel_context(p.data.obs, 100);
  const auto model = SensitivityModel::tan(1.0);
  double worst = 0.0;
  bool ok = true;
  for (const char* s : {"zsb", "kcmc:hard,D=100", "kcmc:gp,D=100,alpha=0.05", "qb"}) {
    for (Direction d : {Direction::lower, Direction::upper}) {
      const auto b = estimate_bound(parse_spec_request(s), p.data.obs, p.prop, pol, model, d, &ctx);
      worst = std::max(worst, std::abs(b.value - hajek));
      ok = ok && b.converged;
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {ok && worst <= kCollapseTol && secs < kCollapseSeconds,
          fmt("max |bound - hajek| = %.2e, %.1f s", worst, secs)};
}

// 2. Hard KCMC and QB are at least as sharp as ZSB.
Outcome sharpness_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig c;
  c.n = 500;
  c.grid = {1.5};
  c.direction = "lower";
  const auto res = run_bounds(c);
  std::map<std::uint64_t, std::map<std::string, double>> by_seed;
  for (const auto& r : res.rows) by_seed[r.seed][r.method] = r.value;
  int nested = 0, strict = 0, qb = 0;
  for (const auto& [seed, m] : by_seed) {
    const double zsb = m.at("zsb");
    nested += m.at("kcmc_hard") >= zsb - kNestingTol;
    strict += m.at("kcmc_hard") > zsb + kStrictMargin;
    qb += m.at("qb") >= zsb - kNestingTol;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream s;
  s << "hard>=zsb " << nested << "/10, hard>zsb " << strict << "/10, qb>=zsb " << qb << "/10, failures "
    << res.failures.size() << ", " << fmt("%.0f s", secs);
  return {res.failures.empty() && nested == 10 && strict >= 9 && qb >= 9 && secs < kSharpnessSeconds, s.str()};
}

// 3. Bounds widen along the sensitivity grids.
Outcome monotone_sweeps() {
  int violations = 0, failures = 0;
  for (const auto& [model, specs] :
       std::vector<std::pair<std::string, std::vector<std::string>>>{
           {"box:GAMMA=1", {"zsb", "qb", "kcmc:hard,D=100", "kcmc:gp,D=100,alpha=0.05"}},
           {"f:KIND=kl,GAMMA_BUDGET=0", {"zsb", "kcmc:hard,D=100", "kcmc:gp,D=100,alpha=0.05"}}}) {
    RunConfig c;
    c.n = 500;
    c.model = model;
    c.specs = specs;
    const auto res = run_bounds(c);
    failures += static_cast<int>(res.failures.size());
    std::map<std::tuple<std::uint64_t, std::string, Direction>, std::vector<std::pair<double, double>>> series;
    for (const auto& r : res.rows) series[{r.seed, r.method, r.direction}].push_back({r.sensitivity_param, r.value});
    for (auto& [key, pts] : series) {
      std::sort(pts.begin(), pts.end());
      const double sign = std::get<2>(key) == Direction::lower ? 1.0 : -1.0;
      for (std::size_t k = 1; k < pts.size(); ++k)
        if (!(sign * pts[k].second <= sign * pts[k - 1].second + kMonotoneTol)) ++violations;
    }
  }
  return {violations == 0 && failures == 0,
          fmt("%.0f monotonicity violations, %.0f failed cells", violations, failures)};
}

// 4. Conjugate catalog against brute force.
Outcome conjugate_catalog() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = check_conjugate_grid({});
  const auto at_one = check_f_at_one();
  double flat = 0.0;
  for (FKind k : kAllFKinds) {
    const auto conj = monotone_conjugate(k);
    if (!std::isfinite(conj.flat_value())) continue;
    if (std::isfinite(conj.flat_point())) {
      for (double off : {1e-3, 0.5, 3.0, 20.0}) {
        const double v = conj.flat_point() - off;
        flat = std::max(flat, std::abs(conj.value(v) - oracle::conjugate_on_grid(k, v)));
      }
    } else {
      // no flat region: the level is the limit toward -inf, attained at u = 0
      const double v = -1e9;
      flat = std::max(flat, std::abs(conj.value(v) - oracle::conjugate_on_grid(k, v)));
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {grid.max_error <= kGridConjugateTol && at_one.max_error <= kFAtOneTol && flat <= kFlatLevelTol &&
              secs < kCatalogSeconds,
          fmt("grid %.2e, f(1) %.1e, flat %.2e", grid.max_error, at_one.max_error, flat) + fmt(", %.1f s", secs)};
}

// 5. Dual values against primal references on small instances.
Outcome dual_certification() {
  const auto t0 = std::chrono::steady_clock::now();
  auto rng = make_stream(5, Stream::test);
  double worst_rel = 0.0, worst_gap = 0.0;
  int unconverged = 0;
  for (int k = 0; k < 50; ++k) {
    const Index n = 5 + static_cast<Index>(rng.uniform() * 4.0);
    const Index D = 1 + static_cast<Index>(rng.uniform() * 2.0);
    const auto inst = toy_instance(n, D, 5000 + static_cast<std::uint64_t>(k));
    SolveReport rep;
    double ref = 0.0;
    if (k < 20) {
      const auto model = SensitivityModel::tan(1.2 + 2.0 * rng.uniform());
      rep = solve_dual(DualProblem(inst.spec, model, inst.propensities, inst.rewards));
      const auto wb = box_weight_bounds(*model.box, inst.propensities);
      ref = oracle::box_lp_vertex(inst.spec.psi.psi, inst.rewards, wb.lower, wb.upper);
    } else if (k < 35) {
      const auto model = SensitivityModel::divergence(FKind::kl, 0.02 + 0.2 * rng.uniform());
      rep = solve_dual(DualProblem(inst.spec, model, inst.propensities, inst.rewards));
      ref = testing::primal_oracle(inst.spec, model, inst.propensities, inst.rewards);
    } else {
      Vector x(n);
      for (Index i = 0; i < n; ++i) x[i] = rng.normal();
      Matrix K(n, n);
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) K(i, j) = std::exp(-0.5 * (x[i] - x[j]) * (x[i] - x[j]));
      auto dec = truncated_eig(K, n);
      dec.sigma2 = 0.05 + 0.3 * rng.uniform();
      const double alpha = std::array<double, 3>{0.05, 0.5, 0.95}[static_cast<std::size_t>(k % 3)];
      const auto spec = build_gp_soft(gp_quadratic_lowrank(dec), alpha, false, inst.spec.psi);
      const auto model = k % 2 ? SensitivityModel::tan(1.5 + rng.uniform())
                               : SensitivityModel::divergence(FKind::kl, 0.02 + 0.1 * rng.uniform());
      rep = solve_dual(DualProblem(spec, model, inst.propensities, inst.rewards));
      ref = testing::primal_oracle(spec, model, inst.propensities, inst.rewards);
    }
    worst_rel = std::max(worst_rel, rel(rep.dual_value, ref));
    worst_gap = std::max(worst_gap, std::abs(rep.gap) / (1.0 + std::abs(rep.dual_value)));
    unconverged += !rep.converged;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst_rel <= kOracleRelTol && worst_gap <= kGapRelTol && unconverged == 0 && secs < kCertifySeconds,
          fmt("max rel err %.2e, max rel gap %.2e, ", worst_rel, worst_gap) +
              fmt("%.0f unconverged, %.1f s", unconverged, secs)};
}

// 6. Analytic gradients against central differences.
Outcome gradient_checks() {
  auto rng = make_stream(6, Stream::test);
  const std::array<FKind, 3> kinds{FKind::kl, FKind::pearson_chi2, FKind::squared_hellinger};
  double dual_err = 0.0;
  for (FKind kind : kinds) {
    for (int k = 0; k < 20; ++k) {
      const auto inst = toy_instance(15, 3, 6000 + static_cast<std::uint64_t>(k));
      const DualProblem P(inst.spec, SensitivityModel::divergence(kind, 0.1), inst.propensities, inst.rewards);
      Vector x(4);
      x << 0.3 * rng.normal(), 0.3 * rng.normal(), 0.3 * rng.normal(), 1.0 + 3.0 * rng.uniform();
      const Vector g = dual_objective_hard(P, x.head(3), x[3]).second;
      const Vector fd = oracle::central_difference(
          [&](const Vector& y) { return dual_objective_hard(P, y.head(3), y[3]).first; }, x);
      dual_err = std::max(dual_err, (g - fd).norm() / std::max(1.0, fd.norm()));
    }
  }
  const auto p = prepare(150, 60);
  const auto spec = build_zsb(p.data.obs, p.prop);
  const Matrix R =
      component_rewards(p.data.obs, p.prop, {policies::always(0), policies::always(1), policies::nominal()});
  double policy_err = 0.0;
  for (int k = 0; k < 20; ++k) {
    const auto model = SensitivityModel::divergence(kinds[static_cast<std::size_t>(k % 3)], 0.02 + 0.1 * rng.uniform());
    Vector beta(3);
    for (Index j = 0; j < 3; ++j) beta[j] = 0.1 + rng.uniform();
    beta /= beta.sum();
    const DualProblem P(spec, model, p.prop.probabilities, R * beta);
    const auto rep = solve_dual(P);
    const auto g = policy_gradient(P, rep, R);
    const Vector fd = oracle::central_difference(
        [&](const Vector& b) { return solve_dual(DualProblem(spec, model, p.prop.probabilities, R * b)).dual_value; },
        beta);
    const double scale = std::max(1.0, fd.norm());
    policy_err = std::max({policy_err, (g.primal - fd).norm() / scale, (g.dual - fd).norm() / scale});
  }
  return {dual_err <= kGradientRelTol && policy_err <= kGradientRelTol,
          fmt("dual max rel err %.2e, policy max rel err %.2e", dual_err, policy_err)};
}

// 7. QB is the hard spec on its single column; more columns never loosen it.
Outcome qb_equivalence() {
  const auto p = prepare(500, 7);
  const auto& obs = p.data.obs;
  const auto pol = policies::nominal();
  const BoxModel box{1.5};
  const SensitivityModel model{box, std::nullopt};
  bool same = true;
  double worst = 0.0;
  auto rng = make_stream(7, Stream::test);
  const auto ctx = make_kernel_context(obs, 20);
  const FeatureMatrix kpca = kpca_features(leading(ctx.spectrum, 20));
  const FeatureMatrix zsb = zsb_features(obs, p.prop);
  for (Direction d : {Direction::lower, Direction::upper}) {
    const FeatureMatrix col = qb_feature_for(obs, p.prop, pol, box, d);
    const double qb = qb_bound(obs, p.prop, pol, box, d, false).value;
    same = same && qb == kcmc_bound(obs, p.prop, pol, model, build_hard_ortho(col), d).value;
    const double sign = d == Direction::lower ? 1.0 : -1.0;
    for (int k = 0; k < 10; ++k) {
      FeatureMatrix extra;
      extra.psi.resize(obs.size(), 0);
      const int kind = k % 3;
      if (kind == 0) {
        extra.psi = Matrix(obs.size(), 1 + k % 4);
        for (Index i = 0; i < extra.psi.rows(); ++i)
          for (Index j = 0; j < extra.psi.cols(); ++j) extra.psi(i, j) = rng.normal();
      } else if (kind == 1) {
        extra.psi = kpca.psi.leftCols(2 + 2 * k);
      } else {
        extra = zsb;
      }
      const FeatureMatrix aug = prune_dependent(concat(col, extra));
      const double v = kcmc_bound(obs, p.prop, pol, model, build_hard_ortho(aug), d).value;
      worst = std::max(worst, sign * (qb - v));
    }
  }
  return {same && worst <= kAugmentTol,
          std::string(same ? "qb == hard on its column" : "qb differs from hard on its column") +
              fmt(", worst loosening %.2e over 20 augmentations", worst)};
}

// 8. Hard KCMC approaches the sharp bound as n grows.
Outcome consistency_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto pol = policies::nominal();
  const BoxModel box{1.5};
  const auto req = parse_spec_request("kcmc:hard,D=64");
  std::vector<double> med;
  std::string detail = "median errors";
  for (Index n : {250, 500, 1000, 2000}) {
    std::vector<double> err;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto p = prepare(n, seed);
      const auto ctx = make_kernel_context(p.data.obs, 64);
      const auto b = estimate_bound(req, p.data.obs, p.prop, pol, SensitivityModel{box, std::nullopt},
                                    Direction::lower, &ctx);
      err.push_back(b.converged ? std::abs(b.value - cmc_oracle_box(p.data, pol, box, Direction::lower)) : kInf);
    }
    med.push_back(median(err));
    detail += fmt(" %.4f", med.back());
  }
  bool ok = med.back() <= 0.5 * med.front();
  for (std::size_t k = 1; k < med.size(); ++k) ok = ok && med[k] <= med[k - 1];
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {ok && secs < kTrendSeconds, detail + fmt(" (n = 250..2000), %.0f s", secs)};
}

// 9. Mixture learning climbs, beats the vertices, and overfits in sign.
Outcome policy_learning() {
  RunConfig c;
  c.command = "learn";
  c.n = 500;
  c.specs = {"kcmc:hard,D=100"};
  c.mc = 1000;
  const auto runs = run_learn(c);
  int monotone = 0, above = 0, holdout_below = 0, errors = 0;
  for (const auto& r : runs) {
    if (!r.error.empty()) {
      ++errors;
      continue;
    }
    const auto& tr = r.result.trace;
    monotone += std::is_sorted(tr.begin(), tr.end());
    bool ok = true;
    for (double v : r.result.vertex_bounds) ok = ok && r.result.bound >= v - kVertexTol;
    above += ok;
    holdout_below += r.holdout.test_bound <= r.holdout.train_bound + kHoldoutTol;
  }
  std::ostringstream s;
  s << "monotone " << monotone << "/10, above vertices " << above << "/10, holdout <= train " << holdout_below
    << "/10, errors " << errors;
  return {errors == 0 && monotone == 10 && above == 10 && holdout_below >= 8, s.str()};
}

// 10. Serial and parallel runs write the same bytes.
Outcome determinism() {
  RunConfig c;
  c.n = 300;
  c.seeds = {0, 1, 2, 3};
  c.grid = {1.0, 2.0};
  const auto dir = std::filesystem::temp_directory_path() / "kcmc_acceptance";
  std::filesystem::create_directories(dir);
  auto run = [&](int workers) {
    c.workers = workers;
    const auto path = dir / ("w" + std::to_string(workers) + ".csv");
    write_results_csv(path.string(), run_bounds(c).rows);
    std::ifstream in(path);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  };
  const std::string serial = run(1);
  const std::string parallel = run(4);
  return {serial == parallel && !serial.empty(),
          serial == parallel ? fmt("%.0f bytes identical", static_cast<double>(serial.size())) : "tables differ"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"unconfounded collapse", unconfounded_collapse},
      {"sharpness ordering", sharpness_ordering},
      {"monotone sweeps", monotone_sweeps},
      {"conjugate catalog", conjugate_catalog},
      {"dual certification", dual_certification},
      {"gradient checks", gradient_checks},
      {"qb equivalence", qb_equivalence},
      {"consistency trend", consistency_trend},
      {"policy learning", policy_learning},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %2zu %-22s %s  %s\n", k + 1, criteria[k].first.c_str(), o.passed ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
    failed += !o.passed;
  }
  return failed ? 1 : 0;
}
