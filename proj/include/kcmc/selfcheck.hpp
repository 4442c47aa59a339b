#pragma once

// Desk-scale oracle suite behind `kcmc selfcheck`.

#include "kcmc/dual.hpp"
#include "kcmc/kernels.hpp"
#include "kcmc/oracles.hpp"
#include "kcmc/policy.hpp"
#include "kcmc/rng.hpp"

#include <functional>
#include <string>
#include <vector>

namespace kcmc {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct SelfcheckHooks {
  /// Monotone conjugate under test; defaults to the shipped catalog.
  std::function<double(FKind, double)> conjugate = [](FKind k, double v) { return monotone_conjugate(k).value(v); };
};

/// A random hard-orthogonality instance with n samples and D features.
struct ToyInstance {
  KcmcSpec spec;
  Vector propensities;
  Vector rewards;
};

inline ToyInstance toy_instance(Index n, Index D, std::uint64_t seed) {
  auto rng = make_stream(seed, Stream::test);
  ToyInstance t;
  FeatureMatrix f;
  f.psi.resize(n, D);
  for (Index j = 0; j < D; ++j)
    for (Index i = 0; i < n; ++i) f.psi(i, j) = j == 0 ? 0.5 + rng.uniform() : rng.normal();
  t.spec = D > 0 ? build_hard_ortho(f) : KcmcSpec{};
  if (D == 0) t.spec.psi.psi.resize(n, 0);
  t.propensities.resize(n);
  t.rewards.resize(n);
  for (Index i = 0; i < n; ++i) {
    t.propensities[i] = 0.2 + 0.6 * rng.uniform();
    t.rewards[i] = rng.normal() + 0.5;
  }
  return t;
}

namespace detail {

/// v-grid on which the maximizing u of the conjugate lies inside [0, 40].
inline std::vector<double> conjugate_test_grid(FKind kind) {
  double lo = -3.0, hi = 0.0;
  switch (kind) {
    case FKind::kl: hi = 1.0 + std::log(40.0); break;
    case FKind::reverse_kl: lo = -3.0; hi = -1.0 / 40.0; break;
    case FKind::jensen_shannon: hi = 0.5 * std::log(2.0 * 40.0 / 41.0); break;
    case FKind::squared_hellinger: hi = 1.0 - 1.0 / std::sqrt(40.0); break;
    case FKind::pearson_chi2: lo = -5.0; hi = 2.0 * 39.0; break;
    case FKind::neyman_chi2: hi = -1.0 / (40.0 * 40.0); break;
    case FKind::total_variation: lo = -2.0; hi = 0.49; break;
  }
  std::vector<double> g;
  for (int k = 0; k <= 40; ++k) g.push_back(lo + (hi - lo) * k / 40.0);
  return g;
}

}  // namespace detail

inline CheckResult check_conjugate_grid(const SelfcheckHooks& hooks) {
  CheckResult c{"conjugate_grid", 0.0, 1e-3, true};
  for (FKind k : kAllFKinds)
    for (double v : detail::conjugate_test_grid(k))
      c.max_error = std::max(c.max_error, std::abs(hooks.conjugate(k, v) - oracle::conjugate_on_grid(k, v)));
  c.passed = c.max_error <= c.tolerance;
  return c;
}

inline CheckResult check_young_fenchel(const SelfcheckHooks& hooks) {
  CheckResult c{"young_fenchel", 0.0, 1e-9, true};
  for (FKind k : kAllFKinds)
    for (double u = 0.0; u <= 10.0; u += 0.125)
      for (double v : detail::conjugate_test_grid(k)) {
        const double slack = f_value(k, u) + hooks.conjugate(k, v) - u * v;
        if (std::isfinite(slack)) c.max_error = std::max(c.max_error, -slack);
      }
  c.passed = c.max_error <= c.tolerance;
  return c;
}

inline CheckResult check_f_at_one() {
  CheckResult c{"f_at_one", 0.0, 1e-12, true};
  for (FKind k : kAllFKinds) c.max_error = std::max(c.max_error, std::abs(f_value(k, 1.0)));
  c.passed = c.max_error <= c.tolerance;
  return c;
}

inline CheckResult check_chi2_quantile() {
  CheckResult c{"chi2_quantile", 0.0, 1e-6, true};
  for (int dof = 1; dof <= 10; ++dof)
    for (double level : {0.5, 0.9, 0.95, 0.99})
      c.max_error = std::max(c.max_error, std::abs(oracle::chi2_cdf_simpson(dof, chi2_quantile(dof, level)) - level));
  c.passed = c.max_error <= c.tolerance;
  return c;
}

inline CheckResult check_dual_gradient() {
  CheckResult c{"dual_gradient_fd", 0.0, 1e-5, true};
  auto rng = make_stream(11, Stream::test);
  for (FKind kind : {FKind::kl, FKind::pearson_chi2, FKind::squared_hellinger}) {
    for (int rep = 0; rep < 5; ++rep) {
      const auto inst = toy_instance(12, 2, 100 + static_cast<std::uint64_t>(rep));
      const DualProblem P(inst.spec, SensitivityModel::divergence(kind, 0.05), inst.propensities, inst.rewards);
      Vector x(3);
      x << 0.1 * rng.normal(), 0.1 * rng.normal(), 2.0 + rng.uniform();
      auto f = [&](const Vector& y) { return dual_objective_hard(P, y.head(2), y[2]).first; };
      const Vector g = dual_objective_hard(P, x.head(2), x[2]).second;
      const Vector fd = oracle::central_difference(f, x);
      c.max_error = std::max(c.max_error, (g - fd).norm() / std::max(1.0, fd.norm()));
    }
  }
  c.passed = c.max_error <= c.tolerance;
  return c;
}

inline CheckResult check_box_lp() {
  CheckResult c{"box_lp_vertex", 0.0, 1e-7, true};
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto inst = toy_instance(6, 2, 200 + s);
    const auto model = SensitivityModel::tan(1.5 + 0.25 * static_cast<double>(s));
    const DualProblem P(inst.spec, model, inst.propensities, inst.rewards);
    const auto rep = solve_dual(P);
    const auto wb = box_weight_bounds(*model.box, inst.propensities);
    const double lp = oracle::box_lp_vertex(inst.spec.psi.psi, inst.rewards, wb.lower, wb.upper);
    c.max_error = std::max(c.max_error, std::abs(rep.dual_value - lp) / (1.0 + std::abs(lp)));
  }
  c.passed = c.max_error <= c.tolerance;
  return c;
}

inline CheckResult check_kl_scalar() {
  CheckResult c{"kl_scalar_golden", 0.0, 1e-6, true};
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto inst = toy_instance(20, 0, 300 + s);
    const double gamma = 0.02 + 0.05 * static_cast<double>(s);
    const DualProblem P(inst.spec, SensitivityModel::divergence(FKind::kl, gamma), inst.propensities, inst.rewards);
    const auto rep = solve_dual(P);
    const Vector& r = inst.rewards;
    auto g = [&](double log_eta) {
      const double e = std::exp(log_eta);
      return -e * gamma - e * ((-r.array() / e - 1.0).exp()).mean();
    };
    const double best = g(oracle::golden_section_max(g, -12.0, 12.0));
    c.max_error = std::max(c.max_error, std::abs(rep.dual_value - best) / (1.0 + std::abs(best)));
  }
  c.passed = c.max_error <= c.tolerance;
  return c;
}

inline CheckResult check_simplex_projection() {
  CheckResult c{"simplex_projection", 0.0, 1e-12, true};
  auto rng = make_stream(17, Stream::test);
  for (int rep = 0; rep < 50; ++rep) {
    Vector v(5);
    for (Index k = 0; k < 5; ++k) v[k] = 2.0 * rng.normal();
    // threshold by bisection: sum max(v - t, 0) = 1
    double lo = v.minCoeff() - 1.0, hi = v.maxCoeff();
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      ((v.array() - mid).max(0.0).sum() > 1.0 ? lo : hi) = mid;
    }
    const Vector ref = (v.array() - 0.5 * (lo + hi)).max(0.0).matrix();
    c.max_error = std::max(c.max_error, (project_to_simplex(v) - ref).cwiseAbs().maxCoeff());
  }
  c.passed = c.max_error <= c.tolerance;
  return c;
}

inline CheckResult check_gp_spectral() {
  CheckResult c{"gp_spectral_identity", 0.0, 1e-8, true};
  auto rng = make_stream(23, Stream::test);
  const Index n = 12;
  Matrix X(n, 3);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < 3; ++j) X(i, j) = rng.normal();
  Matrix K(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) K(i, j) = std::exp(-0.5 * (X.row(i) - X.row(j)).squaredNorm());
  auto dec = truncated_eig(K, n);
  dec.sigma2 = 0.3;
  const auto full = gp_quadratic_full(K, 0.3);
  // the spectral form keeps only non-negligible directions; compare on their span
  const auto low = gp_quadratic_lowrank(dec);
  for (int rep = 0; rep < 10; ++rep) {
    Vector e(n);
    for (Index i = 0; i < n; ++i) e[i] = rng.normal();
    const double a = full.value(e), b = low.value(e);
    c.max_error = std::max(c.max_error, std::abs(a - b) / std::max(1e-300, std::abs(a)));
  }
  c.passed = c.max_error <= c.tolerance;
  return c;
}

inline std::vector<CheckResult> run_selfcheck(const SelfcheckHooks& hooks = {}) {
  return {check_conjugate_grid(hooks), check_young_fenchel(hooks), check_f_at_one(),     check_chi2_quantile(),
          check_dual_gradient(),       check_box_lp(),              check_kl_scalar(),     check_simplex_projection(),
          check_gp_spectral()};
}

}  // namespace kcmc
