#pragma once

// Mixture-policy learning: maximize the lower bound over beta on the simplex.
// r(beta) is affine in beta, so the bound (a minimum of linear functions) is
// concave; each candidate beta is scored by a warm-started exact dual solve.

#include "kcmc/estimators.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace kcmc {

/// n x K matrix of per-component reward ratios pi_k(T|X)/p(T|X) Y.
inline Matrix component_rewards(const Observations& obs, const PropensityEstimate& prop,
                                const std::vector<Policy>& components) {
  Matrix R(obs.size(), static_cast<Index>(components.size()));
  for (std::size_t k = 0; k < components.size(); ++k)
    R.col(static_cast<Index>(k)) = policy_rewards(obs, prop, components[k]);
  return R;
}

struct PolicyGradient {
  Vector primal;  // mean(w~_i r_ik) at the recovered weights
  Vector dual;    // mean(s_i r_ik) with s_i the conjugate selection at the dual point
};

/// Supergradient of the lower bound in beta (Danskin), both routes.
inline PolicyGradient policy_gradient(const DualProblem& problem, const SolveReport& rep, const Matrix& R) {
  const double inv_n = 1.0 / static_cast<double>(R.rows());
  PolicyGradient g;
  g.primal = inv_n * (R.transpose() * rep.wtilde);
  Vector s = (recover_primal(problem, rep.dual).array() * problem.propensities().array()).matrix();
  if (problem.pure_box()) {
    // the dual leaves tied coordinates undetermined; take them from the recovery
    const Vector x = problem.to_internal(rep.dual.eta, rep.dual.nu, 0.0);
    const Vector v = problem.slack(x);
    for (Index i = 0; i < s.size(); ++i)
      if (std::abs(v[i]) <= 1e-9) s[i] = rep.wtilde[i];
  }
  g.dual = inv_n * (R.transpose() * s);
  return g;
}

struct LearnOptions {
  int max_iterations = 50;
  double armijo = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 30;
  double step_tolerance = 1e-10;
  SolverOptions solver;
};

struct LearnResult {
  Vector beta;
  SolveReport report;
  std::vector<double> trace;        // lower bound after each accepted step (first entry: start)
  std::vector<double> vertex_bounds;
  double bound = -kInf;
  bool converged = false;
};

inline LearnResult learn_mixture(const Observations& obs, const PropensityEstimate& prop,
                                 const SensitivityModel& model, const KcmcSpec& spec,
                                 const std::vector<Policy>& components, const LearnOptions& opt = {}) {
  const Index K = static_cast<Index>(components.size());
  if (K < 2) throw Error("mixture learning needs at least two components");
  const Matrix R = component_rewards(obs, prop, components);
  DualProblem problem(spec, model, prop.probabilities, R.col(0));

  const DualSolution* warm = nullptr;
  auto score = [&](const Vector& beta) {
    problem.set_rewards(R * beta);
    return solve_dual(problem, opt.solver, warm);
  };

  LearnResult out;
  Vector best_beta;
  SolveReport best;
  for (Index k = 0; k <= K; ++k) {
    const Vector beta = k < K ? Vector(Vector::Unit(K, k)) : Vector(Vector::Constant(K, 1.0 / static_cast<double>(K)));
    SolveReport rep = score(beta);
    if (k < K) out.vertex_bounds.push_back(rep.dual_value);
    if (best_beta.size() == 0 || rep.dual_value > best.dual_value) {
      best_beta = beta;
      best = std::move(rep);
    }
  }
  Vector beta = best_beta;
  SolveReport cur = std::move(best);
  out.trace.push_back(cur.dual_value);

  double step = 1.0;
  for (int it = 0; it < opt.max_iterations; ++it) {
    warm = &cur.dual;
    const Vector g = policy_gradient(problem, cur, R).primal;
    const double gscale = std::max(g.cwiseAbs().maxCoeff(), 1e-300);
    double t = std::min(step * 2.0, 1e6);
    bool accepted = false;
    for (int bt = 0; bt < opt.max_backtracks; ++bt) {
      const Vector cand = project_to_simplex(beta + (t / gscale) * g);
      const Vector delta = cand - beta;
      if (delta.cwiseAbs().maxCoeff() <= opt.step_tolerance) break;
      SolveReport rep = score(cand);
      if (rep.dual_value >= cur.dual_value + opt.armijo * g.dot(delta) && rep.dual_value >= cur.dual_value) {
        beta = cand;
        cur = std::move(rep);
        accepted = true;
        step = t;
        break;
      }
      t *= opt.shrink;
    }
    if (!accepted) {
      // no ascent along the projected supergradient arc: stationary to step resolution
      out.converged = true;
      break;
    }
    out.trace.push_back(cur.dual_value);
  }
  out.beta = beta;
  out.bound = cur.dual_value;
  out.report = std::move(cur);
  return out;
}

struct HoldoutReport {
  double train_bound = 0.0;
  double test_bound = 0.0;
  double overfit_gap = 0.0;  // train - test
  bool converged = false;
};

/// Lower bound of a fixed mixture on held-out data, with propensities and
/// kernel features refit on that split.
inline HoldoutReport evaluate_learned(const MixturePolicy& policy, const Observations& holdout,
                                      const SensitivityModel& model, const SpecRequest& spec, double train_bound,
                                      const SolverOptions& opt = {}) {
  const auto prop = zsb_rescale(fit_logistic_propensity(holdout), holdout);
  std::optional<KernelContext> ctx;
  if (spec.kind == SpecRequest::Kind::hard || spec.kind == SpecRequest::Kind::gp ||
      spec.kind == SpecRequest::Kind::gp_full)
    ctx = make_kernel_context(holdout, spec.D);
  const auto b = estimate_bound(spec, holdout, prop, policy.as_policy(), model, Direction::lower,
                                ctx ? &*ctx : nullptr, opt);
  HoldoutReport rep;
  rep.train_bound = train_bound;
  rep.test_bound = b.value;
  rep.overfit_gap = train_bound - b.value;
  rep.converged = b.converged;
  return rep;
}

inline nlohmann::json learned_policy_json(const std::vector<std::string>& component_names, const LearnResult& res,
                                          const HoldoutReport& holdout) {
  nlohmann::json j;
  j["components"] = component_names;
  j["beta"] = std::vector<double>(res.beta.data(), res.beta.data() + res.beta.size());
  j["train_bound"] = holdout.train_bound;
  j["test_bound"] = holdout.test_bound;
  j["trace"] = res.trace;
  j["vertex_bounds"] = res.vertex_bounds;
  return j;
}

}  // namespace kcmc
