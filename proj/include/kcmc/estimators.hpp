#pragma once

#include "kcmc/constraints.hpp"
#include "kcmc/dual.hpp"
#include "kcmc/synthetic.hpp"

#include <chrono>
#include <optional>
#include <string>

namespace kcmc {

struct BoundEstimate {
  double value = 0.0;
  Direction direction = Direction::lower;
  std::string method;
  Vector weights;  // w_i, with w~_i = p_i w_i
  double gap = 0.0;
  std::string model;
  std::string spec;
  bool converged = false;
  std::string message;
  SolveReport report;
};

/// (1/n) sum pi(T|X)/p(T|X) Y.
inline double ipw_estimate(const Observations& obs, const PropensityEstimate& prop, const Policy& policy) {
  return mean(policy_rewards(obs, prop, policy));
}

/// IPW with each action's inverse-propensity mass normalized to one.
inline double hajek_estimate(const Observations& obs, const PropensityEstimate& prop, const Policy& policy) {
  const Vector r = policy_rewards(obs, prop, policy);
  Vector num = Vector::Zero(obs.num_actions);
  Vector den = Vector::Zero(obs.num_actions);
  for (Index i = 0; i < obs.size(); ++i) {
    const int t = obs.actions[static_cast<std::size_t>(i)];
    num[t] += r[i];
    den[t] += 1.0 / prop.probabilities[i];
  }
  double v = 0.0;
  for (int t = 0; t < obs.num_actions; ++t)
    if (den[t] > 0.0) v += num[t] / den[t];
  return v;
}

/// Solves the dual for one direction; the upper bound is -lower(-r).
inline BoundEstimate bound_from_spec(const Observations& obs, const PropensityEstimate& prop, const Policy& policy,
                                     const SensitivityModel& model, const KcmcSpec& spec, Direction direction,
                                     const std::string& method, const SolverOptions& opt = {}) {
  Vector r = policy_rewards(obs, prop, policy);
  if (direction == Direction::upper) r = -r;
  const DualProblem problem(spec, model, prop.probabilities, r);
  BoundEstimate b;
  b.report = solve_dual(problem, opt);
  b.direction = direction;
  b.method = method;
  b.model = model.description();
  b.spec = spec.description;
  b.value = direction == Direction::lower ? b.report.dual_value : -b.report.dual_value;
  b.gap = b.report.gap;
  b.weights = b.report.weights;
  b.converged = b.report.converged;
  b.message = b.report.message;
  return b;
}

inline BoundEstimate zsb_bound(const Observations& obs, const PropensityEstimate& prop, const Policy& policy,
                               const SensitivityModel& model, Direction direction, const SolverOptions& opt = {}) {
  return bound_from_spec(obs, prop, policy, model, build_zsb(obs, prop), direction, "zsb", opt);
}

inline BoundEstimate kcmc_bound(const Observations& obs, const PropensityEstimate& prop, const Policy& policy,
                                const SensitivityModel& model, const KcmcSpec& spec, Direction direction,
                                const SolverOptions& opt = {}) {
  std::string method = "kcmc_hard";
  if (spec.variant == SpecVariant::gp_soft_lowrank) method = "kcmc_gp";
  else if (spec.variant == SpecVariant::gp_soft_full) method = "kcmc_gp_full";
  else if (spec.variant == SpecVariant::zsb) method = "zsb";
  return bound_from_spec(obs, prop, policy, model, spec, direction, method, opt);
}

/// Single quantile-balancing column for the given direction; the upper bound
/// balances the (1 - tau)-quantile.
inline FeatureMatrix qb_feature_for(const Observations& obs, const PropensityEstimate& prop, const Policy& policy,
                                    const BoxModel& model, Direction direction) {
  const double tau = qb_quantile_level(model);
  return qb_feature(obs, prop, policy, direction == Direction::lower ? tau : 1.0 - tau);
}

inline KcmcSpec qb_spec(const Observations& obs, const PropensityEstimate& prop, const Policy& policy,
                        const BoxModel& model, Direction direction, bool with_zsb) {
  FeatureMatrix f = qb_feature_for(obs, prop, policy, model, direction);
  if (with_zsb) f = prune_dependent(concat(f, zsb_features(obs, prop)));
  KcmcSpec s = build_hard_ortho(f);
  s.description = with_zsb ? "qb+zsb" : "qb";
  return s;
}

inline BoundEstimate qb_bound(const Observations& obs, const PropensityEstimate& prop, const Policy& policy,
                              const BoxModel& model, Direction direction, bool with_zsb = true,
                              const SolverOptions& opt = {}) {
  const SensitivityModel m{model, std::nullopt};
  return bound_from_spec(obs, prop, policy, m, qb_spec(obs, prop, policy, model, direction, with_zsb), direction,
                         "qb", opt);
}

/// Sharp box bound with the true conditional quantiles and propensities of
/// the simulator: w~ = b below the tau-quantile of Y | T, X, a above.
inline double cmc_oracle_box(const LoggedDataset& data, const Policy& policy, const BoxModel& model,
                             Direction direction, const SyntheticParams& prm = {}) {
  if (!data.truth) throw Error("the sharp oracle needs simulator ground truth");
  const SyntheticModel sim(prm);
  const auto& obs = data.obs;
  const double tau = tan_quantile_level(model.gamma_odds);
  double total = 0.0;
  for (Index i = 0; i < obs.size(); ++i) {
    const int t = obs.actions[static_cast<std::size_t>(i)];
    const Vector x = obs.covariates.row(i).transpose();
    const double p = sim.observational_propensity(t, x);
    const auto tb = tan_bounds(model.gamma_odds, p);
    const double y = obs.rewards[i];
    double wt = 1.0;
    if (model.gamma_odds > 1.0) {
      if (direction == Direction::lower) wt = y <= sim.conditional_quantile(tau, t, x) ? tb.b_wtilde : tb.a_wtilde;
      else wt = y >= sim.conditional_quantile(1.0 - tau, t, x) ? tb.b_wtilde : tb.a_wtilde;
    }
    total += wt * policy(t, x) / p * y;
  }
  return total / static_cast<double>(obs.size());
}

// ---------------------------------------------------------------------------
// Constraint-spec requests: `kcmc:hard,D=100`, `kcmc:gp,D=100,alpha=0.05`,
// `kcmc:gpfull,alpha=0.05`, `zsb`, `qb`. Options `zsb=0|1` toggle the ZSB columns.

struct SpecRequest {
  enum class Kind { hard, gp, gp_full, zsb, qb };
  Kind kind = Kind::hard;
  Index D = 100;
  double alpha = 0.05;
  bool with_zsb = true;
  std::string text = "kcmc:hard,D=100";

  std::string method() const {
    switch (kind) {
      case Kind::hard: return "kcmc_hard";
      case Kind::gp: return "kcmc_gp";
      case Kind::gp_full: return "kcmc_gp_full";
      case Kind::zsb: return "zsb";
      case Kind::qb: return "qb";
    }
    return "?";
  }
};

inline SpecRequest parse_spec_request(const std::string& text) {
  SpecRequest r;
  r.text = text;
  std::string head = text;
  std::string args;
  if (const auto comma = text.find(','); comma != std::string::npos) {
    head = text.substr(0, comma);
    args = text.substr(comma + 1);
  }
  if (head == "zsb") r.kind = SpecRequest::Kind::zsb;
  else if (head == "qb") r.kind = SpecRequest::Kind::qb;
  else if (head == "kcmc:hard") r.kind = SpecRequest::Kind::hard;
  else if (head == "kcmc:gp") r.kind = SpecRequest::Kind::gp;
  else if (head == "kcmc:gpfull") r.kind = SpecRequest::Kind::gp_full;
  else throw Error("unknown constraint spec '" + text + "'");
  std::istringstream in(args);
  std::string kv;
  while (std::getline(in, kv, ',')) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("spec argument '" + kv + "' lacks '='");
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    if (key == "D") {
      const double d = detail::parse_real(val, key);
      if (!(d >= 1.0) || d != std::floor(d)) throw Error("spec rank D must be a positive integer");
      r.D = static_cast<Index>(d);
    } else if (key == "alpha") {
      r.alpha = detail::parse_real(val, key);
      if (!(r.alpha > 0.0 && r.alpha < 1.0)) throw Error("alpha must lie in (0,1)");
    } else if (key == "zsb") {
      r.with_zsb = val != "0" && val != "false";
    } else {
      throw Error("unknown spec argument '" + key + "'");
    }
  }
  return r;
}

/// Kernel quantities for one dataset, shared across models and directions.
struct KernelContext {
  KernelSpec kernel;
  Matrix gram;
  SpectralDecomposition spectrum;  // top max_rank eigenpairs
};

inline KernelContext make_kernel_context(const Observations& obs, Index max_rank, const EigenOptions& eig = {}) {
  KernelContext ctx;
  ctx.kernel.lengthscale = median_heuristic(obs);
  ctx.gram = gram_matrix(ctx.kernel, obs);
  ctx.spectrum = truncated_eig(ctx.gram, std::min(max_rank, obs.size()), eig);
  ctx.spectrum.kernel = ctx.kernel;
  return ctx;
}

inline SpectralDecomposition leading(const SpectralDecomposition& s, Index D) {
  if (D > s.rank()) throw Error("requested rank exceeds the cached spectrum");
  SpectralDecomposition out = s;
  out.eigenvalues = s.eigenvalues.head(D);
  out.eigenvectors = s.eigenvectors.leftCols(D);
  out.tail_mass = s.trace > 0.0 ? std::max(0.0, 1.0 - out.eigenvalues.sum() / s.trace) : 0.0;
  return out;
}

/// KPCA(D), optionally with the ZSB columns appended and dependent columns pruned.
inline FeatureMatrix default_hard_features(const Observations& obs, const PropensityEstimate& prop,
                                           const KernelContext& ctx, Index D, bool with_zsb) {
  if (D >= obs.size())
    throw Error("hard orthogonality with D >= n leaves no freedom: the feasible set collapses to the IPW weights");
  FeatureMatrix f = kpca_features(leading(ctx.spectrum, D));
  if (with_zsb) f = concat(f, zsb_features(obs, prop));
  return prune_dependent(f);
}

inline KcmcSpec build_spec(const SpecRequest& req, const Observations& obs, const PropensityEstimate& prop,
                           const Policy& policy, const SensitivityModel& model, Direction direction,
                           const KernelContext* ctx) {
  auto need_ctx = [&]() -> const KernelContext& {
    if (!ctx) throw Error("spec '" + req.text + "' needs a kernel context");
    return *ctx;
  };
  switch (req.kind) {
    case SpecRequest::Kind::zsb: return build_zsb(obs, prop);
    case SpecRequest::Kind::qb: {
      if (!model.box || model.fdiv) throw Error("quantile balancing needs a pure box model");
      return qb_spec(obs, prop, policy, *model.box, direction, req.with_zsb);
    }
    case SpecRequest::Kind::hard: {
      KcmcSpec s = build_hard_ortho(default_hard_features(obs, prop, need_ctx(), req.D, req.with_zsb));
      s.description = req.text;
      return s;
    }
    case SpecRequest::Kind::gp:
    case SpecRequest::Kind::gp_full: {
      const auto& c = need_ctx();
      const double s2 = default_sigma2(model, prop).value;
      const FeatureMatrix hard = req.with_zsb ? zsb_features(obs, prop) : FeatureMatrix{};
      KcmcSpec s;
      if (req.kind == SpecRequest::Kind::gp) {
        SpectralDecomposition dec = leading(c.spectrum, std::min(req.D, c.spectrum.rank()));
        dec.sigma2 = s2;
        s = build_gp_soft(gp_quadratic_lowrank(dec), req.alpha, false, hard);
      } else {
        s = build_gp_soft(gp_quadratic_full(c.gram, s2), req.alpha, true, hard);
      }
      s.description = req.text;
      return s;
    }
  }
  throw Error("unhandled spec kind");
}

inline BoundEstimate estimate_bound(const SpecRequest& req, const Observations& obs, const PropensityEstimate& prop,
                                    const Policy& policy, const SensitivityModel& model, Direction direction,
                                    const KernelContext* ctx, const SolverOptions& opt = {}) {
  const KcmcSpec spec = build_spec(req, obs, prop, policy, model, direction, ctx);
  return bound_from_spec(obs, prop, policy, model, spec, direction, req.method(), opt);
}

}  // namespace kcmc
