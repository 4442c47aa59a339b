#pragma once

#include "kcmc/data.hpp"
#include "kcmc/policy.hpp"

#include <cmath>
#include <string>

namespace kcmc {

struct PropensityEstimate {
  Vector probabilities;              // p_obs(T_i | X_i)
  Matrix per_action_probabilities;   // n x |T|
  Vector coefficients;               // logistic weights, intercept first
  Vector rescale_factors;            // cumulative per-action ZSB factors

  Index size() const { return probabilities.size(); }

  /// Wraps externally known per-action probabilities (rows summing to one).
  static PropensityEstimate from_per_action(const Observations& obs, Matrix per_action) {
    if (per_action.rows() != obs.size() || per_action.cols() != obs.num_actions)
      throw Error("per-action probability matrix has the wrong shape");
    PropensityEstimate p;
    p.per_action_probabilities = std::move(per_action);
    p.probabilities.resize(obs.size());
    for (Index i = 0; i < obs.size(); ++i)
      p.probabilities[i] = p.per_action_probabilities(i, obs.actions[static_cast<std::size_t>(i)]);
    if ((p.probabilities.array() <= 0.0).any()) throw Error("propensities must be positive");
    p.rescale_factors = Vector::Ones(obs.num_actions);
    return p;
  }
};

struct LogisticOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;
  double clip = 1e-6;
  double divergence_limit = 30.0;
};

/// Main-effects logistic regression of T on X by damped Newton iterations.
inline PropensityEstimate fit_logistic_propensity(const Observations& obs, const LogisticOptions& opt = {}) {
  obs.validate();
  if (obs.num_actions != 2) throw Error("logistic propensity model requires binary actions");
  const Index n = obs.size();
  const Index p = obs.dim();
  Matrix z(n, p + 1);
  z.col(0).setOnes();
  z.rightCols(p) = obs.covariates;
  Vector t(n);
  for (Index i = 0; i < n; ++i) t[i] = obs.actions[static_cast<std::size_t>(i)];

  auto loglik = [&](const Vector& beta) {
    const Vector eta = z * beta;
    double ll = 0.0;
    for (Index i = 0; i < n; ++i) {
      // log(1 + exp(eta)) computed stably
      const double sp = eta[i] > 0 ? eta[i] + std::log1p(std::exp(-eta[i])) : std::log1p(std::exp(eta[i]));
      ll += t[i] * eta[i] - sp;
    }
    return ll / static_cast<double>(n);
  };

  Vector beta = Vector::Zero(p + 1);
  double ll = loglik(beta);
  bool converged = false;
  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    const Vector eta = z * beta;
    Vector prob(n);
    for (Index i = 0; i < n; ++i) prob[i] = sigmoid(eta[i]);
    const Vector grad = z.transpose() * (t - prob) / static_cast<double>(n);
    if (grad.norm() <= opt.gradient_tolerance) {
      converged = true;
      break;
    }
    const Vector w = (prob.array() * (1.0 - prob.array())).matrix();
    const Matrix hess = z.transpose() * w.asDiagonal() * z / static_cast<double>(n);
    Eigen::LLT<Matrix> llt(hess);
    if (llt.info() != Eigen::Success || hess.diagonal().minCoeff() <= 1e-300)
      throw Error("singular Hessian in logistic propensity fit (collinear covariates?)");
    const Vector step = llt.solve(grad);
    double scale = 1.0;
    Vector candidate = beta + step;
    double cand_ll = loglik(candidate);
    while (cand_ll < ll - 1e-15 && scale > 1e-10) {
      scale *= 0.5;
      candidate = beta + scale * step;
      cand_ll = loglik(candidate);
    }
    beta = candidate;
    ll = cand_ll;
    if (beta.cwiseAbs().maxCoeff() > opt.divergence_limit)
      throw Error("logistic propensity fit diverges (coefficient magnitude above " +
                  std::to_string(opt.divergence_limit) +
                  "); the actions look separable in X, use a regularized propensity model");
  }
  if (!converged) {
    const Vector eta = z * beta;
    Vector prob(n);
    for (Index i = 0; i < n; ++i) prob[i] = sigmoid(eta[i]);
    if ((z.transpose() * (t - prob) / static_cast<double>(n)).norm() > 1e-6)
      throw Error("logistic propensity fit did not converge");
  }

  PropensityEstimate est;
  est.coefficients = beta;
  est.per_action_probabilities.resize(n, 2);
  est.probabilities.resize(n);
  const Vector eta = z * beta;
  for (Index i = 0; i < n; ++i) {
    const double p1 = std::clamp(sigmoid(eta[i]), opt.clip, 1.0 - opt.clip);
    est.per_action_probabilities(i, 0) = 1.0 - p1;
    est.per_action_probabilities(i, 1) = p1;
    est.probabilities[i] = obs.actions[static_cast<std::size_t>(i)] == 1 ? p1 : 1.0 - p1;
  }
  est.rescale_factors = Vector::Ones(2);
  return est;
}

/// Multiplies p(t|X_i) by (1/n) sum_i 1{T_i=t}/p(T_i|X_i) so that the inverse
/// propensity mass of every action averages to one.
inline PropensityEstimate zsb_rescale(const PropensityEstimate& prop, const Observations& obs) {
  const Index n = obs.size();
  if (prop.size() != n) throw Error("propensity estimate does not match the dataset");
  if ((prop.probabilities.array() <= 0.0).any()) throw Error("propensities must be positive");
  Vector factors = Vector::Zero(obs.num_actions);
  for (Index i = 0; i < n; ++i)
    factors[obs.actions[static_cast<std::size_t>(i)]] += 1.0 / prop.probabilities[i];
  factors /= static_cast<double>(n);
  for (int t = 0; t < obs.num_actions; ++t)
    if (factors[t] == 0.0) throw Error("action " + std::to_string(t) + " does not occur in the sample");
  PropensityEstimate out = prop;
  for (int t = 0; t < obs.num_actions; ++t) out.per_action_probabilities.col(t) *= factors[t];
  for (Index i = 0; i < n; ++i) out.probabilities[i] *= factors[obs.actions[static_cast<std::size_t>(i)]];
  out.rescale_factors = prop.rescale_factors.cwiseProduct(factors);
  return out;
}

}  // namespace kcmc
