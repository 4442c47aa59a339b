#pragma once

// Confounded binary-action simulator:
//   xi ~ Bern(1/2), X ~ N(mu_x, I_5),
//   Y_t | X, xi ~ N(beta_{x,t}^T X + beta_{xi,t} xi + beta_{const,t}, noise_sd^2),
//   U = 1{Y_0 > Y_1}, T ~ Bern(e(X, U)), Y = Y_T,
//   e(X, U) = 6 e(X) / (4 + 5U + e(X)(2 - 5U)),  e(X) = sigmoid(beta_e^T X).

#include "kcmc/data.hpp"
#include "kcmc/policy.hpp"
#include "kcmc/rng.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace kcmc {

struct SyntheticParams {
  Vector mu_x = (Vector(5) << -1.0, 0.5, -1.0, 0.0, -1.0).finished();
  Vector beta_x0 = (Vector(5) << 0.0, 0.5, -0.5, 0.0, 0.0).finished();
  Vector beta_x1 = (Vector(5) << -1.5, 1.5, -2.0, 1.0, 0.5).finished();
  double beta_xi0 = 1.0;
  double beta_xi1 = -1.0;
  double beta_const0 = 2.5;
  double beta_const1 = -0.5;
  Vector beta_e = policies::nominal_coefficients();
  // Outcome noise standard deviation; 1 in the benchmark, overridable for tests.
  double noise_sd = 1.0;
};

inline double confounded_propensity(double nominal, int u) {
  return 6.0 * nominal / (4.0 + 5.0 * u + nominal * (2.0 - 5.0 * u));
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

inline LoggedDataset generate_synthetic(Index n, std::uint64_t seed, const SyntheticParams& prm = {}) {
  if (n < 1) throw Error("synthetic sample size must be at least 1");
  auto xi_rng = make_stream(seed, Stream::confounder_xi);
  auto x_rng = make_stream(seed, Stream::covariates);
  auto e0_rng = make_stream(seed, Stream::noise_y0);
  auto e1_rng = make_stream(seed, Stream::noise_y1);
  auto t_rng = make_stream(seed, Stream::action);

  const Index p = prm.mu_x.size();
  LoggedDataset d;
  d.obs.num_actions = 2;
  d.obs.rewards.resize(n);
  d.obs.actions.resize(static_cast<std::size_t>(n));
  d.obs.covariates.resize(n, p);
  Truth truth;
  truth.u.resize(static_cast<std::size_t>(n));
  truth.y0.resize(n);
  truth.y1.resize(n);
  truth.propensity_confounded.resize(n);
  truth.propensity_nominal.resize(n);

  Vector x(p);
  for (Index i = 0; i < n; ++i) {
    const int xi = xi_rng.bernoulli(0.5) ? 1 : 0;
    for (Index k = 0; k < p; ++k) x[k] = prm.mu_x[k] + x_rng.normal();
    const double y0 = prm.beta_x0.dot(x) + prm.beta_xi0 * xi + prm.beta_const0 + prm.noise_sd * e0_rng.normal();
    const double y1 = prm.beta_x1.dot(x) + prm.beta_xi1 * xi + prm.beta_const1 + prm.noise_sd * e1_rng.normal();
    const int u = y0 > y1 ? 1 : 0;
    const double e = sigmoid(prm.beta_e.dot(x));
    const double e_xu = confounded_propensity(e, u);
    const int t = t_rng.bernoulli(e_xu) ? 1 : 0;
    d.obs.covariates.row(i) = x.transpose();
    d.obs.actions[static_cast<std::size_t>(i)] = t;
    d.obs.rewards[i] = t == 1 ? y1 : y0;
    truth.u[static_cast<std::size_t>(i)] = u;
    truth.y0[i] = y0;
    truth.y1[i] = y1;
    truth.propensity_confounded[i] = e_xu;
    truth.propensity_nominal[i] = e;
  }
  d.truth = std::move(truth);
  return d;
}

struct MonteCarloValue {
  double value = 0.0;
  double std_error = 0.0;
};

/// Unconfounded Monte Carlo estimate of V(pi) = E[Y_T], T ~ pi(.|X).
inline MonteCarloValue true_policy_value(const Policy& policy, Index n_mc, std::uint64_t seed,
                                         const SyntheticParams& prm = {}) {
  if (policy.num_actions() != 2) throw Error("the simulator has binary actions");
  if (n_mc < 2) throw Error("Monte Carlo size must be at least 2");
  auto xi_rng = make_stream(seed, Stream::confounder_xi);
  auto x_rng = make_stream(seed, Stream::covariates);
  auto e0_rng = make_stream(seed, Stream::noise_y0);
  auto e1_rng = make_stream(seed, Stream::noise_y1);
  auto pi_rng = make_stream(seed, Stream::policy_draw);
  const Index p = prm.mu_x.size();
  Vector x(p);
  double sum = 0.0;
  double sumsq = 0.0;
  for (Index i = 0; i < n_mc; ++i) {
    const int xi = xi_rng.bernoulli(0.5) ? 1 : 0;
    for (Index k = 0; k < p; ++k) x[k] = prm.mu_x[k] + x_rng.normal();
    const double y0 = prm.beta_x0.dot(x) + prm.beta_xi0 * xi + prm.beta_const0 + prm.noise_sd * e0_rng.normal();
    const double y1 = prm.beta_x1.dot(x) + prm.beta_xi1 * xi + prm.beta_const1 + prm.noise_sd * e1_rng.normal();
    const double y = pi_rng.uniform() < policy(1, x) ? y1 : y0;
    sum += y;
    sumsq += y * y;
  }
  const double m = sum / static_cast<double>(n_mc);
  const double var = (sumsq - static_cast<double>(n_mc) * m * m) / static_cast<double>(n_mc - 1);
  return {m, std::sqrt(std::max(var, 0.0) / static_cast<double>(n_mc))};
}

/// Closed-form conditional laws of the simulator, for oracles only.
class SyntheticModel {
 public:
  explicit SyntheticModel(SyntheticParams prm = {}) : prm_(std::move(prm)) {}

  const SyntheticParams& params() const { return prm_; }

  double nominal_propensity(const Vector& x) const { return sigmoid(prm_.beta_e.dot(x)); }

  double outcome_mean(int t, const Vector& x, int xi) const {
    return t == 1 ? prm_.beta_x1.dot(x) + prm_.beta_xi1 * xi + prm_.beta_const1
                  : prm_.beta_x0.dot(x) + prm_.beta_xi0 * xi + prm_.beta_const0;
  }

  /// P(U = 1 | X = x, xi).
  double prob_u1(const Vector& x, int xi) const {
    const double diff = outcome_mean(0, x, xi) - outcome_mean(1, x, xi);
    if (prm_.noise_sd == 0.0) return diff > 0 ? 1.0 : 0.0;
    return normal_cdf(diff / (prm_.noise_sd * std::numbers::sqrt2));
  }

  /// Observational propensity p_obs(t|x) = E_U[P(T=t|X=x,U)].
  double observational_propensity(int t, const Vector& x) const {
    const double e = nominal_propensity(x);
    double p1 = 0.0;
    for (int xi = 0; xi <= 1; ++xi) {
      const double pu = prob_u1(x, xi);
      p1 += 0.5 * (pu * confounded_propensity(e, 1) + (1.0 - pu) * confounded_propensity(e, 0));
    }
    return t == 1 ? p1 : 1.0 - p1;
  }

  /// P(Y <= q | T = t, X = x) under the observational distribution.
  double conditional_cdf(double q, int t, const Vector& x) const {
    const double e = nominal_propensity(x);
    const double et1 = t == 1 ? confounded_propensity(e, 1) : 1.0 - confounded_propensity(e, 1);
    const double et0 = t == 1 ? confounded_propensity(e, 0) : 1.0 - confounded_propensity(e, 0);
    const double sd = prm_.noise_sd;
    double mass = 0.0;
    for (int xi = 0; xi <= 1; ++xi) {
      const double m = outcome_mean(t, x, xi);
      const double m_other = outcome_mean(1 - t, x, xi);
      if (sd == 0.0) {
        const int u = (t == 1 ? m_other > m : m > m_other) ? 1 : 0;
        if (m <= q) mass += 0.5 * (u ? et1 : et0);
        continue;
      }
      // P(U=1 | Y_t = y): t=1 -> P(Y_0 > y), t=0 -> P(Y_1 < y).
      auto prob_u1_given_y = [&](double y) {
        return t == 1 ? 1.0 - normal_cdf((y - m_other) / sd) : normal_cdf((y - m_other) / sd);
      };
      auto integrand = [&](double y) { return normal_pdf((y - m) / sd) / sd * prob_u1_given_y(y); };
      const double lo = m - 12.0 * sd;
      double with_u1 = 0.0;
      if (q > lo) {
        const double hi = std::min(q, m + 12.0 * sd);
        const int panels = std::max(1, static_cast<int>(std::ceil((hi - lo) / sd)));
        const double h = (hi - lo) / panels;
        for (int k = 0; k < panels; ++k)
          with_u1 += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand, lo + k * h,
                                                                                  lo + (k + 1) * h, 0, 0.0);
      }
      const double base = normal_cdf((q - m) / sd);
      mass += 0.5 * (et0 * base + (et1 - et0) * with_u1);
    }
    return mass / observational_propensity(t, x);
  }

  /// tau-quantile of Y | T = t, X = x by bisection to 1e-10.
  double conditional_quantile(double tau, int t, const Vector& x) const {
    if (!(tau > 0.0 && tau < 1.0)) throw Error("quantile level must lie in (0,1)");
    if (prm_.noise_sd == 0.0) {
      std::array<double, 2> atoms{outcome_mean(t, x, 0), outcome_mean(t, x, 1)};
      std::sort(atoms.begin(), atoms.end());
      for (double a : atoms)
        if (conditional_cdf(a, t, x) >= tau - 1e-15) return a;
      return atoms.back();
    }
    double lo = std::min(outcome_mean(t, x, 0), outcome_mean(t, x, 1)) - 12.0 * prm_.noise_sd;
    double hi = std::max(outcome_mean(t, x, 0), outcome_mean(t, x, 1)) + 12.0 * prm_.noise_sd;
    while (hi - lo > 1e-10) {
      const double mid = 0.5 * (lo + hi);
      (conditional_cdf(mid, t, x) < tau ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

 private:
  SyntheticParams prm_;
};

}  // namespace kcmc
