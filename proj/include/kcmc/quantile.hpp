#pragma once

// Linear quantile regression under the pinball loss: a softplus-smoothed
// Newton path followed by a snap to an exact vertex of the linear program.

#include "kcmc/data.hpp"
#include "kcmc/optim.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace kcmc {

inline double pinball(double u, double tau) { return u >= 0.0 ? tau * u : (tau - 1.0) * u; }

inline double pinball_loss(const Matrix& basis, const Vector& y, const Vector& beta, double tau) {
  const Vector u = y - basis * beta;
  double s = 0.0;
  for (Index i = 0; i < u.size(); ++i) s += pinball(u[i], tau);
  return s / static_cast<double>(u.size());
}

struct QuantileFit {
  Vector beta;
  double tau = 0.5;
  double loss = 0.0;
  double subgradient_norm = 0.0;  // min-norm element of the loss subdifferential
  bool vertex = false;            // snapped to an exact basic solution
};

namespace detail {

inline NewtonEval smoothed_pinball(const Matrix& X, const Vector& y, double tau, double mu, const Vector& beta,
                                   bool want_hessian) {
  const Index n = X.rows();
  const Vector u = y - X * beta;
  NewtonEval e;
  e.value = 0.0;
  Vector dl(n), cw(n);
  for (Index i = 0; i < n; ++i) {
    const double z = -u[i] / mu;
    const double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    e.value += tau * u[i] + mu * sp;
    dl[i] = tau - sig;  // d/du
    cw[i] = sig * (1.0 - sig) / mu;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  e.value *= inv_n;
  e.gradient = -inv_n * (X.transpose() * dl);
  if (want_hessian) e.hessian = inv_n * (X.transpose() * cw.asDiagonal() * X);
  return e;
}

/// Min-norm subgradient of the pinball loss at beta, treating |u_i| <= tol as zero residuals.
inline double pinball_min_subgradient(const Matrix& X, const Vector& y, const Vector& beta, double tau, double tol) {
  const Index n = X.rows();
  const Vector u = y - X * beta;
  Vector g = Vector::Zero(X.cols());
  std::vector<Index> zero;
  for (Index i = 0; i < n; ++i) {
    if (std::abs(u[i]) <= tol) zero.push_back(i);
    else g -= X.row(i).transpose() * (u[i] > 0 ? tau : tau - 1.0);
  }
  g /= static_cast<double>(n);
  if (zero.empty()) return g.norm();
  // minimize |g - (1/n) sum_{i in Z} x_i c_i| over c_i in [tau-1, tau] by projected gradient
  Matrix Z(X.cols(), static_cast<Index>(zero.size()));
  for (std::size_t k = 0; k < zero.size(); ++k) Z.col(static_cast<Index>(k)) = X.row(zero[k]).transpose() / static_cast<double>(n);
  Vector c = Vector::Constant(Z.cols(), tau - 0.5);
  const double L = std::max(Z.squaredNorm(), 1e-300);
  auto residual = [&](const Vector& cc) { return Vector(g - Z * cc); };
  Vector r = residual(c);
  for (int it = 0; it < 20000 && r.norm() > 1e-14; ++it) {
    c += (Z.transpose() * r) / L;
    for (Index k = 0; k < c.size(); ++k) c[k] = std::clamp(c[k], tau - 1.0, tau);
    r = residual(c);
  }
  return r.norm();
}

/// Smoothing homotopy followed by a snap to the vertex through the p rows
/// with the smallest residuals (ties to larger y).
inline QuantileFit quantile_fit_once(const Matrix& X, const Vector& y, double tau,
                                     const Eigen::ColPivHouseholderQR<Matrix>& qr, double scale) {
  const Index n = X.rows();
  const Index p = X.cols();
  Vector beta = qr.solve(y);
  NewtonOptions opt;
  opt.max_iterations = 200;
  for (double mu_rel = 1e-1; mu_rel >= 1e-10; mu_rel *= 0.1) {
    const double mu = mu_rel * scale;
    opt.gradient_tolerance = 1e-12 * scale;
    auto res = minimize_newton(
        [&](const Vector& b, bool h) { return detail::smoothed_pinball(X, y, tau, mu, b, h); }, beta, opt);
    beta = res.x;
  }

  QuantileFit fit;
  fit.tau = tau;
  fit.beta = beta;
  fit.loss = pinball_loss(X, y, beta, tau);

  // Snap: interpolate the p rows with the smallest residuals (ties to larger y).
  const Vector u = y - X * beta;
  const double tie = 1e-6 * scale;
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    const double da = std::abs(u[a]);
    const double db = std::abs(u[b]);
    if (std::abs(da - db) > tie) return da < db;
    return y[a] > y[b];
  });
  std::vector<Index> basis;
  Matrix B(0, p);
  for (Index idx : order) {
    Matrix trial(B.rows() + 1, p);
    trial << B, X.row(idx);
    Eigen::ColPivHouseholderQR<Matrix> q(trial);
    q.setThreshold(1e-10);
    if (q.rank() == trial.rows()) {
      B = trial;
      basis.push_back(idx);
      if (static_cast<Index>(basis.size()) == p) break;
    }
  }
  if (static_cast<Index>(basis.size()) == p) {
    Vector yb(p);
    for (Index k = 0; k < p; ++k) yb[k] = y[basis[static_cast<std::size_t>(k)]];
    const Vector vb = B.partialPivLu().solve(yb);
    const double lv = pinball_loss(X, y, vb, tau);
    if (lv <= fit.loss + 1e-12 * scale) {
      fit.beta = vb;
      fit.loss = lv;
      fit.vertex = true;
    }
  }
  return fit;
}

}  // namespace detail

/// Minimizes (1/n) sum rho_tau(y_i - x_i^T beta). When the minimizer is not
/// unique, the one with the largest mean fit is returned (for a constant basis
/// the right end of the optimal interval), found as the solution at a level
/// just above tau.
inline QuantileFit quantile_regression(const Matrix& X, const Vector& y, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error("quantile level must lie in (0,1)");
  const Index n = X.rows();
  const Index p = X.cols();
  if (n != y.size() || n < 1) throw Error("quantile regression: basis and response sizes differ");
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) throw Error("quantile regression basis is rank deficient");
  const double scale = std::max((y.array() - y.mean()).abs().maxCoeff(), 1e-12 * std::max(1.0, y.cwiseAbs().maxCoeff()));

  QuantileFit fit = detail::quantile_fit_once(X, y, tau, qr, scale);
  const double tau_up = tau + 1e-7 * std::min(tau, 1.0 - tau);
  const QuantileFit up = detail::quantile_fit_once(X, y, tau_up, qr, scale);
  const double up_loss = pinball_loss(X, y, up.beta, tau);
  if (up.vertex && up_loss <= fit.loss + 1e-12 * scale && (X * up.beta).mean() > (X * fit.beta).mean()) {
    fit.beta = up.beta;
    fit.loss = up_loss;
    fit.vertex = true;
  }
  fit.subgradient_norm = detail::pinball_min_subgradient(X, y, fit.beta, tau, 1e-9 * scale);
  return fit;
}

/// Q(t, x) = gamma_t^T [1, x]: separate intercept and slopes per action.
struct QuantileModel {
  std::vector<Vector> coefficients;  // one (p+1)-vector per action
  double tau = 0.5;
  std::vector<std::string> warnings;

  double operator()(int t, const Eigen::Ref<const Vector>& x) const {
    const Vector& c = coefficients.at(static_cast<std::size_t>(t));
    return c[0] + c.tail(c.size() - 1).dot(x);
  }

  Vector predict(const Observations& obs) const {
    Vector q(obs.size());
    for (Index i = 0; i < obs.size(); ++i)
      q[i] = (*this)(obs.actions[static_cast<std::size_t>(i)], obs.covariates.row(i).transpose());
    return q;
  }
};

inline QuantileModel fit_quantile_model(const Observations& obs, double tau) {
  QuantileModel m;
  m.tau = tau;
  const Index p = obs.dim();
  for (int t = 0; t < obs.num_actions; ++t) {
    std::vector<Index> rows;
    for (Index i = 0; i < obs.size(); ++i)
      if (obs.actions[static_cast<std::size_t>(i)] == t) rows.push_back(i);
    if (rows.empty()) throw Error("quantile model: action " + std::to_string(t) + " has no samples");
    Matrix X(static_cast<Index>(rows.size()), p + 1);
    Vector y(static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      X(static_cast<Index>(k), 0) = 1.0;
      X.row(static_cast<Index>(k)).tail(p) = obs.covariates.row(rows[k]);
      y[static_cast<Index>(k)] = obs.rewards[rows[k]];
    }
    if ((y.array() == y[0]).all()) m.warnings.push_back("constant rewards under action " + std::to_string(t));
    m.coefficients.push_back(quantile_regression(X, y, tau).beta);
  }
  return m;
}

}  // namespace kcmc
