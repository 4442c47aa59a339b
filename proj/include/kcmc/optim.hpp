#pragma once

// Damped Newton minimization for smooth convex objectives that may return
// +inf outside their domain. Used by the dual engine and quantile regression.

#include "kcmc/types.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <functional>

namespace kcmc {

struct NewtonEval {
  double value = kInf;
  Vector gradient;
  Matrix hessian;
};

struct NewtonOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-10;  // on the infinity norm
  double decrement_tolerance = 1e-16;  // on the squared Newton decrement / 2, relative to 1 + |f|
  double armijo = 1e-4;
  double shrink = 0.5;
  int max_backtracks = 80;
};

struct NewtonResult {
  Vector x;
  double value = kInf;
  double gradient_norm = kInf;
  int iterations = 0;
  bool converged = false;
};

/// `f(x, want_hessian)` must return the value and gradient, plus the Hessian
/// when asked. The step solves (H + delta I) p = -g with delta raised until
/// the factorization succeeds.
inline NewtonResult minimize_newton(const std::function<NewtonEval(const Vector&, bool)>& f, Vector x,
                                    const NewtonOptions& opt = {}) {
  NewtonResult res;
  NewtonEval cur = f(x, true);
  if (!std::isfinite(cur.value)) throw Error("Newton start point lies outside the objective's domain");
  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it;
    const double gnorm = cur.gradient.size() ? cur.gradient.cwiseAbs().maxCoeff() : 0.0;
    if (gnorm <= opt.gradient_tolerance) {
      res.converged = true;
      break;
    }
    const Index d = x.size();
    const double diag = std::max(cur.hessian.diagonal().cwiseAbs().maxCoeff(), 1e-300);
    double delta = 1e-14 * diag;
    Vector p;
    for (int tries = 0; tries < 40; ++tries) {
      Eigen::LLT<Matrix> llt(cur.hessian + delta * Matrix::Identity(d, d));
      if (llt.info() == Eigen::Success) {
        p = -llt.solve(cur.gradient);
        if (p.allFinite() && p.dot(cur.gradient) < 0.0) break;
      }
      p.resize(0);
      delta = std::max(delta * 100.0, 1e-12 * diag);
    }
    if (p.size() == 0) p = -cur.gradient;
    const double slope = p.dot(cur.gradient);
    if (-0.5 * slope <= opt.decrement_tolerance * (1.0 + std::abs(cur.value))) {
      res.converged = true;
      break;
    }
    double step = 1.0;
    bool accepted = false;
    NewtonEval next;
    Vector trial;
    for (int bt = 0; bt < opt.max_backtracks; ++bt) {
      trial = x + step * p;
      next = f(trial, false);
      if (std::isfinite(next.value) && next.value <= cur.value + opt.armijo * step * slope) {
        accepted = true;
        break;
      }
      step *= opt.shrink;
    }
    if (!accepted) {
      // No representable decrease along p: we are at the resolution limit.
      res.converged = gnorm <= 1e3 * opt.gradient_tolerance;
      break;
    }
    x = trial;
    cur = f(x, true);
    res.iterations = it + 1;
  }
  res.x = x;
  res.value = cur.value;
  res.gradient_norm = cur.gradient.size() ? cur.gradient.cwiseAbs().maxCoeff() : 0.0;
  return res;
}

}  // namespace kcmc
