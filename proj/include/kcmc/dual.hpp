#pragma once

// Dual engine for
//   min (1/n) sum w~_i r_i  s.t.  (1/n) Psi^T (w~ - 1) = 0,
//                                 |G (w~ - 1)| <= sqrt(rho)      (GP specs),
//                                 (1/n) sum f(w~_i) <= gamma     (f models),
//                                 a_i <= w~_i <= b_i             (box models), w~ >= 0.
// The dual maximizes over theta = (eta, nu) and eta_f > 0
//   J = theta^T mean(phi) - mean h_i(theta^T phi_i - r_i; eta_f) - eta_f gamma - sqrt(rho)|nu|,
// with phi_i = [psi_i; n G_i] and h_i the (perspective of the) conjugate of
// the per-sample weight penalty. Kinks are removed by a softplus homotopy.

#include "kcmc/constraints.hpp"
#include "kcmc/divergence.hpp"
#include "kcmc/optim.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace kcmc {

struct SolverOptions {
  double mu_start = 1e-1;
  double mu_end = 1e-12;
  double mu_factor = 0.1;
  int max_newton = 100;
  double gap_tolerance = 1e-5;       // relative to 1 + |value|
  double residual_tolerance = 1e-8;  // relative to max |psi|
  bool exact_scalar = true;          // breakpoint sweep for a pure box with disjoint hard columns
  bool vertex_polish = true;         // exact LP vertex from the near-tied samples
};

struct DualSolution {
  Vector eta;              // hard-constraint multipliers
  Vector nu;               // soft-ball multipliers (empty for hard specs)
  double eta_f = 0.0;      // budget multiplier
  double lambda_quad = 0.0;
  double dual_value = -kInf;
  double grad_norm = kInf;
  int iterations = 0;
  bool converged = false;
  std::vector<double> trace;  // smoothed dual value after each homotopy stage
};

struct FeasibilityResiduals {
  Vector ortho;         // (1/n) Psi^T (w~ - 1)
  double budget = 0.0;  // mean f(w~) - gamma
  double quad = 0.0;    // e^T M e - rho
};

struct SolveReport {
  DualSolution dual;
  double primal_value = kInf;
  double dual_value = -kInf;
  double gap = kInf;
  Vector wtilde;
  Vector weights;  // w = w~ / p
  FeasibilityResiduals residuals;
  bool converged = false;
  bool unbounded = false;
  std::string message;
};

class DualProblem {
 public:
  DualProblem(const KcmcSpec& spec, const SensitivityModel& model, const Vector& propensities, const Vector& rewards)
      : spec_(&spec), model_(model), p_(propensities), conj_(model.fdiv ? model.fdiv->kind : FKind::kl) {
    model.validate();
    n_ = rewards.size();
    if (propensities.size() != n_) throw Error("propensity and reward lengths differ");
    if (spec.psi.dim() > 0 && spec.psi.size() != n_) throw Error("constraint features were built on another sample");
    if (spec.quad && spec.quad->factor.cols() != n_) throw Error("GP form was built on another sample");
    if (model.box) bounds_ = box_weight_bounds(*model.box, propensities);
    hard_ = spec.psi.dim();
    soft_ = spec.quad ? spec.quad->factor.rows() : 0;
    const Index d = hard_ + soft_;
    phi_.resize(n_, d);
    col_scale_ = Vector::Ones(d);
    for (Index j = 0; j < hard_; ++j) {
      const double s = std::sqrt(spec.psi.psi.col(j).squaredNorm() / static_cast<double>(n_));
      col_scale_[j] = s > 0.0 ? s : 1.0;
      phi_.col(j) = spec.psi.psi.col(j) / col_scale_[j];
    }
    if (soft_ > 0) {
      const Matrix g = static_cast<double>(n_) * spec.quad->factor.transpose();  // n x m
      const double k = std::sqrt(g.squaredNorm() / static_cast<double>(n_ * soft_));
      soft_scale_ = k > 0.0 ? k : 1.0;
      phi_.rightCols(soft_) = g / soft_scale_;
      col_scale_.tail(soft_).setConstant(soft_scale_);
      sqrt_rho_ = std::sqrt(spec.radius);
    }
    phi_mean_ = phi_.colwise().mean().transpose();
    set_rewards(rewards);
  }

  void set_rewards(const Vector& rewards) {
    if (rewards.size() != n_) throw Error("reward length does not match the problem");
    r_ = rewards;
    const double rms = std::sqrt(rewards.squaredNorm() / static_cast<double>(n_));
    r_scale_ = rms > 0.0 && std::isfinite(rms) ? rms : 1.0;
    rn_ = r_ / r_scale_;
  }

  Index size() const { return n_; }
  Index hard_dim() const { return hard_; }
  Index soft_dim() const { return soft_; }
  bool has_budget() const { return model_.fdiv.has_value(); }
  bool pure_box() const { return model_.box && !model_.fdiv; }
  const SensitivityModel& model() const { return model_; }
  const KcmcSpec& spec() const { return *spec_; }
  const Vector& rewards() const { return r_; }
  const Vector& propensities() const { return p_; }
  const std::optional<WeightBounds>& bounds() const { return bounds_; }
  double reward_scale() const { return r_scale_; }
  Index num_variables() const { return hard_ + soft_ + (has_budget() ? 1 : 0); }

  /// Kinks in the per-sample terms that need the homotopy.
  bool needs_smoothing() const {
    return model_.box || soft_ > 0 || model_.fdiv;
  }

  // -- scaling between user units (eta, nu, eta_f) and internal units ------

  Vector to_internal(const Vector& eta, const Vector& nu, double eta_f) const {
    Vector x(num_variables());
    for (Index j = 0; j < hard_; ++j) x[j] = eta[j] * col_scale_[j] / r_scale_;
    for (Index j = 0; j < soft_; ++j) x[hard_ + j] = nu[j] * soft_scale_ / r_scale_;
    if (has_budget()) x[hard_ + soft_] = eta_f / r_scale_;
    return x;
  }

  void from_internal(const Vector& x, DualSolution& s) const {
    s.eta.resize(hard_);
    s.nu.resize(soft_);
    for (Index j = 0; j < hard_; ++j) s.eta[j] = x[j] * r_scale_ / col_scale_[j];
    for (Index j = 0; j < soft_; ++j) s.nu[j] = x[hard_ + j] * r_scale_ / soft_scale_;
    s.eta_f = has_budget() ? x[hard_ + soft_] * r_scale_ : 0.0;
    s.lambda_quad = soft_ > 0 && sqrt_rho_ > 0.0 ? s.nu.norm() / (2.0 * sqrt_rho_) : 0.0;
  }

  /// -J in internal units (value, gradient and optionally Hessian) at temperature mu.
  NewtonEval negative_dual(const Vector& x, double mu, bool want_hessian) const {
    const Index d = hard_ + soft_;
    const bool budget = has_budget();
    const double eta_f = budget ? x[d] : 0.0;
    NewtonEval out;
    out.gradient = Vector::Zero(x.size());
    if (budget && !(eta_f > 0.0)) return out;  // value stays +inf
    const Vector theta = x.head(d);
    const Vector v = phi_ * theta - rn_;
    Vector slope(n_), curv(n_), zcol;
    if (budget) zcol.resize(n_);
    double hsum = 0.0, deta = 0.0;
    for (Index i = 0; i < n_; ++i) {
      if (!budget) {
        const auto t = box_term(v[i], i, mu);
        hsum += t.value;
        slope[i] = t.slope;
        curv[i] = t.curvature;
        continue;
      }
      const double z = v[i] / eta_f;
      const auto t = perspective_term(z, i, mu);
      if (!std::isfinite(t.value)) return out;
      hsum += eta_f * t.value;
      slope[i] = t.slope;
      deta += t.value - z * t.slope;
      curv[i] = t.curvature / eta_f;
      zcol[i] = -z;
    }
    const double inv_n = 1.0 / static_cast<double>(n_);
    double J = theta.dot(phi_mean_) - inv_n * hsum;
    Vector gJ = Vector::Zero(x.size());
    gJ.head(d) = phi_mean_ - inv_n * (phi_.transpose() * slope);
    if (budget) {
      J -= eta_f * model_.fdiv->budget;
      gJ[d] = -model_.fdiv->budget - inv_n * deta;
      if (mu > 0.0) {
        // interior path for a slack budget, where the optimal eta_f is 0
        J += mu * std::log(eta_f);
        gJ[d] += mu / eta_f;
      }
    }
    Matrix HJ;
    if (want_hessian) {
      if (budget) {
        Matrix A(n_, d + 1);
        A << phi_, zcol;
        HJ = -inv_n * (A.transpose() * curv.asDiagonal() * A);
        if (mu > 0.0) HJ(d, d) -= mu / (eta_f * eta_f);
      } else {
        HJ = -inv_n * (phi_.transpose() * curv.asDiagonal() * phi_);
      }
    }
    if (soft_ > 0) {
      const double c = sqrt_rho_ / soft_scale_;
      const Vector nu = theta.tail(soft_);
      const double s = std::sqrt(nu.squaredNorm() + mu * mu);
      J -= c * s;
      if (s > 0.0) {
        gJ.segment(hard_, soft_) -= c * nu / s;
        if (want_hessian)
          HJ.block(hard_, hard_, soft_, soft_) -=
              c * (Matrix::Identity(soft_, soft_) / s - nu * nu.transpose() / (s * s * s));
      }
    }
    out.value = -J;
    out.gradient = -gJ;
    if (want_hessian) out.hessian = -HJ;
    return out;
  }

  /// Selected weights w~_i in the subdifferential at internal point x.
  Vector selection(const Vector& x, double mu) const {
    const Index d = hard_ + soft_;
    const Vector v = phi_ * x.head(d) - rn_;
    Vector w(n_);
    for (Index i = 0; i < n_; ++i) {
      if (!has_budget()) w[i] = box_term(v[i], i, mu).slope;
      else w[i] = perspective_term(v[i] / x[d], i, mu).slope;
    }
    return w;
  }

  /// v_i = theta^T phi_i - r_i in internal units.
  Vector slack(const Vector& x) const { return phi_ * x.head(hard_ + soft_) - rn_; }

  const Matrix& internal_features() const { return phi_; }
  const Vector& internal_rewards() const { return rn_; }

  /// Exact dual value and gradient in user units; the gradient has one entry
  /// per hard column, per soft direction, and (for f models) one for eta_f.
  std::pair<double, Vector> exact(const Vector& eta, const Vector& nu, double eta_f) const {
    const Vector x = to_internal(eta, nu, eta_f);
    const auto e = negative_dual(x, 0.0, false);
    Vector g(x.size());
    for (Index j = 0; j < hard_; ++j) g[j] = -e.gradient[j] * col_scale_[j];
    for (Index j = 0; j < soft_; ++j) g[hard_ + j] = -e.gradient[hard_ + j] * soft_scale_;
    if (has_budget()) g[hard_ + soft_] = -e.gradient[hard_ + soft_];
    return {-e.value * r_scale_, g};
  }

  /// An internal starting point inside the dual domain, if one is found.
  std::optional<Vector> initial_point() const {
    Vector x = Vector::Zero(num_variables());
    if (!has_budget()) return x;
    const Index d = hard_ + soft_;
    const double upper = model_.box ? kInf : conj_.domain_upper();
    Vector v = -rn_;
    if (upper == 0.0 && v.maxCoeff() >= 0.0) {
      const auto dir = positive_direction();
      if (!dir) return std::nullopt;
      const Vector pd = phi_.leftCols(hard_) * *dir;
      double c = 0.0;
      for (Index i = 0; i < n_; ++i) c = std::max(c, -rn_[i] / pd[i]);
      c = 2.0 * c + 1.0;
      x.head(hard_) = -c * *dir;
      v = phi_ * x.head(d) - rn_;
    }
    double eta_f = 1.0;
    if (std::isfinite(upper) && upper > 0.0) eta_f = std::max(1.0, 2.0 * v.maxCoeff() / upper);
    x[d] = eta_f;
    if (!std::isfinite(negative_dual(x, 0.0, false).value)) return std::nullopt;
    return x;
  }

 private:
  ConjugatePoint box_term(double v, Index i, double mu) const {
    const double a = bounds_->lower[i];
    const double b = bounds_->upper[i];
    if (mu <= 0.0) return v >= 0.0 ? ConjugatePoint{b * v, b, 0.0} : ConjugatePoint{a * v, a, 0.0};
    const double z = v / mu;
    const double sp = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    return {a * v + (b - a) * mu * sp, a + (b - a) * sig, (b - a) * sig * (1.0 - sig) / mu};
  }

  /// phi(z) for the perspective: the monotone conjugate, or for box+f models
  /// the conjugate of f restricted to [a_i, b_i].
  ConjugatePoint perspective_term(double z, Index i, double mu) const {
    const bool tv = model_.fdiv->kind == FKind::total_variation;
    if (!model_.box) {
      if (!tv || mu <= 0.0) return conj_.eval(z);
      if (z >= 0.5) return {kInf, kInf, 0.0};
      auto p = conj_.eval_smoothed(z, mu);
      const double gap = 0.5 - z;
      p.value -= mu * std::log(gap);
      p.slope += mu / gap;
      p.curvature += mu / (gap * gap);
      return p;
    }
    const double a = bounds_->lower[i];
    const double b = bounds_->upper[i];
    ConjugatePoint s{kInf, kInf, 0.0};
    if (conj_.in_domain(z)) s = tv ? conj_.eval_smoothed(z, mu) : conj_.eval(z);
    double u = s.slope;
    double curv = 0.0;
    if (u <= a) u = a;
    else if (u >= b) u = b;
    else curv = s.curvature;
    return {u * z - f_value(model_.fdiv->kind, u), u, curv};
  }

  /// d with Psi d > 0 entrywise (hard columns, internal units), used to enter
  /// conjugate domains bounded above by zero.
  std::optional<Vector> positive_direction() const {
    if (hard_ == 0) return std::nullopt;
    const Matrix H = phi_.leftCols(hard_);
    auto check = [&](const Vector& d) -> std::optional<Vector> {
      const Vector pd = H * d;
      if (pd.allFinite() && pd.minCoeff() > 1e-12 * std::max(1.0, pd.cwiseAbs().maxCoeff())) return d;
      return std::nullopt;
    };
    Vector nonneg = Vector::Zero(hard_);
    for (Index j = 0; j < hard_; ++j)
      if (H.col(j).minCoeff() >= 0.0) nonneg[j] = 1.0;
    if (auto d = check(nonneg)) return d;
    return check(H.colPivHouseholderQr().solve(Vector::Ones(n_)));
  }

  const KcmcSpec* spec_;
  SensitivityModel model_;
  Vector p_;
  ConjugateEvaluator conj_;
  std::optional<WeightBounds> bounds_;
  Index n_ = 0, hard_ = 0, soft_ = 0;
  Matrix phi_;
  Vector col_scale_, phi_mean_;
  double soft_scale_ = 1.0;
  double sqrt_rho_ = 0.0;
  Vector r_, rn_;
  double r_scale_ = 1.0;
};

/// Exact dual objective and supergradient at (eta, eta_f) for a hard spec.
inline std::pair<double, Vector> dual_objective_hard(const DualProblem& problem, const Vector& eta, double eta_f) {
  if (problem.soft_dim() > 0) throw Error("dual_objective_hard needs a hard-orthogonality spec");
  if (problem.has_budget() && !(eta_f > 0.0)) throw Error("f-divergence duals need eta_f > 0");
  return problem.exact(eta, Vector(0), eta_f);
}

namespace detail {

inline Vector pseudo_solve(const Matrix& A, const Vector& b) {
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
  cod.setThreshold(1e-12);
  return cod.solve(b);
}

/// True when no row of psi has two nonzero entries (ZSB, single columns).
inline bool disjoint_columns(const Matrix& psi) {
  for (Index i = 0; i < psi.rows(); ++i)
    if ((psi.row(i).array() != 0.0).count() > 1) return false;
  return true;
}

/// Pure box whose hard columns have disjoint supports: the dual separates
/// into one concave piecewise-linear function per column, each maximized
/// exactly by sweeping its breakpoints.
inline void solve_box_separable(const DualProblem& P, DualSolution& sol, Vector& wtilde, Vector& free_weight) {
  const Index n = P.size();
  const Index D = P.hard_dim();
  const auto& wb = *P.bounds();
  const Vector& r = P.rewards();
  const Matrix& psi = P.spec().psi.psi;
  struct Bp {
    double eta;
    double drop;
  };
  std::vector<std::vector<Bp>> bps(static_cast<std::size_t>(D));
  std::vector<double> slope(static_cast<std::size_t>(D), 0.0);  // as eta_j -> -inf
  std::vector<Index> owner(static_cast<std::size_t>(n), -1);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < D; ++j) {
      const double a = psi(i, j);
      if (a == 0.0) continue;
      owner[static_cast<std::size_t>(i)] = j;
      auto& sj = slope[static_cast<std::size_t>(j)];
      sj += a > 0.0 ? a * (1.0 - wb.lower[i]) : a * (1.0 - wb.upper[i]);
      const double w = wb.upper[i] - wb.lower[i];
      if (w > 0.0) bps[static_cast<std::size_t>(j)].push_back({r[i] / a, std::abs(a) * w});
    }
  }
  Vector eta = Vector::Zero(D);
  for (Index j = 0; j < D; ++j) {
    auto& bj = bps[static_cast<std::size_t>(j)];
    if (bj.empty()) continue;
    std::sort(bj.begin(), bj.end(), [](const Bp& x, const Bp& y) { return x.eta < y.eta; });
    double s = slope[static_cast<std::size_t>(j)];
    eta[j] = bj.back().eta;
    for (std::size_t k = 0; k < bj.size();) {
      std::size_t m = k;
      double drop = 0.0;
      while (m < bj.size() && bj[m].eta == bj[k].eta) drop += bj[m++].drop;
      if (s - drop <= 0.0) {
        eta[j] = bj[k].eta;
        break;
      }
      s -= drop;
      k = m;
    }
  }
  sol.eta = eta;
  sol.dual_value = D > 0 ? P.exact(eta, Vector(0), 0.0).first : 0.0;
  sol.grad_norm = 0.0;
  sol.converged = true;
  wtilde.resize(n);
  free_weight = Vector::Zero(n);
  double val = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index j = owner[static_cast<std::size_t>(i)];
    const double lin = j >= 0 ? eta[j] * psi(i, j) : 0.0;
    const double v = lin - r[i];
    const double tol = 1e-12 * (std::abs(r[i]) + std::abs(lin));
    if (std::abs(v) <= tol) {
      wtilde[i] = 1.0;
      free_weight[i] = j >= 0 && wb.upper[i] > wb.lower[i] ? 1.0 : 0.0;
    } else {
      wtilde[i] = v > 0.0 ? wb.upper[i] : wb.lower[i];
    }
    val += wtilde[i] * r[i];
  }
  if (D == 0) sol.dual_value = val / static_cast<double>(n);
}

}  // namespace detail

/// Weights moved toward feasibility: least-squares repair of the hard
/// residual over free coordinates, then shrinking toward w~ = 1 for the
/// soft ball and the budget (both keep the hard residual unchanged). With
/// `ball_target` the free coordinates also solve G (w~ - 1) = target, the
/// active-ball condition that pins interior box weights.
inline void restore_feasibility(const DualProblem& P, Vector& w, const Vector& free_weight,
                                const Vector* ball_target = nullptr) {
  const auto& spec = P.spec();
  const Index n = P.size();
  const Vector* lo = P.bounds() ? &P.bounds()->lower : nullptr;
  const Vector* hi = P.bounds() ? &P.bounds()->upper : nullptr;
  auto clip = [&](Vector& x) {
    for (Index i = 0; i < n; ++i) {
      if (lo) x[i] = std::clamp(x[i], (*lo)[i], (*hi)[i]);
      else x[i] = std::max(x[i], 0.0);
    }
  };
  clip(w);
  const bool ball = ball_target && spec.quad && ball_target->size() == spec.quad->factor.rows();
  const Index hard = spec.psi.dim();
  const Index rows_c = hard + (ball ? ball_target->size() : 0);
  if (rows_c > 0 && free_weight.size() == n && free_weight.maxCoeff() > 0.0) {
    // Alternating projections between the equality rows and the bounds,
    // restricted to the free rows (many when the optimum is degenerate).
    Matrix C(n, rows_c);
    if (hard > 0) C.leftCols(hard) = spec.psi.psi / static_cast<double>(n);
    if (ball) C.rightCols(rows_c - hard) = spec.quad->factor.transpose();
    auto residual = [&](const Vector& x) {
      Vector R = C.transpose() * (x.array() - 1.0).matrix();
      if (ball) R.tail(rows_c - hard) -= *ball_target;
      return R;
    };
    const double tol = 1e-15 * std::max(1.0, static_cast<double>(n) * C.cwiseAbs().maxCoeff());
    std::vector<Index> rows;
    for (Index i = 0; i < n; ++i)
      if (free_weight[i] > 0.0) rows.push_back(i);
    const auto k = static_cast<Index>(rows.size());
    Matrix c_f(k, rows_c);
    Vector fw(k);
    for (Index j = 0; j < k; ++j) {
      c_f.row(j) = C.row(rows[static_cast<std::size_t>(j)]);
      fw[j] = free_weight[rows[static_cast<std::size_t>(j)]];
    }
    const Matrix WC = fw.asDiagonal() * c_f;
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod;
    cod.setThreshold(1e-12);
    cod.compute(c_f.transpose() * WC);
    for (int it = 0; it < 2000; ++it) {
      const Vector R = residual(w);
      if (R.cwiseAbs().maxCoeff() <= tol) break;
      const Vector step = WC * cod.solve(R);
      for (Index j = 0; j < k; ++j) {
        const Index i = rows[static_cast<std::size_t>(j)];
        w[i] -= step[j];
        if (lo) w[i] = std::clamp(w[i], (*lo)[i], (*hi)[i]);
        else w[i] = std::max(w[i], 0.0);
      }
    }
  }
  const Vector e = (w.array() - 1.0).matrix();
  double t = 1.0;
  if (spec.quad) {
    const double q = spec.quad->value(e);
    if (q > spec.radius) t = std::sqrt(spec.radius / q);
  }
  if (P.has_budget()) {
    const auto& fm = *P.model().fdiv;
    auto excess = [&](double s) { return budget_value(fm, (1.0 + s * e.array()).matrix()) - fm.budget; };
    if (excess(t) > 0.0) {
      double lo_t = 0.0, hi_t = t;
      for (int it = 0; it < 200 && hi_t - lo_t > 1e-16; ++it) {
        const double mid = 0.5 * (lo_t + hi_t);
        (excess(mid) <= 0.0 ? lo_t : hi_t) = mid;
      }
      t = lo_t;
    }
  }
  if (t < 1.0) w = (1.0 + t * e.array()).matrix();
}

/// Primal value, residuals and gap of recovered weights against a dual value.
inline void certify(const DualProblem& P, SolveReport& rep, const SolverOptions& opt = {}) {
  const Index n = P.size();
  const auto& spec = P.spec();
  rep.primal_value = rep.wtilde.dot(P.rewards()) / static_cast<double>(n);
  rep.weights = (rep.wtilde.array() / P.propensities().array()).matrix();
  rep.residuals.ortho = hard_residual(spec, rep.wtilde);
  rep.residuals.quad = spec.quad ? quad_value(spec, rep.wtilde) - spec.radius : 0.0;
  rep.residuals.budget = P.has_budget() ? budget_value(*P.model().fdiv, rep.wtilde) - P.model().fdiv->budget : 0.0;
  rep.dual_value = rep.dual.dual_value;
  rep.gap = rep.primal_value - rep.dual_value;
  const double psi_scale = spec.psi.dim() ? std::max(1.0, spec.psi.psi.cwiseAbs().maxCoeff()) : 1.0;
  const double ortho = rep.residuals.ortho.size() ? rep.residuals.ortho.cwiseAbs().maxCoeff() : 0.0;
  const bool feasible = ortho <= opt.residual_tolerance * psi_scale &&
                        rep.residuals.quad <= 1e-9 * std::max(1.0, spec.radius) &&
                        rep.residuals.budget <= 1e-9 * (1.0 + (P.has_budget() ? P.model().fdiv->budget : 0.0)) &&
                        (rep.wtilde.array() >= -1e-15).all();
  const bool tight = std::isfinite(rep.gap) && rep.gap >= -1e-9 * (1.0 + std::abs(rep.dual_value)) &&
                     rep.gap <= opt.gap_tolerance * (1.0 + std::abs(rep.dual_value));
  rep.converged = feasible && tight;
  if (!feasible) rep.message = "recovered weights violate the constraints";
  else if (!tight) rep.message = "duality gap above tolerance";
}

/// Maximizes the dual (lower bound on min E[w~ r]); `warm` is a previous
/// solution on the same constraint system.
inline SolveReport solve_dual(const DualProblem& P, const SolverOptions& opt = {}, const DualSolution* warm = nullptr) {
  SolveReport rep;
  const Index n = P.size();
  Vector free_weight = Vector::Zero(n);

  if (P.pure_box() && P.soft_dim() == 0 && opt.exact_scalar &&
      (P.hard_dim() <= 1 || detail::disjoint_columns(P.spec().psi.psi))) {
    detail::solve_box_separable(P, rep.dual, rep.wtilde, free_weight);
    // tied coordinates start at 1 and absorb the hard residual
    restore_feasibility(P, rep.wtilde, free_weight);
    certify(P, rep, opt);
    return rep;
  }

  std::optional<Vector> x0;
  if (warm && warm->eta.size() == P.hard_dim() && warm->nu.size() == P.soft_dim()) {
    Vector w = P.to_internal(warm->eta, warm->nu, P.has_budget() ? warm->eta_f : 0.0);
    if (std::isfinite(P.negative_dual(w, 0.0, false).value)) x0 = w;
  }
  if (!x0) x0 = P.initial_point();
  if (!x0) {
    rep.unbounded = true;
    rep.dual.dual_value = -kInf;
    rep.primal_value = -kInf;
    rep.dual_value = -kInf;
    rep.gap = 0.0;
    rep.wtilde = Vector::Ones(n);
    rep.weights = (1.0 / P.propensities().array()).matrix();
    rep.message = "dual domain is empty: the lower bound is -inf";
    return rep;
  }
  Vector x = *x0;

  std::vector<double> schedule;
  if (P.needs_smoothing())
    for (double mu = opt.mu_start; mu >= opt.mu_end * 0.999; mu *= opt.mu_factor) schedule.push_back(mu);
  else
    schedule.push_back(0.0);

  NewtonOptions nopt;
  nopt.max_iterations = opt.max_newton;
  nopt.gradient_tolerance = 1e-11;
  nopt.decrement_tolerance = 1e-18;
  double mu_last = 0.0;
  NewtonResult res;
  for (double mu : schedule) {
    res = minimize_newton([&](const Vector& y, bool h) { return P.negative_dual(y, mu, h); }, x, nopt);
    x = res.x;
    rep.dual.iterations += res.iterations;
    rep.dual.trace.push_back(-res.value * P.reward_scale());
    mu_last = mu;
  }
  rep.dual.grad_norm = res.gradient_norm;

  Vector w = P.selection(x, mu_last);
  if (P.pure_box()) {
    const auto& wb = *P.bounds();
    // near-ties may be saturated at mu_end; let them absorb the hard residual too
    const Vector v0 = P.slack(x);
    for (Index i = 0; i < n; ++i)
      free_weight[i] = ((w[i] > wb.lower[i] && w[i] < wb.upper[i]) ||
                        (std::abs(v0[i]) <= 1e-8 && wb.upper[i] > wb.lower[i]))
                           ? 1.0
                           : 0.0;
    if (opt.vertex_polish && P.soft_dim() == 0 && P.hard_dim() > 0) {
      // Solve theta^T phi_i = r_i on the most nearly tied samples.
      const Vector v = P.slack(x);
      std::vector<Index> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), Index{0});
      std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return std::abs(v[a]) < std::abs(v[b]); });
      const Index d = P.hard_dim();
      const Matrix& phi = P.internal_features();
      Matrix A(0, d);
      Vector rhs(0);
      for (Index k = 0; k < n && A.rows() < d; ++k) {
        const Index i = order[static_cast<std::size_t>(k)];
        if (std::abs(v[i]) > 1e-4) break;
        Matrix At(A.rows() + 1, d);
        At << A, phi.row(i);
        if (Eigen::FullPivLU<Matrix>(At).rank() == At.rows()) {
          A = At;
          rhs.conservativeResize(rhs.size() + 1);
          rhs[rhs.size() - 1] = P.internal_rewards()[i];
        }
      }
      if (A.rows() > 0) {
        // minimum-norm move keeping the remaining freedom near x
        const Vector theta0 = x.head(d);
        const Vector delta = detail::pseudo_solve(A, rhs - A * theta0);
        Vector xv = x;
        xv.head(d) = theta0 + delta;
        const double jv = -P.negative_dual(xv, 0.0, false).value;
        const double jx = -P.negative_dual(x, 0.0, false).value;
        if (jv >= jx) {
          x = xv;
          const Vector vv = P.slack(x);
          const double tie = 1e-9;
          for (Index i = 0; i < n; ++i) {
            if (std::abs(vv[i]) <= tie) {
              free_weight[i] = wb.upper[i] > wb.lower[i] ? 1.0 : 0.0;
            } else {
              w[i] = vv[i] > 0.0 ? wb.upper[i] : wb.lower[i];
              free_weight[i] = 0.0;
            }
          }
        }
      }
    }
  } else if (P.model().box) {
    const auto& wb = *P.bounds();
    for (Index i = 0; i < n; ++i) free_weight[i] = (w[i] > wb.lower[i] && w[i] < wb.upper[i]) ? 1.0 : 0.0;
  } else {
    free_weight = w;
  }

  P.from_internal(x, rep.dual);
  rep.dual.dual_value = -P.negative_dual(x, 0.0, false).value * P.reward_scale();
  rep.dual.converged = res.converged;
  rep.wtilde = w;
  std::optional<Vector> ball_target;
  if (P.pure_box() && P.soft_dim() > 0 && rep.dual.nu.norm() > 1e-9 * P.reward_scale())
    ball_target = -std::sqrt(P.spec().radius) * rep.dual.nu / rep.dual.nu.norm();
  restore_feasibility(P, rep.wtilde, free_weight, ball_target ? &*ball_target : nullptr);
  certify(P, rep, opt);
  if (!rep.converged && P.soft_dim() > 0) {
    // A slack ball puts nu at the kink of its norm, where Newton stalls. The
    // relaxed optimum is optimal here whenever it already lies in the ball.
    KcmcSpec relaxed = P.spec();
    relaxed.quad.reset();
    relaxed.radius = 0.0;
    const DualProblem R(relaxed, P.model(), P.propensities(), P.rewards());
    SolveReport alt = solve_dual(R, opt);
    if (alt.converged && quad_value(P.spec(), alt.wtilde) <= P.spec().radius) {
      alt.dual.nu = Vector::Zero(P.soft_dim());
      certify(P, alt, opt);
      if (alt.converged) return alt;
    }
  }
  return rep;
}

/// Recovered weights w = w~/p from a dual point (selection at the exact conjugate).
inline Vector recover_primal(const DualProblem& P, const DualSolution& sol) {
  const Vector x = P.to_internal(sol.eta, sol.nu, sol.eta_f);
  return (P.selection(x, 0.0).array() / P.propensities().array()).matrix();
}

}  // namespace kcmc
