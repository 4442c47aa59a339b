#pragma once

// Empirical constraint systems on e = w~ - 1: hard orthogonality against a
// feature matrix, a soft GP quadratic ball, and the ZSB indicators.

#include "kcmc/kernels.hpp"
#include "kcmc/policy.hpp"
#include "kcmc/propensity.hpp"
#include "kcmc/quantile.hpp"

#include <Eigen/QR>

#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace kcmc {

enum class SpecVariant { hard_ortho, gp_soft_full, gp_soft_lowrank, zsb };

inline const char* to_string(SpecVariant v) {
  switch (v) {
    case SpecVariant::hard_ortho: return "hard_ortho";
    case SpecVariant::gp_soft_full: return "gp_soft_full";
    case SpecVariant::gp_soft_lowrank: return "gp_soft_lowrank";
    case SpecVariant::zsb: return "zsb";
  }
  return "?";
}

/// (1/n) Psi^T e = 0 for the hard columns; for GP variants additionally
/// e^T M e <= radius.
struct KcmcSpec {
  SpecVariant variant = SpecVariant::hard_ortho;
  FeatureMatrix psi;
  std::optional<QuadraticForm> quad;
  double radius = 0.0;
  double alpha = 0.05;
  std::string description;

  Index size() const { return psi.size() ? psi.size() : (quad ? quad->factor.cols() : 0); }
  bool soft() const { return quad.has_value(); }
};

/// Linearly independent columns of Psi (pivoted QR, tolerance relative to |Psi|).
struct RankReport {
  Index rank = 0;
  std::vector<Index> independent;
  std::vector<Index> dependent;
};

inline RankReport column_rank(const Matrix& psi, double rel_tol = 1e-8) {
  RankReport r;
  if (psi.cols() == 0) return r;
  Eigen::ColPivHouseholderQR<Matrix> qr(psi);
  const double norm = psi.norm();
  const auto R = qr.matrixR();
  const Index k = std::min(psi.rows(), psi.cols());
  for (Index j = 0; j < k; ++j)
    if (std::abs(R(j, j)) > rel_tol * norm) ++r.rank;
  const auto perm = qr.colsPermutation().indices();
  for (Index j = 0; j < psi.cols(); ++j) (j < r.rank ? r.independent : r.dependent).push_back(perm[j]);
  std::sort(r.independent.begin(), r.independent.end());
  std::sort(r.dependent.begin(), r.dependent.end());
  return r;
}

/// Drops columns that are (numerically) in the span of earlier ones, by
/// twice-reorthogonalized Gram-Schmidt.
inline FeatureMatrix prune_dependent(const FeatureMatrix& f, double rel_tol = 1e-8) {
  FeatureMatrix out;
  out.warnings = f.warnings;
  const Index n = f.size();
  Matrix Q(n, f.dim());
  std::vector<Index> keep;
  auto label = [&](Index j) {
    return j < static_cast<Index>(f.labels.size()) ? f.labels[static_cast<std::size_t>(j)] : std::to_string(j);
  };
  for (Index j = 0; j < f.dim(); ++j) {
    Vector v = f.psi.col(j);
    const double norm0 = v.norm();
    const Index k = static_cast<Index>(keep.size());
    for (int pass = 0; pass < 2; ++pass) v -= Q.leftCols(k) * (Q.leftCols(k).transpose() * v);
    if (norm0 > 0.0 && v.norm() > rel_tol * norm0) {
      Q.col(k) = v / v.norm();
      keep.push_back(j);
    } else {
      out.warnings.push_back("dropped dependent column " + label(j));
    }
  }
  out.psi.resize(n, static_cast<Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    out.psi.col(static_cast<Index>(k)) = f.psi.col(keep[k]);
    out.labels.push_back(label(keep[k]));
  }
  return out;
}

inline KcmcSpec build_hard_ortho(const FeatureMatrix& features) {
  const Index n = features.size();
  const Index D = features.dim();
  if (D >= n)
    throw Error("hard orthogonality with D >= n leaves no freedom: the feasible set collapses to the IPW weights");
  const auto rr = column_rank(features.psi);
  if (rr.rank < D) {
    std::ostringstream msg;
    msg << "feature matrix is rank deficient (rank " << rr.rank << " of " << D << "); dependent columns:";
    for (Index j : rr.dependent)
      msg << ' ' << (j < static_cast<Index>(features.labels.size()) ? features.labels[static_cast<std::size_t>(j)]
                                                                     : std::to_string(j));
    throw Error(msg.str());
  }
  KcmcSpec s;
  s.variant = SpecVariant::hard_ortho;
  s.psi = features;
  s.description = "hard(D=" + std::to_string(D) + ")";
  return s;
}

/// Columns 1{T=t}/p(T|X), one per action.
inline FeatureMatrix zsb_features(const Observations& obs, const PropensityEstimate& prop) {
  FeatureMatrix f;
  f.psi = Matrix::Zero(obs.size(), obs.num_actions);
  std::vector<Index> count(static_cast<std::size_t>(obs.num_actions), 0);
  for (Index i = 0; i < obs.size(); ++i) {
    const int t = obs.actions[static_cast<std::size_t>(i)];
    f.psi(i, t) = 1.0 / prop.probabilities[i];
    ++count[static_cast<std::size_t>(t)];
  }
  for (int t = 0; t < obs.num_actions; ++t) {
    if (count[static_cast<std::size_t>(t)] == 0)
      throw Error("ZSB constraints: action " + std::to_string(t) + " is absent from the sample");
    f.labels.push_back("zsb" + std::to_string(t));
  }
  return f;
}

inline KcmcSpec build_zsb(const Observations& obs, const PropensityEstimate& prop) {
  KcmcSpec s = build_hard_ortho(zsb_features(obs, prop));
  s.variant = SpecVariant::zsb;
  s.description = "zsb";
  return s;
}

/// Soft GP ball e^T M e <= chi2_dof(1 - alpha), optionally with hard columns.
inline KcmcSpec build_gp_soft(QuadraticForm quad, double alpha, bool full_rank, const FeatureMatrix& hard = {}) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error("GP credibility level alpha must lie in (0,1)");
  if (quad.dof < 1) throw Error("GP quadratic form has no retained directions");
  KcmcSpec s;
  s.variant = full_rank ? SpecVariant::gp_soft_full : SpecVariant::gp_soft_lowrank;
  s.radius = chi2_quantile(quad.dof, 1.0 - alpha);
  s.alpha = alpha;
  if (hard.dim() > 0) {
    if (hard.dim() >= hard.size()) throw Error("too many hard columns for the sample size");
    s.psi = hard;
  } else {
    s.psi.psi.resize(quad.factor.cols(), 0);
  }
  std::ostringstream d;
  d << (full_rank ? "gp_full" : "gp") << "(dof=" << quad.dof << ",alpha=" << alpha << ")";
  s.description = d.str();
  s.quad = std::move(quad);
  return s;
}

/// Ratios r_i = pi(T_i|X_i) / p(T_i|X_i) * Y_i.
inline Vector policy_rewards(const Observations& obs, const PropensityEstimate& prop, const Policy& policy) {
  const Vector pi = policy.taken_probabilities(obs.actions, obs.covariates);
  return (pi.array() / prop.probabilities.array() * obs.rewards.array()).matrix();
}

/// psi_1 = (pi/p) Q(T, X) with Q the fitted tau-quantile of Y given (T, X).
inline FeatureMatrix qb_feature(const Observations& obs, const PropensityEstimate& prop, const Policy& policy,
                                double tau) {
  const QuantileModel q = fit_quantile_model(obs, tau);
  const Vector qv = q.predict(obs);
  const Vector pi = policy.taken_probabilities(obs.actions, obs.covariates);
  FeatureMatrix f;
  f.psi = (pi.array() / prop.probabilities.array() * qv.array()).matrix();
  f.labels = {"qb"};
  f.warnings = q.warnings;
  if ((f.psi.array() == 0.0).all()) f.warnings.push_back("quantile-balancing feature is identically zero");
  return f;
}

/// tau = (1 - a)/(b - a) for a box; 1/(1 + Gamma) under Tan's model.
inline double qb_quantile_level(const BoxModel& model) { return tan_quantile_level(model.gamma_odds); }

inline Vector hard_residual(const KcmcSpec& spec, const Vector& wtilde) {
  if (spec.psi.dim() == 0) return Vector(0);
  return spec.psi.psi.transpose() * (wtilde.array() - 1.0).matrix() / static_cast<double>(wtilde.size());
}

inline double quad_value(const KcmcSpec& spec, const Vector& wtilde) {
  if (!spec.quad) return 0.0;
  return spec.quad->value((wtilde.array() - 1.0).matrix());
}

}  // namespace kcmc
