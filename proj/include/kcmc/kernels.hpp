#pragma once

// RBF kernels on (action, covariate) pairs, truncated spectra, kernel-PCA
// features and the Gaussian-process quadratic forms built from them.

#include "kcmc/data.hpp"
#include "kcmc/divergence.hpp"
#include "kcmc/propensity.hpp"
#include "kcmc/rng.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <boost/math/distributions/chi_squared.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace kcmc {

/// k((t,x),(t',x')) = exp(-(|x-x'|^2 + 2 s^2 [t != t']) / (2 l^2)), with the
/// action one-hot scaled by s (s <= 0 means s = l).
struct KernelSpec {
  double lengthscale = 1.0;
  double action_scale = 0.0;

  double effective_action_scale() const { return action_scale > 0.0 ? action_scale : lengthscale; }

  double operator()(int t1, const Eigen::Ref<const Vector>& x1, int t2, const Eigen::Ref<const Vector>& x2) const {
    double d2 = (x1 - x2).squaredNorm();
    if (t1 != t2) {
      const double s = effective_action_scale();
      d2 += 2.0 * s * s;
    }
    return std::exp(-d2 / (2.0 * lengthscale * lengthscale));
  }

  void validate() const {
    if (!(lengthscale > 0.0) || !std::isfinite(lengthscale)) throw Error("kernel lengthscale must be positive");
  }
};

inline Matrix gram_matrix(const KernelSpec& kernel, const Observations& obs) {
  kernel.validate();
  const Index n = obs.size();
  Matrix K(n, n);
  const Matrix xt = obs.covariates.transpose();
  for (Index j = 0; j < n; ++j) {
    K(j, j) = 1.0;
    for (Index i = j + 1; i < n; ++i) {
      const double v = kernel(obs.actions[static_cast<std::size_t>(i)], xt.col(i),
                              obs.actions[static_cast<std::size_t>(j)], xt.col(j));
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

/// Median pairwise Euclidean distance between covariate vectors, on at most
/// `max_points` rows drawn without replacement.
inline double median_heuristic(const Observations& obs, Index max_points = 2000, std::uint64_t seed = 0) {
  const Index n = obs.size();
  if (n < 2) throw Error("median heuristic needs at least two points");
  std::vector<Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});
  if (n > max_points) {
    auto rng = make_stream(seed, Stream::subsample);
    for (Index i = 0; i < max_points; ++i) {
      const auto j = i + static_cast<Index>(rng.uniform() * static_cast<double>(n - i));
      std::swap(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(std::min(j, n - 1))]);
    }
    rows.resize(static_cast<std::size_t>(max_points));
  }
  std::vector<double> dist;
  dist.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = a + 1; b < rows.size(); ++b)
      dist.push_back((obs.covariates.row(rows[a]) - obs.covariates.row(rows[b])).norm());
  const std::size_t m = dist.size();
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(m / 2), dist.end());
  double med = dist[m / 2];
  if (m % 2 == 0) med = 0.5 * (med + *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(m / 2)));
  if (!(med > 0.0)) throw Error("median heuristic is zero: covariates are (mostly) identical");
  return med;
}

struct SpectralDecomposition {
  Vector eigenvalues;   // descending, clamped at 0
  Matrix eigenvectors;  // n x D, orthonormal columns
  Index n = 0;
  double sigma2 = 1.0;
  double trace = 0.0;
  double tail_mass = 0.0;  // 1 - sum(lambda) / trace(K)
  KernelSpec kernel;

  Index rank() const { return eigenvalues.size(); }
};

inline void to_json(nlohmann::json& j, const SpectralDecomposition& s) {
  j["n"] = s.n;
  j["sigma2"] = s.sigma2;
  j["trace"] = s.trace;
  j["tail_mass"] = s.tail_mass;
  j["kernel"] = {{"family", "rbf"}, {"lengthscale", s.kernel.lengthscale}, {"action_scale", s.kernel.action_scale}};
  j["eigenvalues"] = std::vector<double>(s.eigenvalues.data(), s.eigenvalues.data() + s.eigenvalues.size());
  nlohmann::json cols = nlohmann::json::array();
  for (Index d = 0; d < s.eigenvectors.cols(); ++d) {
    const Vector c = s.eigenvectors.col(d);
    cols.push_back(std::vector<double>(c.data(), c.data() + c.size()));
  }
  j["eigenvectors"] = cols;
}

inline void from_json(const nlohmann::json& j, SpectralDecomposition& s) {
  s.n = j.at("n").get<Index>();
  s.sigma2 = j.at("sigma2").get<double>();
  s.trace = j.at("trace").get<double>();
  s.tail_mass = j.at("tail_mass").get<double>();
  s.kernel.lengthscale = j.at("kernel").at("lengthscale").get<double>();
  s.kernel.action_scale = j.at("kernel").at("action_scale").get<double>();
  const auto ev = j.at("eigenvalues").get<std::vector<double>>();
  s.eigenvalues = Eigen::Map<const Vector>(ev.data(), static_cast<Index>(ev.size()));
  const auto& cols = j.at("eigenvectors");
  s.eigenvectors.resize(s.n, static_cast<Index>(cols.size()));
  for (std::size_t d = 0; d < cols.size(); ++d) {
    const auto c = cols[d].get<std::vector<double>>();
    if (static_cast<Index>(c.size()) != s.n) throw Error("eigenvector length does not match n");
    s.eigenvectors.col(static_cast<Index>(d)) = Eigen::Map<const Vector>(c.data(), s.n);
  }
}

struct EigenOptions {
  Index dense_limit = 2000;  // above this, blocked subspace iteration
  int max_iterations = 1000;
  double tolerance = 1e-10;
  std::uint64_t seed = 0;
};

namespace detail {

inline void canonical_signs(Matrix& v) {
  for (Index d = 0; d < v.cols(); ++d) {
    for (Index i = 0; i < v.rows(); ++i) {
      if (std::abs(v(i, d)) > 1e-12) {
        if (v(i, d) < 0.0) v.col(d) *= -1.0;
        break;
      }
    }
  }
}

inline void top_dense(const Matrix& K, Index D, Vector& vals, Matrix& vecs) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(K);
  if (es.info() != Eigen::Success) throw Error("symmetric eigensolver failed");
  const Index n = K.rows();
  vals = es.eigenvalues().tail(D).reverse();
  vecs = es.eigenvectors().rightCols(D).rowwise().reverse();
  (void)n;
}

inline void top_subspace(const Matrix& K, Index D, const EigenOptions& opt, Vector& vals, Matrix& vecs) {
  const Index n = K.rows();
  const Index block = std::min(n, D + std::max<Index>(10, D / 2));
  auto rng = make_stream(opt.seed, Stream::eigen_init);
  Matrix Q(n, block);
  for (Index j = 0; j < block; ++j)
    for (Index i = 0; i < n; ++i) Q(i, j) = rng.normal();
  Q = Eigen::HouseholderQR<Matrix>(Q).householderQ() * Matrix::Identity(n, block);
  const double scale = std::max(K.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Matrix Z = K * Q;
    const Matrix H = Q.transpose() * Z;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (H + H.transpose()));
    const Matrix ritz = Q * es.eigenvectors().rowwise().reverse();
    const Vector theta = es.eigenvalues().reverse();
    const Matrix R = Z * es.eigenvectors().rowwise().reverse() - ritz * theta.asDiagonal();
    double worst = 0.0;
    for (Index d = 0; d < D; ++d) worst = std::max(worst, R.col(d).norm());
    vals = theta.head(D);
    vecs = ritz.leftCols(D);
    if (worst <= opt.tolerance * std::max(scale * static_cast<double>(n), 1.0)) return;
    Q = Eigen::HouseholderQR<Matrix>(Z).householderQ() * Matrix::Identity(n, block);
  }
}

}  // namespace detail

/// Top-D eigenpairs of a symmetric PSD matrix.
inline SpectralDecomposition truncated_eig(const Matrix& K, Index D, const EigenOptions& opt = {}) {
  const Index n = K.rows();
  if (K.cols() != n) throw Error("kernel matrix must be square");
  if (D < 1 || D > n) throw Error("truncation rank must satisfy 1 <= D <= n");
  if ((K - K.transpose()).cwiseAbs().maxCoeff() > 1e-8) throw Error("kernel matrix is not symmetric");
  SpectralDecomposition s;
  s.n = n;
  if (n <= opt.dense_limit) detail::top_dense(K, D, s.eigenvalues, s.eigenvectors);
  else detail::top_subspace(K, D, opt, s.eigenvalues, s.eigenvectors);
  for (Index d = 0; d < D; ++d)
    if (s.eigenvalues[d] < 0.0) {
      if (s.eigenvalues[d] < -1e-10 * std::max(1.0, std::abs(s.eigenvalues[0])))
        throw Error("kernel matrix has a significantly negative eigenvalue");
      s.eigenvalues[d] = 0.0;
    }
  detail::canonical_signs(s.eigenvectors);
  s.trace = K.trace();
  s.tail_mass = s.trace > 0.0 ? std::max(0.0, 1.0 - s.eigenvalues.sum() / s.trace) : 0.0;
  return s;
}

struct FeatureMatrix {
  Matrix psi;  // n x D
  std::vector<std::string> labels;
  std::vector<std::string> warnings;

  Index size() const { return psi.rows(); }
  Index dim() const { return psi.cols(); }
};

/// Column concatenation [a | b].
inline FeatureMatrix concat(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.dim() == 0) return b;
  if (b.dim() == 0) return a;
  if (a.size() != b.size()) throw Error("feature matrices disagree on the sample count");
  FeatureMatrix out;
  out.psi.resize(a.size(), a.dim() + b.dim());
  out.psi << a.psi, b.psi;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.warnings = a.warnings;
  out.warnings.insert(out.warnings.end(), b.warnings.begin(), b.warnings.end());
  return out;
}

/// Psi = sqrt(n) V~, dropping directions with lambda_d < 1e-12 lambda_1.
inline FeatureMatrix kpca_features(const SpectralDecomposition& dec) {
  FeatureMatrix f;
  const double cut = dec.rank() > 0 ? 1e-12 * dec.eigenvalues[0] : 0.0;
  std::vector<Index> keep;
  for (Index d = 0; d < dec.rank(); ++d) {
    if (dec.eigenvalues[d] > cut && dec.eigenvalues[d] > 0.0) keep.push_back(d);
  }
  if (static_cast<Index>(keep.size()) < dec.rank())
    f.warnings.push_back("dropped " + std::to_string(dec.rank() - static_cast<Index>(keep.size())) +
                         " zero-eigenvalue direction(s)");
  f.psi.resize(dec.n, static_cast<Index>(keep.size()));
  const double root_n = std::sqrt(static_cast<double>(dec.n));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    f.psi.col(static_cast<Index>(k)) = root_n * dec.eigenvectors.col(keep[k]);
    f.labels.push_back("kpca" + std::to_string(keep[k] + 1));
  }
  return f;
}

/// e -> e^T M e stored as |G e|^2, with G an m x n factor.
struct QuadraticForm {
  Matrix factor;
  Index dof = 0;

  double value(const Vector& e) const { return (factor * e).squaredNorm(); }
  Vector gradient(const Vector& e) const { return 2.0 * (factor.transpose() * (factor * e)); }
};

/// M = (K+s2 I)^-1 K (K - K (K+s2 I)^-1 K + 1e-10 I)^-1 K (K+s2 I)^-1,
/// factored through Cholesky solves.
inline QuadraticForm gp_quadratic_full(const Matrix& K, double sigma2) {
  if (!(sigma2 > 0.0)) throw Error("GP noise variance must be positive");
  const Index n = K.rows();
  const Matrix I = Matrix::Identity(n, n);
  Eigen::LLT<Matrix> outer(K + sigma2 * I);
  if (outer.info() != Eigen::Success) throw Error("Cholesky of K + sigma2 I failed");
  const Matrix A = outer.solve(K);  // (K+s2 I)^-1 K
  Matrix B = K - K * A + 1e-10 * I;
  B = 0.5 * (B + B.transpose());
  Eigen::LLT<Matrix> mid(B);
  if (mid.info() != Eigen::Success) throw Error("Cholesky of the GP posterior covariance failed");
  QuadraticForm q;
  // e^T A B^-1 A^T e = |L^-1 A^T e|^2 with B = L L^T
  q.factor = mid.matrixL().solve(A.transpose());
  q.dof = n;
  return q;
}

/// (1/s2) sum_d lambda_d/(lambda_d+s2) (v_d^T e)^2 over the retained spectrum.
inline QuadraticForm gp_quadratic_lowrank(const SpectralDecomposition& dec) {
  if (!(dec.sigma2 > 0.0)) throw Error("GP noise variance must be positive");
  const double cut = dec.rank() > 0 ? 1e-12 * dec.eigenvalues[0] : 0.0;
  std::vector<Index> keep;
  for (Index d = 0; d < dec.rank(); ++d)
    if (dec.eigenvalues[d] > cut && dec.eigenvalues[d] > 0.0) keep.push_back(d);
  QuadraticForm q;
  q.factor.resize(static_cast<Index>(keep.size()), dec.n);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const double lam = dec.eigenvalues[keep[k]];
    const double c = lam / (dec.sigma2 * (lam + dec.sigma2));
    q.factor.row(static_cast<Index>(k)) = std::sqrt(c) * dec.eigenvectors.col(keep[k]).transpose();
  }
  q.dof = static_cast<Index>(keep.size());
  return q;
}

/// Upper (level)-quantile of the chi-squared distribution.
inline double chi2_quantile(Index dof, double level) {
  if (dof < 1) throw Error("chi-squared degrees of freedom must be >= 1");
  if (!(level > 0.0 && level < 1.0)) throw Error("chi-squared level must lie in (0,1)");
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(static_cast<double>(dof)), level);
}

struct Sigma2Choice {
  double value = 1.0;
  bool fallback = false;
  std::string warning;
};

/// Half-width-squared bound on Var[w~ - 1 | t, x] implied by the box; for
/// models without a box, the configured fallback.
inline Sigma2Choice default_sigma2(const SensitivityModel& model, const PropensityEstimate& prop,
                                   double fallback = 1.0, double floor = 1e-6) {
  if (!model.box) {
    return {fallback, true, "no box component: sigma2 cannot be bounded, using fallback " + std::to_string(fallback)};
  }
  const auto wb = box_weight_bounds(*model.box, prop.probabilities);
  double s2 = 0.0;
  for (Index i = 0; i < wb.lower.size(); ++i) {
    const double h = 0.5 * (wb.upper[i] - wb.lower[i]);
    s2 = std::max(s2, h * h);
  }
  return {std::max(s2, floor), false, ""};
}

}  // namespace kcmc
